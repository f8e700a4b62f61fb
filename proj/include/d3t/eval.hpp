#pragma once

#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "d3t/detector.hpp"

namespace d3t {

struct EvalReport {
    std::map<int, double> per_class_ap;
    double map = 0.0;
    std::size_t n_images = 0;
    std::size_t n_gt = 0;
    std::size_t n_detections = 0;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Single-class AP. Detections are ranked by (score desc, image asc, index asc);
/// each is matched to the unmatched ground truth in its image with the highest
/// IoU >= iou_threshold. 101-point interpolated precision. Class ids are ignored;
/// filter by class before calling.
double average_precision(std::span<const DetectionSet> detections,
                         std::span<const std::vector<GroundTruthObject>> ground_truth,
                         double iou_threshold = 0.5);

/// Per-class AP over the classes present in the ground truth, and their mean.
EvalReport evaluate_detections(std::span<const DetectionSet> detections,
                               std::span<const std::vector<GroundTruthObject>> ground_truth,
                               double iou_threshold = 0.5);

/// Decodes every test image (no augmentation) and scores the result.
/// `threads` only changes wall time, never the report.
EvalReport evaluate(const Detector& detector, const ParamVector& params,
                    std::span<const SceneSample> test_set, const DecodeConfig& decode,
                    double iou_threshold = 0.5, int threads = 1);

}  // namespace d3t
