#pragma once

#include <span>
#include <vector>

#include "d3t/detector.hpp"

namespace d3t {

/// Mean-teacher weight averaging: alpha * teacher + (1 - alpha) * student.
/// Inputs are left untouched. Throws ConfigError on layout mismatch or alpha outside (0,1).
ParamVector ema_update(const ParamVector& teacher, const ParamVector& student, double alpha);

struct TeacherBank {
    ParamVector rgb_teacher;
    ParamVector thermal_teacher;
    double ema_alpha = 0.9996;
};

struct PseudoLabelPolicy {
    enum class Mode { ScoreThreshold, TopPercent };

    Mode mode = Mode::ScoreThreshold;
    double threshold = 0.7;
    double top_fraction = 0.01;

    static PseudoLabelPolicy score_threshold(double t) { return {Mode::ScoreThreshold, t, 1.0}; }
    static PseudoLabelPolicy top_percent(double f) { return {Mode::TopPercent, 0.0, f}; }

    void validate() const;
    friend bool operator==(const PseudoLabelPolicy&, const PseudoLabelPolicy&) = default;
};

/// Number of detections a TopPercent policy keeps from a pool of `pool` candidates.
std::size_t top_fraction_count(std::size_t pool, double fraction);

/// Applies `policy` to a candidate pool spread over several images. TopPercent
/// ranks the whole pool (score desc, image asc, index asc) and keeps the
/// ceil(fraction * n) best. Per-image order is preserved.
std::vector<DetectionSet> apply_policy(std::vector<DetectionSet> per_image,
                                       const PseudoLabelPolicy& policy);

/// Teacher detections on one weakly augmented view, filtered by `policy`
/// with the image as the whole pool.
DetectionSet generate_pseudo_labels(const Detector& detector, const ParamVector& teacher,
                                    const Image& weak_view, const PseudoLabelPolicy& policy,
                                    const DecodeConfig& decode);

/// Batch form: the TopPercent pool spans the whole batch.
std::vector<DetectionSet> generate_pseudo_labels(const Detector& detector,
                                                 const ParamVector& teacher,
                                                 std::span<const Image> weak_views,
                                                 const PseudoLabelPolicy& policy,
                                                 const DecodeConfig& decode);

/// The two teachers' pseudo-labels stay separate loss targets.
struct DualPseudoLabels {
    DetectionSet from_rgb;
    DetectionSet from_thermal;
};

DualPseudoLabels merge_dual_pseudo_labels(DetectionSet from_rgb, DetectionSet from_thermal);

struct DualLoss {
    double rgb_term = 0.0;
    double thermal_term = 0.0;
    std::vector<double> grad;  // gradient of rgb_term + thermal_term

    [[nodiscard]] double total() const { return rgb_term + thermal_term; }
};

/// One unsupervised loss per teacher on the student's strong view, summed.
DualLoss dual_unsupervised_loss(const Detector& detector, const ParamVector& student,
                                const Image& strong_view, const DualPseudoLabels& pseudo);

}  // namespace d3t
