#include "d3t/eval.hpp"

#include <algorithm>
#include <set>

#include "d3t/errors.hpp"
#include "d3t/parallel.hpp"

namespace d3t {

double iou(const Box& a, const Box& b) {
    if (!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0))
        throw ConfigError("iou needs boxes with positive area");
    const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
    const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

double average_precision(std::span<const DetectionSet> detections,
                         std::span<const std::vector<GroundTruthObject>> ground_truth,
                         double iou_threshold) {
    if (detections.size() != ground_truth.size())
        throw ConfigError("average_precision: detections and ground truth cover different images");

    std::size_t n_gt = 0;
    for (const auto& g : ground_truth) n_gt += g.size();
    if (n_gt == 0) return 0.0;

    struct Ranked {
        double score;
        std::size_t image;
        std::size_t index;
    };
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < detections.size(); ++i)
        for (std::size_t j = 0; j < detections[i].size(); ++j)
            ranked.push_back({detections[i][j].score, i, j});
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });

    std::vector<std::vector<bool>> matched(ground_truth.size());
    for (std::size_t i = 0; i < ground_truth.size(); ++i) matched[i].assign(ground_truth[i].size(), false);

    std::vector<double> precision;
    std::vector<double> recall;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < ranked.size(); ++k) {
        const auto& r = ranked[k];
        const Box& box = detections[r.image][r.index].box;
        const auto& gts = ground_truth[r.image];
        int best = -1;
        double best_iou = iou_threshold;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (matched[r.image][g]) continue;
            const double v = iou(box, gts[g].box);
            if (v >= best_iou && (best < 0 || v > best_iou)) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            matched[r.image][static_cast<std::size_t>(best)] = true;
            ++tp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
    }

    // Precision envelope from the right, then sample at 101 recall levels.
    for (std::size_t k = precision.size(); k-- > 1;)
        precision[k - 1] = std::max(precision[k - 1], precision[k]);

    double sum = 0.0;
    std::size_t k = 0;
    for (int level = 0; level <= 100; ++level) {
        const double r = level / 100.0;
        while (k < recall.size() && recall[k] < r) ++k;
        if (k < recall.size()) sum += precision[k];
    }
    return sum / 101.0;
}

EvalReport evaluate_detections(std::span<const DetectionSet> detections,
                               std::span<const std::vector<GroundTruthObject>> ground_truth,
                               double iou_threshold) {
    if (detections.size() != ground_truth.size())
        throw ConfigError("evaluate: detections and ground truth cover different images");
    EvalReport report;
    report.n_images = ground_truth.size();

    std::set<int> classes;
    for (const auto& g : ground_truth) {
        report.n_gt += g.size();
        for (const auto& o : g) classes.insert(o.class_id);
    }
    for (const auto& d : detections) report.n_detections += d.size();

    for (int c : classes) {
        std::vector<DetectionSet> dets(detections.size());
        std::vector<std::vector<GroundTruthObject>> gts(ground_truth.size());
        for (std::size_t i = 0; i < detections.size(); ++i) {
            for (const auto& d : detections[i])
                if (d.class_id == c) dets[i].push_back(d);
            for (const auto& o : ground_truth[i])
                if (o.class_id == c) gts[i].push_back(o);
        }
        report.per_class_ap[c] = average_precision(dets, gts, iou_threshold);
    }
    if (!report.per_class_ap.empty()) {
        double sum = 0.0;
        for (const auto& [c, ap] : report.per_class_ap) sum += ap;
        report.map = sum / static_cast<double>(report.per_class_ap.size());
    }
    return report;
}

EvalReport evaluate(const Detector& detector, const ParamVector& params,
                    std::span<const SceneSample> test_set, const DecodeConfig& decode,
                    double iou_threshold, int threads) {
    if (test_set.empty()) throw ConfigError("evaluate: empty test set");
    decode.validate();

    // Rank images by sample id so the report does not depend on input order.
    std::vector<std::size_t> order(test_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return test_set[a].sample_id < test_set[b].sample_id;
    });

    std::vector<DetectionSet> dets(test_set.size());
    std::vector<std::vector<GroundTruthObject>> gts(test_set.size());
    parallel_for(order.size(), threads, [&](std::size_t k) {
        const auto& s = test_set[order[k]];
        dets[k] = detector.detect(params, s.image, decode);
        gts[k] = s.objects;
    });
    return evaluate_detections(dets, gts, iou_threshold);
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json per_class = nlohmann::json::object();
    for (const auto& [c, ap] : r.per_class_ap) per_class[std::to_string(c)] = ap;
    return {{"per_class_ap", per_class},
            {"map", r.map},
            {"n_images", r.n_images},
            {"n_gt", r.n_gt},
            {"n_detections", r.n_detections}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    for (const auto& [k, v] : j.at("per_class_ap").items()) r.per_class_ap[std::stoi(k)] = v.get<double>();
    r.map = j.at("map").get<double>();
    r.n_images = j.at("n_images").get<std::size_t>();
    r.n_gt = j.at("n_gt").get<std::size_t>();
    r.n_detections = j.at("n_detections").get<std::size_t>();
    return r;
}

}  // namespace d3t
