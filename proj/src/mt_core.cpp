#include "d3t/mt_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d3t/errors.hpp"

namespace d3t {

ParamVector ema_update(const ParamVector& teacher, const ParamVector& student, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("ema alpha must lie in (0,1)");
    if (!teacher.same_layout(student) || teacher.size() != student.size())
        throw ConfigError("ema_update: teacher and student layouts differ");
    ParamVector out = teacher;
    const double beta = 1.0 - alpha;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = alpha * teacher.values[i] + beta * student.values[i];
    check_finite(out, "ema_update");
    return out;
}

void PseudoLabelPolicy::validate() const {
    if (mode == Mode::ScoreThreshold && !(threshold >= 0.0 && threshold <= 1.0))
        throw ConfigError("pseudo-label threshold must lie in [0,1]");
    if (mode == Mode::TopPercent && !(top_fraction > 0.0 && top_fraction <= 1.0))
        throw ConfigError("pseudo-label top_fraction must lie in (0,1]");
}

std::size_t top_fraction_count(std::size_t pool, double fraction) {
    // The epsilon keeps products like 0.07 * 100 from rounding up past an integer.
    const double want = std::ceil(fraction * static_cast<double>(pool) - 1e-9);
    return std::min(pool, static_cast<std::size_t>(std::max(0.0, want)));
}

std::vector<DetectionSet> apply_policy(std::vector<DetectionSet> per_image,
                                       const PseudoLabelPolicy& policy) {
    policy.validate();
    if (policy.mode == PseudoLabelPolicy::Mode::ScoreThreshold) {
        for (auto& dets : per_image) {
            std::erase_if(dets, [&](const Detection& d) { return d.score < policy.threshold; });
        }
        return per_image;
    }

    struct Ref {
        std::size_t image;
        std::size_t index;
        double score;
    };
    std::vector<Ref> pool;
    for (std::size_t i = 0; i < per_image.size(); ++i)
        for (std::size_t j = 0; j < per_image[i].size(); ++j)
            pool.push_back({i, j, per_image[i][j].score});
    std::sort(pool.begin(), pool.end(), [](const Ref& a, const Ref& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return a.index < b.index;
    });
    pool.resize(top_fraction_count(pool.size(), policy.top_fraction));

    std::vector<std::vector<bool>> keep(per_image.size());
    for (std::size_t i = 0; i < per_image.size(); ++i) keep[i].assign(per_image[i].size(), false);
    for (const auto& r : pool) keep[r.image][r.index] = true;

    for (std::size_t i = 0; i < per_image.size(); ++i) {
        DetectionSet kept;
        for (std::size_t j = 0; j < per_image[i].size(); ++j)
            if (keep[i][j]) kept.push_back(per_image[i][j]);
        per_image[i] = std::move(kept);
    }
    return per_image;
}

DetectionSet generate_pseudo_labels(const Detector& detector, const ParamVector& teacher,
                                    const Image& weak_view, const PseudoLabelPolicy& policy,
                                    const DecodeConfig& decode) {
    std::vector<DetectionSet> one{detector.detect(teacher, weak_view, decode)};
    return std::move(apply_policy(std::move(one), policy).front());
}

std::vector<DetectionSet> generate_pseudo_labels(const Detector& detector,
                                                 const ParamVector& teacher,
                                                 std::span<const Image> weak_views,
                                                 const PseudoLabelPolicy& policy,
                                                 const DecodeConfig& decode) {
    std::vector<DetectionSet> all;
    all.reserve(weak_views.size());
    for (const auto& v : weak_views) all.push_back(detector.detect(teacher, v, decode));
    return apply_policy(std::move(all), policy);
}

DualPseudoLabels merge_dual_pseudo_labels(DetectionSet from_rgb, DetectionSet from_thermal) {
    for (auto& d : from_rgb) d.source = TeacherSource::RGB;
    for (auto& d : from_thermal) d.source = TeacherSource::Thermal;
    return DualPseudoLabels{std::move(from_rgb), std::move(from_thermal)};
}

DualLoss dual_unsupervised_loss(const Detector& detector, const ParamVector& student,
                                const Image& strong_view, const DualPseudoLabels& pseudo) {
    const LossResult rgb = detector.unsupervised_loss(student, strong_view, pseudo.from_rgb);
    const LossResult thr = detector.unsupervised_loss(student, strong_view, pseudo.from_thermal);
    DualLoss out;
    out.rgb_term = rgb.loss;
    out.thermal_term = thr.loss;
    out.grad.resize(rgb.grad.size());
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = rgb.grad[i] + thr.grad[i];
    return out;
}

}  // namespace d3t
