#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "d3t/detector.hpp"
#include "d3t/eval.hpp"
#include "d3t/mt_core.hpp"
#include "d3t/rng.hpp"
#include "d3t/schedule.hpp"
#include "d3t/synthgen.hpp"

namespace d3t {

enum class Phase { BurnIn, Zigzag };

/// Dual: one teacher per domain. Shared: a single teacher fills both slots and
/// every EMA update lands on it.
enum class TeacherMode { Dual, Shared };

/// Zigzag: one domain per iteration, chosen by domain_at. Combined: every
/// iteration sums a source supervised term and a target unsupervised term.
enum class DomainMode { Zigzag, Combined };

enum class Regime { D3T, MeanTeacher, SourceOnly };

const char* to_string(Phase p);
const char* to_string(Regime r);
Regime regime_from_string(const std::string& s);

struct TrainerConfig {
    double learning_rate = 0.005;
    int batch_size = 8;
    std::int64_t total_iterations = 40000;
    std::int64_t burn_in_iterations = 8000;
    /// Budgets only; total/burn-in come from the fields above (see schedule()).
    ZigzagConfig zigzag = flir_zigzag();
    LambdaPolicy lambda;
    double ema_alpha = 0.9996;
    TeacherMode teacher_mode = TeacherMode::Dual;
    DomainMode domain_mode = DomainMode::Zigzag;
    /// Filter for pseudo-labels on target images (both teachers).
    PseudoLabelPolicy thermal_policy = PseudoLabelPolicy::score_threshold(0.7);
    /// Filter for pseudo-labels on source images in the lambda-weighted branch.
    PseudoLabelPolicy rgb_policy = PseudoLabelPolicy::top_percent(0.01);
    DecodeConfig pseudo_decode{0.05, 0.5};
    AugmentConfig augment;
    std::uint64_t seed = 0;

    [[nodiscard]] ZigzagConfig schedule() const;
    void validate() const;

    friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

/// D3T: zigzag domains (teacher_mode left as configured). MeanTeacher: shared
/// teacher, combined loss. SourceOnly: burn-in runs to total_iterations.
void apply_regime(TrainerConfig& cfg, Regime regime);
Regime regime_of(const TrainerConfig& cfg);

struct MetricRow {
    std::int64_t iter = 0;
    Phase phase = Phase::BurnIn;
    std::string domain;
    double lambda = 0.0;
    double loss_total = 0.0;
    double loss_sup = 0.0;
    double loss_unsup_rgb_teacher = 0.0;
    double loss_unsup_thr_teacher = 0.0;
    std::int64_t n_pseudo_rgb = 0;
    std::int64_t n_pseudo_thr = 0;

    friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

struct EvalRow {
    std::int64_t iter = 0;
    EvalReport student;
    std::optional<EvalReport> teacher_rgb;
    std::optional<EvalReport> teacher_thr;

    friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

nlohmann::json to_json(const MetricRow& r);
nlohmann::json to_json(const EvalRow& r);

struct TrainerState {
    ParamVector student;
    std::optional<TeacherBank> teachers;
    std::int64_t iteration = 0;
    Phase phase = Phase::BurnIn;
    RngKey rng;
    std::int64_t source_cursor = 0;
    std::int64_t target_cursor = 0;
    std::vector<MetricRow> metric_log;
    std::vector<EvalRow> eval_log;
};

struct RunOptions {
    /// Labeled target-domain test split; empty disables evaluation.
    std::span<const SceneSample> test_set;
    std::int64_t eval_interval = 0;
    DecodeConfig eval_decode{0.05, 0.5};
    double eval_iou = 0.5;
    /// Called after every completed iteration.
    std::function<void(const TrainerState&)> on_step;
};

/// Draw k of a domain's sampler is position k % n of the permutation for epoch k / n.
class BatchSampler {
public:
    BatchSampler(std::size_t n, RngKey key);
    [[nodiscard]] std::vector<std::size_t> take(std::int64_t cursor, int count) const;

private:
    std::size_t n_;
    RngKey key_;
    mutable std::int64_t cached_epoch_ = -1;
    mutable std::vector<std::size_t> perm_;
};

class Trainer {
public:
    Trainer(TrainerConfig cfg, Detector detector, int threads = 1);

    [[nodiscard]] const TrainerConfig& config() const { return cfg_; }
    [[nodiscard]] const Detector& detector() const { return detector_; }

    [[nodiscard]] TrainerState init_state() const;

    /// Supervised step on strongly augmented labeled source samples.
    void burn_in_step(TrainerState& state, std::span<const SceneSample> batch) const;
    /// Both teachers become bitwise copies of the student.
    void transition_to_zigzag(TrainerState& state) const;
    /// Sum of the two teachers' unsupervised losses; EMA on the thermal teacher.
    void thermal_step(TrainerState& state, std::span<const UnlabeledSample> batch) const;
    /// Supervised loss + lambda * (two unsupervised terms); EMA on the RGB teacher.
    void rgb_step(TrainerState& state, std::span<const SceneSample> batch) const;
    /// Source supervised + target unsupervised in one update; EMA every iteration.
    void combined_step(TrainerState& state, std::span<const SceneSample> source_batch,
                       std::span<const UnlabeledSample> target_batch) const;

    /// Whole schedule: burn-in, transition, then zigzag or combined steps.
    TrainerState run(std::span<const SceneSample> source, std::span<const UnlabeledSample> target,
                     const RunOptions& options = {}) const;

    [[nodiscard]] EvalRow evaluate_state(const TrainerState& state,
                                         std::span<const SceneSample> test_set,
                                         const DecodeConfig& decode, double iou) const;

private:
    struct BatchLoss;

    BatchLoss supervised_batch(const TrainerState& state, std::span<const SceneSample> batch) const;
    void apply_sgd(TrainerState& state, const std::vector<double>& grad) const;
    void ema_into(TrainerState& state, TeacherId which) const;

    TrainerConfig cfg_;
    Detector detector_;
    int threads_;
};

}  // namespace d3t
