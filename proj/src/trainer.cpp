#include "d3t/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d3t/errors.hpp"
#include "d3t/parallel.hpp"

namespace d3t {

namespace {

// Far above any sample id, so trainer streams never alias per-sample render streams.
constexpr std::uint64_t kInitStream = 1ULL << 40;
constexpr std::uint64_t kTrainStream = (1ULL << 40) + 1;
constexpr std::uint64_t kSourceSampler = (1ULL << 40) + 2;
constexpr std::uint64_t kTargetSampler = (1ULL << 40) + 3;

void require_finite(double v, const TrainerState& state, const char* what) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string(what) + " is not finite at iteration " +
                           std::to_string(state.iteration));
    }
}

std::int64_t count(const std::vector<DetectionSet>& sets) {
    std::int64_t n = 0;
    for (const auto& s : sets) n += static_cast<std::int64_t>(s.size());
    return n;
}

void accumulate(std::vector<double>& into, const std::vector<double>& g, double scale) {
    if (into.empty()) into.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) into[i] += scale * g[i];
}

}  // namespace

const char* to_string(Phase p) { return p == Phase::BurnIn ? "burn_in" : "zigzag"; }

const char* to_string(Regime r) {
    switch (r) {
        case Regime::D3T: return "d3t";
        case Regime::MeanTeacher: return "mt_baseline";
        case Regime::SourceOnly: return "source_only";
    }
    return "?";
}

Regime regime_from_string(const std::string& s) {
    if (s == "d3t") return Regime::D3T;
    if (s == "mt_baseline") return Regime::MeanTeacher;
    if (s == "source_only") return Regime::SourceOnly;
    throw ConfigError("unknown regime '" + s + "'");
}

ZigzagConfig TrainerConfig::schedule() const {
    ZigzagConfig z = zigzag;
    z.total_iterations = total_iterations;
    z.burn_in_iterations = burn_in_iterations;
    return z;
}

void TrainerConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be finite and >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (domain_mode == DomainMode::Combined && batch_size < 2)
        throw ConfigError("combined mode needs batch_size >= 2 (source and target halves)");
    if (burn_in_iterations < 0 || total_iterations < burn_in_iterations)
        throw ConfigError("need 0 <= burn_in_iterations <= total_iterations");
    schedule().validate();
    lambda.validate();
    if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw ConfigError("ema_alpha must lie in (0,1)");
    thermal_policy.validate();
    rgb_policy.validate();
    pseudo_decode.validate();
    augment.validate();
}

void apply_regime(TrainerConfig& cfg, Regime regime) {
    switch (regime) {
        case Regime::D3T:
            cfg.domain_mode = DomainMode::Zigzag;
            break;
        case Regime::MeanTeacher:
            cfg.teacher_mode = TeacherMode::Shared;
            cfg.domain_mode = DomainMode::Combined;
            break;
        case Regime::SourceOnly:
            cfg.burn_in_iterations = cfg.total_iterations;
            break;
    }
}

Regime regime_of(const TrainerConfig& cfg) {
    if (cfg.burn_in_iterations == cfg.total_iterations) return Regime::SourceOnly;
    return cfg.domain_mode == DomainMode::Combined ? Regime::MeanTeacher : Regime::D3T;
}

nlohmann::json to_json(const MetricRow& r) {
    return {{"type", "train"},
            {"iter", r.iter},
            {"phase", to_string(r.phase)},
            {"domain", r.domain},
            {"lambda", r.lambda},
            {"loss_total", r.loss_total},
            {"loss_sup", r.loss_sup},
            {"loss_unsup_rgb_teacher", r.loss_unsup_rgb_teacher},
            {"loss_unsup_thr_teacher", r.loss_unsup_thr_teacher},
            {"n_pseudo_rgb", r.n_pseudo_rgb},
            {"n_pseudo_thr", r.n_pseudo_thr}};
}

nlohmann::json to_json(const EvalRow& r) {
    auto opt = [](const std::optional<EvalReport>& e) {
        return e ? to_json(*e) : nlohmann::json(nullptr);
    };
    return {{"type", "eval"},
            {"iter", r.iter},
            {"student", to_json(r.student)},
            {"teacher_rgb", opt(r.teacher_rgb)},
            {"teacher_thr", opt(r.teacher_thr)}};
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::size_t n, RngKey key) : n_(n), key_(key) {
    if (n_ == 0) throw ConfigError("cannot sample from an empty dataset");
}

std::vector<std::size_t> BatchSampler::take(std::int64_t cursor, int count) const {
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
        const auto draw = static_cast<std::size_t>(cursor + k);
        const auto epoch = static_cast<std::int64_t>(draw / n_);
        if (epoch != cached_epoch_) {
            perm_.resize(n_);
            std::iota(perm_.begin(), perm_.end(), std::size_t{0});
            auto eng = key_.child(static_cast<std::uint64_t>(epoch)).engine();
            std::shuffle(perm_.begin(), perm_.end(), eng);
            cached_epoch_ = epoch;
        }
        out.push_back(perm_[draw % n_]);
    }
    return out;
}

// ---------------------------------------------------------------------------

struct Trainer::BatchLoss {
    double loss = 0.0;
    std::vector<double> grad;
};

Trainer::Trainer(TrainerConfig cfg, Detector detector, int threads)
    : cfg_(std::move(cfg)), detector_(std::move(detector)), threads_(std::max(threads, 1)) {
    cfg_.validate();
}

TrainerState Trainer::init_state() const {
    TrainerState s;
    s.student = detector_.init_params(RngKey(cfg_.seed).child(kInitStream).value());
    s.rng = RngKey(cfg_.seed).child(kTrainStream);
    s.phase = Phase::BurnIn;
    return s;
}

void Trainer::apply_sgd(TrainerState& state, const std::vector<double>& grad) const {
    for (std::size_t i = 0; i < grad.size(); ++i)
        state.student.values[i] -= cfg_.learning_rate * grad[i];
    check_finite(state.student, "student after SGD");
}

void Trainer::ema_into(TrainerState& state, TeacherId which) const {
    auto& bank = *state.teachers;
    if (cfg_.teacher_mode == TeacherMode::Shared) {
        bank.thermal_teacher = ema_update(bank.thermal_teacher, state.student, bank.ema_alpha);
        bank.rgb_teacher = bank.thermal_teacher;
        return;
    }
    auto& target = which == TeacherId::ThermalTeacher ? bank.thermal_teacher : bank.rgb_teacher;
    target = ema_update(target, state.student, bank.ema_alpha);
}

Trainer::BatchLoss Trainer::supervised_batch(const TrainerState& state,
                                             std::span<const SceneSample> batch) const {
    const RngKey step_key = state.rng.child(static_cast<std::uint64_t>(state.iteration));
    std::vector<LossResult> per(batch.size());
    parallel_for(batch.size(), threads_, [&](std::size_t j) {
        const SceneSample view = strong_augment(batch[j], step_key.child(j), cfg_.augment);
        per[j] = detector_.supervised_loss(state.student, view.image, view.objects);
    });
    BatchLoss out;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& r : per) {
        out.loss += r.loss * scale;
        accumulate(out.grad, r.grad, scale);
    }
    return out;
}

void Trainer::burn_in_step(TrainerState& state, std::span<const SceneSample> batch) const {
    if (state.phase != Phase::BurnIn) throw ContractError("burn_in_step outside the burn-in phase");
    if (batch.empty()) throw ContractError("burn_in_step needs a non-empty batch");
    const BatchLoss sup = supervised_batch(state, batch);
    require_finite(sup.loss, state, "burn-in loss");
    apply_sgd(state, sup.grad);

    MetricRow row;
    row.iter = state.iteration;
    row.phase = Phase::BurnIn;
    row.domain = "source";
    row.loss_total = sup.loss;
    row.loss_sup = sup.loss;
    state.metric_log.push_back(row);
    ++state.iteration;
}

void Trainer::transition_to_zigzag(TrainerState& state) const {
    if (state.phase != Phase::BurnIn || state.teachers)
        throw ContractError("transition_to_zigzag called twice");
    if (state.iteration != cfg_.burn_in_iterations)
        throw ContractError("transition_to_zigzag before burn-in finished");
    state.teachers = TeacherBank{state.student, state.student, cfg_.ema_alpha};
    state.phase = Phase::Zigzag;
}

void Trainer::thermal_step(TrainerState& state, std::span<const UnlabeledSample> batch) const {
    if (state.phase != Phase::Zigzag || !state.teachers)
        throw ContractError("thermal_step outside the zigzag phase");
    if (cfg_.domain_mode == DomainMode::Zigzag &&
        domain_at(cfg_.schedule(), state.iteration) != TrainDomain::Thermal)
        throw ContractError("thermal_step at an RGB iteration");
    if (batch.empty()) throw ContractError("thermal_step needs a non-empty batch");

    const auto& bank = *state.teachers;
    const RngKey step_key = state.rng.child(static_cast<std::uint64_t>(state.iteration));
    const std::size_t n = batch.size();

    std::vector<Image> strong(n);
    std::vector<DetectionSet> raw_rgb(n);
    std::vector<DetectionSet> raw_thr(n);
    parallel_for(n, threads_, [&](std::size_t j) {
        const Image weak = weak_augment(batch[j].image, step_key.child(j), cfg_.augment);
        strong[j] = strong_augment(batch[j].image, step_key.child(j), cfg_.augment);
        raw_rgb[j] = detector_.detect(bank.rgb_teacher, weak, cfg_.pseudo_decode);
        raw_thr[j] = detector_.detect(bank.thermal_teacher, weak, cfg_.pseudo_decode);
    });
    auto pseudo_rgb = apply_policy(std::move(raw_rgb), cfg_.thermal_policy);
    auto pseudo_thr = apply_policy(std::move(raw_thr), cfg_.thermal_policy);

    std::vector<DualLoss> per(n);
    parallel_for(n, threads_, [&](std::size_t j) {
        per[j] = dual_unsupervised_loss(detector_, state.student, strong[j],
                                        merge_dual_pseudo_labels(pseudo_rgb[j], pseudo_thr[j]));
    });

    MetricRow row;
    row.iter = state.iteration;
    row.phase = Phase::Zigzag;
    row.domain = to_string(TrainDomain::Thermal);
    row.lambda = cfg_.lambda.at(state.iteration);
    std::vector<double> grad;
    const double scale = 1.0 / static_cast<double>(n);
    for (const auto& d : per) {
        row.loss_unsup_rgb_teacher += d.rgb_term * scale;
        row.loss_unsup_thr_teacher += d.thermal_term * scale;
        accumulate(grad, d.grad, scale);
    }
    row.loss_total = row.loss_unsup_rgb_teacher + row.loss_unsup_thr_teacher;
    row.n_pseudo_rgb = count(pseudo_rgb);
    row.n_pseudo_thr = count(pseudo_thr);
    require_finite(row.loss_total, state, "thermal loss");

    apply_sgd(state, grad);
    ema_into(state, TeacherId::ThermalTeacher);
    state.metric_log.push_back(row);
    ++state.iteration;
}

void Trainer::rgb_step(TrainerState& state, std::span<const SceneSample> batch) const {
    if (state.phase != Phase::Zigzag || !state.teachers)
        throw ContractError("rgb_step outside the zigzag phase");
    if (cfg_.domain_mode == DomainMode::Zigzag &&
        domain_at(cfg_.schedule(), state.iteration) != TrainDomain::RGB)
        throw ContractError("rgb_step at a thermal iteration");
    if (batch.empty()) throw ContractError("rgb_step needs a non-empty batch");

    const double lambda = cfg_.lambda.at(state.iteration);
    BatchLoss total = supervised_batch(state, batch);

    MetricRow row;
    row.iter = state.iteration;
    row.phase = Phase::Zigzag;
    row.domain = to_string(TrainDomain::RGB);
    row.lambda = lambda;
    row.loss_sup = total.loss;

    if (lambda > 0.0) {
        const auto& bank = *state.teachers;
        const RngKey step_key = state.rng.child(static_cast<std::uint64_t>(state.iteration));
        const std::size_t n = batch.size();
        std::vector<Image> strong(n);
        std::vector<DetectionSet> raw_rgb(n);
        std::vector<DetectionSet> raw_thr(n);
        parallel_for(n, threads_, [&](std::size_t j) {
            const Image weak = weak_augment(batch[j].image, step_key.child(j), cfg_.augment);
            strong[j] = strong_augment(batch[j].image, step_key.child(j), cfg_.augment);
            raw_rgb[j] = detector_.detect(bank.rgb_teacher, weak, cfg_.pseudo_decode);
            raw_thr[j] = detector_.detect(bank.thermal_teacher, weak, cfg_.pseudo_decode);
        });
        auto pseudo_rgb = apply_policy(std::move(raw_rgb), cfg_.rgb_policy);
        auto pseudo_thr = apply_policy(std::move(raw_thr), cfg_.rgb_policy);

        std::vector<DualLoss> per(n);
        parallel_for(n, threads_, [&](std::size_t j) {
            per[j] = dual_unsupervised_loss(detector_, state.student, strong[j],
                                            merge_dual_pseudo_labels(pseudo_rgb[j], pseudo_thr[j]));
        });
        const double scale = 1.0 / static_cast<double>(n);
        for (const auto& d : per) {
            row.loss_unsup_rgb_teacher += d.rgb_term * scale;
            row.loss_unsup_thr_teacher += d.thermal_term * scale;
            accumulate(total.grad, d.grad, lambda * scale);
        }
        row.n_pseudo_rgb = count(pseudo_rgb);
        row.n_pseudo_thr = count(pseudo_thr);
        total.loss += lambda * (row.loss_unsup_rgb_teacher + row.loss_unsup_thr_teacher);
    }
    row.loss_total = total.loss;
    require_finite(row.loss_total, state, "rgb loss");

    apply_sgd(state, total.grad);
    ema_into(state, TeacherId::RGBTeacher);
    state.metric_log.push_back(row);
    ++state.iteration;
}

void Trainer::combined_step(TrainerState& state, std::span<const SceneSample> source_batch,
                            std::span<const UnlabeledSample> target_batch) const {
    if (state.phase != Phase::Zigzag || !state.teachers)
        throw ContractError("combined_step outside the teacher phase");
    if (source_batch.empty() || target_batch.empty())
        throw ContractError("combined_step needs source and target samples");

    BatchLoss total = supervised_batch(state, source_batch);
    const auto& teacher = state.teachers->thermal_teacher;
    const RngKey step_key = state.rng.child(static_cast<std::uint64_t>(state.iteration));
    const std::size_t offset = source_batch.size();
    const std::size_t n = target_batch.size();

    std::vector<Image> strong(n);
    std::vector<DetectionSet> raw(n);
    parallel_for(n, threads_, [&](std::size_t j) {
        const RngKey key = step_key.child(offset + j);
        const Image weak = weak_augment(target_batch[j].image, key, cfg_.augment);
        strong[j] = strong_augment(target_batch[j].image, key, cfg_.augment);
        raw[j] = detector_.detect(teacher, weak, cfg_.pseudo_decode);
    });
    auto pseudo = apply_policy(std::move(raw), cfg_.thermal_policy);
    for (auto& set : pseudo)
        for (auto& d : set) d.source = TeacherSource::Thermal;

    std::vector<LossResult> per(n);
    parallel_for(n, threads_, [&](std::size_t j) {
        per[j] = detector_.unsupervised_loss(state.student, strong[j], pseudo[j]);
    });

    MetricRow row;
    row.iter = state.iteration;
    row.phase = Phase::Zigzag;
    row.domain = "combined";
    row.loss_sup = total.loss;
    const double scale = 1.0 / static_cast<double>(n);
    for (const auto& r : per) {
        row.loss_unsup_thr_teacher += r.loss * scale;
        accumulate(total.grad, r.grad, scale);
    }
    row.n_pseudo_thr = count(pseudo);
    row.loss_total = row.loss_sup + row.loss_unsup_thr_teacher;
    require_finite(row.loss_total, state, "combined loss");

    apply_sgd(state, total.grad);
    ema_into(state, TeacherId::ThermalTeacher);
    state.metric_log.push_back(row);
    ++state.iteration;
}

EvalRow Trainer::evaluate_state(const TrainerState& state, std::span<const SceneSample> test_set,
                                const DecodeConfig& decode, double iou) const {
    // Scores the f32 snapshot, i.e. exactly what a checkpoint would hold.
    auto score = [&](const ParamVector& p) {
        return evaluate(detector_, round_to_f32(p), test_set, decode, iou, threads_);
    };
    EvalRow row;
    row.iter = state.iteration;
    row.student = score(state.student);
    if (state.teachers) {
        row.teacher_rgb = score(state.teachers->rgb_teacher);
        row.teacher_thr = score(state.teachers->thermal_teacher);
    }
    return row;
}

TrainerState Trainer::run(std::span<const SceneSample> source,
                          std::span<const UnlabeledSample> target,
                          const RunOptions& options) const {
    if (source.empty()) throw ConfigError("run needs labeled source samples");
    const bool needs_target = cfg_.total_iterations > cfg_.burn_in_iterations;
    if (needs_target && target.empty()) throw ConfigError("run needs unlabeled target samples");
    for (const auto& t : target) {
        if (t.domain != Domain::Target) throw ContractError("target batch holds a source sample");
    }

    const RngKey root(cfg_.seed);
    const BatchSampler source_sampler(source.size(), root.child(kSourceSampler));
    const std::optional<BatchSampler> target_sampler =
        target.empty() ? std::nullopt
                       : std::optional<BatchSampler>(BatchSampler(target.size(), root.child(kTargetSampler)));
    const ZigzagConfig schedule = cfg_.schedule();

    auto source_batch = [&](TrainerState& st, int k) {
        std::vector<SceneSample> b;
        for (auto idx : source_sampler.take(st.source_cursor, k)) b.push_back(source[idx]);
        st.source_cursor += k;
        return b;
    };
    auto target_batch = [&](TrainerState& st, int k) {
        std::vector<UnlabeledSample> b;
        for (auto idx : target_sampler->take(st.target_cursor, k)) b.push_back(target[idx]);
        st.target_cursor += k;
        return b;
    };

    const bool evaluating = !options.test_set.empty() && options.eval_interval > 0;
    TrainerState state = init_state();
    while (state.iteration < cfg_.total_iterations) {
        if (state.iteration < cfg_.burn_in_iterations) {
            burn_in_step(state, source_batch(state, cfg_.batch_size));
        } else {
            if (state.phase == Phase::BurnIn) transition_to_zigzag(state);
            if (cfg_.domain_mode == DomainMode::Combined) {
                const int half = std::max(1, cfg_.batch_size / 2);
                auto src = source_batch(state, half);
                auto tgt = target_batch(state, cfg_.batch_size - half);
                combined_step(state, src, tgt);
            } else if (domain_at(schedule, state.iteration) == TrainDomain::Thermal) {
                thermal_step(state, target_batch(state, cfg_.batch_size));
            } else {
                rgb_step(state, source_batch(state, cfg_.batch_size));
            }
        }
        if (options.on_step) options.on_step(state);
        if (evaluating && (state.iteration % options.eval_interval == 0 ||
                           state.iteration == cfg_.total_iterations)) {
            state.eval_log.push_back(
                evaluate_state(state, options.test_set, options.eval_decode, options.eval_iou));
        }
    }
    return state;
}

}  // namespace d3t
