#include "d3t/schedule.hpp"

#include <algorithm>
#include <ostream>
#include <string>

#include "d3t/errors.hpp"

namespace d3t {

const char* to_string(TrainDomain d) { return d == TrainDomain::Thermal ? "thermal" : "rgb"; }

const char* to_string(TeacherId t) {
    return t == TeacherId::ThermalTeacher ? "teacher_thr" : "teacher_rgb";
}

void ZigzagConfig::validate() const {
    if (z0_thr < 0 || z0_rgb < 0 || period() <= 0)
        throw ConfigError("zigzag budgets must be >= 0 with a positive sum");
    if (beta < 0) throw ConfigError("zigzag beta must be >= 0");
    if (step_length < period()) throw ConfigError("zigzag step_length must be >= z0_thr + z0_rgb");
    if (burn_in_iterations < 0 || total_iterations < burn_in_iterations)
        throw ConfigError("zigzag iteration bounds are inconsistent");
}

StepBudget budget_for_step(const ZigzagConfig& cfg, std::int64_t step) {
    const std::int64_t p = cfg.period();
    const std::int64_t z_thr = std::clamp(cfg.z0_thr + step * cfg.beta, std::int64_t{0}, p);
    return StepBudget{step, z_thr, p - z_thr};
}

StepBudget budget_at(const ZigzagConfig& cfg, std::int64_t i) {
    if (i < cfg.burn_in_iterations || i >= cfg.total_iterations) {
        throw ContractError("iteration " + std::to_string(i) + " is outside the zigzag phase");
    }
    return budget_for_step(cfg, (i - cfg.burn_in_iterations) / cfg.step_length);
}

TrainDomain domain_at(const ZigzagConfig& cfg, std::int64_t i) {
    const StepBudget b = budget_at(cfg, i);
    const std::int64_t r = (i - cfg.burn_in_iterations) % cfg.period();
    return r < b.z_thr ? TrainDomain::Thermal : TrainDomain::RGB;
}

TeacherId teacher_to_update(TrainDomain d) {
    return d == TrainDomain::Thermal ? TeacherId::ThermalTeacher : TeacherId::RGBTeacher;
}

ZigzagConfig fixed_mode(std::int64_t k, const ZigzagConfig& base) {
    if (k < 1) throw ConfigError("fixed_mode needs k >= 1");
    ZigzagConfig cfg = base;
    cfg.z0_thr = k;
    cfg.z0_rgb = k;
    cfg.beta = 0;
    cfg.step_length = std::max(base.step_length, 2 * k);
    return cfg;
}

ZigzagConfig zigzag_mode(const ZigzagConfig& base) {
    base.validate();
    return base;
}

ZigzagConfig flir_zigzag(std::int64_t total_iterations, std::int64_t burn_in) {
    return ZigzagConfig{50, 150, 50, 10000, total_iterations, burn_in};
}

ZigzagConfig kaist_zigzag(std::int64_t total_iterations, std::int64_t burn_in) {
    return ZigzagConfig{25, 75, 25, 10000, total_iterations, burn_in};
}

void LambdaSchedule::validate() const {
    if (ramp_iters < 1) throw ConfigError("lambda ramp_iters must be >= 1");
}

double lambda_at(const LambdaSchedule& sched, std::int64_t i) {
    const double v = static_cast<double>(i - sched.start_iter) / static_cast<double>(sched.ramp_iters);
    return std::clamp(v, 0.0, 1.0);
}

void LambdaPolicy::validate() const {
    ramp.validate();
    if (fixed && !(*fixed >= 0.0 && *fixed <= 1.0))
        throw ConfigError("fixed lambda must lie in [0,1]");
}

std::vector<ScheduleRow> schedule_trace(const ZigzagConfig& cfg, const LambdaPolicy& lambda) {
    cfg.validate();
    std::vector<ScheduleRow> rows;
    rows.reserve(static_cast<std::size_t>(cfg.total_iterations - cfg.burn_in_iterations));
    for (std::int64_t i = cfg.burn_in_iterations; i < cfg.total_iterations; ++i) {
        const StepBudget b = budget_at(cfg, i);
        const TrainDomain d = domain_at(cfg, i);
        rows.push_back(ScheduleRow{i, d, teacher_to_update(d), lambda.at(i), b.z_thr, b.z_rgb,
                                   b.step_index});
    }
    return rows;
}

void write_schedule_csv(std::ostream& os, const std::vector<ScheduleRow>& rows) {
    os << "iteration,domain,teacher_updated,lambda,z_thr,z_rgb,step_index\n";
    for (const auto& r : rows) {
        os << r.iteration << ',' << to_string(r.domain) << ',' << to_string(r.teacher) << ','
           << r.lambda << ',' << r.z_thr << ',' << r.z_rgb << ',' << r.step_index << '\n';
    }
}

}  // namespace d3t
