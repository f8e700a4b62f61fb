#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace d3t {

enum class TrainDomain { Thermal, RGB };
enum class TeacherId { ThermalTeacher, RGBTeacher };

const char* to_string(TrainDomain d);
const char* to_string(TeacherId t);

/// Zigzag budgets. Iteration indices are global; the step clock starts at
/// burn_in_iterations.
struct ZigzagConfig {
    std::int64_t z0_thr = 50;
    std::int64_t z0_rgb = 150;
    std::int64_t beta = 50;
    std::int64_t step_length = 10000;
    std::int64_t total_iterations = 40000;
    std::int64_t burn_in_iterations = 0;

    [[nodiscard]] std::int64_t period() const { return z0_thr + z0_rgb; }
    void validate() const;

    friend bool operator==(const ZigzagConfig&, const ZigzagConfig&) = default;
};

struct StepBudget {
    std::int64_t step_index = 0;
    std::int64_t z_thr = 0;
    std::int64_t z_rgb = 0;

    friend bool operator==(const StepBudget&, const StepBudget&) = default;
};

/// Budgets of step t: z_thr = clamp(z0_thr + t * beta, 0, P), z_rgb = P - z_thr.
StepBudget budget_for_step(const ZigzagConfig& cfg, std::int64_t step);
/// Budgets in force at global iteration i (zigzag phase only).
StepBudget budget_at(const ZigzagConfig& cfg, std::int64_t i);

/// Which domain trains at global iteration i. Throws ContractError outside
/// [burn_in_iterations, total_iterations).
TrainDomain domain_at(const ZigzagConfig& cfg, std::int64_t i);

TeacherId teacher_to_update(TrainDomain d);

/// Equal k/k alternation that never shifts (beta = 0).
ZigzagConfig fixed_mode(std::int64_t k, const ZigzagConfig& base);
/// `base` with its shifting budgets kept as given.
ZigzagConfig zigzag_mode(const ZigzagConfig& base);

/// FLIR budgets: 50/150, beta 50, 10k-iteration steps.
ZigzagConfig flir_zigzag(std::int64_t total_iterations = 40000, std::int64_t burn_in = 0);
/// KAIST budgets: 25/75, beta 25, 10k-iteration steps.
ZigzagConfig kaist_zigzag(std::int64_t total_iterations = 40000, std::int64_t burn_in = 0);

struct LambdaSchedule {
    std::int64_t start_iter = 10000;
    std::int64_t ramp_iters = 10000;

    void validate() const;
    friend bool operator==(const LambdaSchedule&, const LambdaSchedule&) = default;
};

/// clamp((i - start_iter) / ramp_iters, 0, 1).
double lambda_at(const LambdaSchedule& sched, std::int64_t i);

/// Either the linear ramp or a constant weight.
struct LambdaPolicy {
    LambdaSchedule ramp;
    std::optional<double> fixed;

    [[nodiscard]] double at(std::int64_t i) const { return fixed ? *fixed : lambda_at(ramp, i); }
    void validate() const;
    friend bool operator==(const LambdaPolicy&, const LambdaPolicy&) = default;
};

struct ScheduleRow {
    std::int64_t iteration = 0;
    TrainDomain domain = TrainDomain::Thermal;
    TeacherId teacher = TeacherId::ThermalTeacher;
    double lambda = 0.0;
    std::int64_t z_thr = 0;
    std::int64_t z_rgb = 0;
    std::int64_t step_index = 0;
};

/// One row per zigzag iteration in [burn_in_iterations, total_iterations).
std::vector<ScheduleRow> schedule_trace(const ZigzagConfig& cfg, const LambdaPolicy& lambda);

/// CSV header: iteration,domain,teacher_updated,lambda,z_thr,z_rgb,step_index
void write_schedule_csv(std::ostream& os, const std::vector<ScheduleRow>& rows);

}  // namespace d3t
