#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "d3t/detector.hpp"
#include "d3t/eval.hpp"
#include "d3t/synthgen.hpp"
#include "d3t/trainer.hpp"

namespace d3t {

struct DataConfig {
    std::int64_t n_source = 600;
    std::int64_t n_target = 600;
    std::int64_t n_test = 200;
    SceneGeometry geometry;
    DomainGapConfig gap;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct EvalConfig {
    DecodeConfig decode{0.05, 0.5};
    double iou_threshold = 0.5;

    friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct ExperimentConfig {
    Regime regime = Regime::D3T;
    std::uint64_t seed = 1;
    std::int64_t eval_interval = 400;
    std::string output_dir = "runs/d3t";
    DataConfig data;
    ArchConfig arch;
    TrainerConfig trainer;
    EvalConfig eval;

    /// Applies the regime and copies the top-level seed into the trainer.
    [[nodiscard]] ExperimentConfig normalized() const;
    void validate() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// CPU profile: 4000 iterations, 800 burn-in, 400-iteration steps, budgets 5/15, beta 5.
ExperimentConfig desk_profile();

/// Strict parse: unknown keys raise ConfigError, missing keys take the desk defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

struct RunOutcome {
    ExperimentConfig config;  // normalized
    TrainerState state;
    EvalRow final_eval;
    std::string deployed;     // "teacher_thr", or "student" when no teacher exists
    double deployed_map = 0.0;
};

struct RunSettings {
    int threads = 1;
    /// When set, artifacts are written here (config.norm.json, metrics.jsonl,
    /// schedule.csv, eval_final.json, checkpoints/, test_set/).
    std::optional<std::filesystem::path> output_dir;
};

RunOutcome run_experiment(const ExperimentConfig& cfg, const RunSettings& settings = {});

/// metrics.jsonl contents: train rows in iteration order, each eval row right
/// after the train row that completed its iteration.
std::string metrics_jsonl(const TrainerState& state);

/// Named ablation variants: d3t, zigzag, mt_baseline, source_only, single_teacher,
/// fixed<k>, lambda<value>, lambda_dynamic.
ExperimentConfig apply_variant(const ExperimentConfig& base, const std::string& variant);

struct AblationRow {
    std::string variant;
    std::vector<std::uint64_t> seeds;
    std::vector<double> maps;
    double mean = 0.0;
    double sd = 0.0;
};

/// Runs every variant for seeds base.seed, base.seed + 1, ... (n_seeds of them).
std::vector<AblationRow> ablate(const ExperimentConfig& base, const std::vector<std::string>& variants,
                                int n_seeds, int threads = 1);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace d3t
