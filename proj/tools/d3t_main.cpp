#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "d3t/checkpoint.hpp"
#include "d3t/dataset_io.hpp"
#include "d3t/errors.hpp"
#include "d3t/experiment.hpp"
#include "d3t/schedule.hpp"

namespace fs = std::filesystem;
using namespace d3t;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    bool quiet = false;
};

ExperimentConfig load(const Common& c) {
    ExperimentConfig cfg = load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    return cfg.normalized();
}

fs::path out_dir(const Common& c, const ExperimentConfig& cfg) {
    return c.out.empty() ? fs::path(cfg.output_dir) : fs::path(c.out);
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw FormatError("failed writing " + path.string());
}

int cmd_run(const Common& c) {
    const ExperimentConfig cfg = load(c);
    const fs::path dir = out_dir(c, cfg);
    RunSettings settings;
    settings.threads = c.threads;
    settings.output_dir = dir;
    const RunOutcome r = run_experiment(cfg, settings);
    if (!c.quiet) {
        std::cout << "regime " << to_string(cfg.regime) << ", seed " << cfg.seed << ": "
                  << r.deployed << " mAP " << r.deployed_map << "\n"
                  << "artifacts in " << dir.string() << "\n";
    }
    return 0;
}

int cmd_schedule(const Common& c) {
    const ExperimentConfig cfg = load(c);
    const fs::path dir = out_dir(c, cfg);
    std::ostringstream os;
    write_schedule_csv(os, schedule_trace(cfg.trainer.schedule(), cfg.trainer.lambda));
    write_file(dir / "schedule.csv", os.str());
    if (!c.quiet) std::cout << "wrote " << (dir / "schedule.csv").string() << "\n";
    return 0;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& variants, int seeds) {
    const ExperimentConfig cfg = load(c);
    const fs::path dir = out_dir(c, cfg);
    const auto rows = ablate(cfg, variants, seeds, c.threads);
    write_file(dir / "ablation.csv", ablation_csv(rows));
    const std::string table = ablation_table(rows);
    write_file(dir / "ablation.txt", table);
    if (!c.quiet) std::cout << table;
    return 0;
}

int cmd_eval(const std::string& run_dir, const std::string& model, std::string checkpoint,
             std::string dataset, const std::string& config) {
    EvalConfig eval;
    if (!run_dir.empty()) {
        if (checkpoint.empty()) checkpoint = (fs::path(run_dir) / "checkpoints" / (model + ".d3t")).string();
        if (dataset.empty()) dataset = (fs::path(run_dir) / "test_set").string();
        const fs::path norm = fs::path(run_dir) / "config.norm.json";
        if (config.empty() && fs::exists(norm)) eval = load_config(norm).eval;
    }
    if (!config.empty()) eval = load_config(config).eval;
    if (checkpoint.empty() || dataset.empty())
        throw ConfigError("eval needs --run DIR or both --checkpoint and --dataset");

    const Checkpoint ck = load_checkpoint(checkpoint);
    const auto test = load_dataset(dataset);
    const EvalReport report =
        evaluate(Detector(ck.arch), ck.params, test, eval.decode, eval.iou_threshold);
    std::cout << to_json(report).dump(2) << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-domain teacher training on synthetic two-domain detection data"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", common.config, "Experiment config (JSON)");
        if (needs_config) opt->required()->check(CLI::ExistingFile);
        sub->add_option("--out", common.out, "Output directory (default: config output_dir)");
        sub->add_option("--seed", common.seed, "Override the config seed");
        sub->add_option("--threads", common.threads, "Worker threads (results do not depend on it)")
            ->check(CLI::PositiveNumber);
        sub->add_flag("--quiet", common.quiet, "Suppress progress output");
    };

    auto* run = app.add_subcommand("run", "Generate data, train, evaluate, write artifacts");
    add_common(run, true);

    auto* schedule = app.add_subcommand("schedule", "Write the zigzag schedule trace CSV");
    add_common(schedule, true);

    std::vector<std::string> variants;
    int seeds = 5;
    auto* abl = app.add_subcommand("ablate", "Run variants across seeds and tabulate target mAP");
    add_common(abl, true);
    abl->add_option("--variants", variants, "Variant names (d3t, mt_baseline, source_only, "
                                            "single_teacher, fixed<k>, lambda<v>, lambda_dynamic)")
        ->required()
        ->delimiter(',');
    abl->add_option("--seeds", seeds, "Number of seeds")->check(CLI::PositiveNumber);

    std::string run_dir, model = "teacher_thr", checkpoint, dataset, eval_config;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dumped dataset");
    ev->add_option("--run", run_dir, "Run directory (uses its checkpoints/ and test_set/)");
    ev->add_option("--model", model, "student | teacher_rgb | teacher_thr")
        ->check(CLI::IsMember({"student", "teacher_rgb", "teacher_thr"}));
    ev->add_option("--checkpoint", checkpoint, "Checkpoint file");
    ev->add_option("--dataset", dataset, "Dataset directory");
    ev->add_option("--config", eval_config, "Config supplying the eval settings");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(common);
        if (*schedule) return cmd_schedule(common);
        if (*abl) return cmd_ablate(common, variants, seeds);
        if (*ev) return cmd_eval(run_dir, model, checkpoint, dataset, eval_config);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
