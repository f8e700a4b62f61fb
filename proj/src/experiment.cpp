#include "d3t/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "d3t/checkpoint.hpp"
#include "d3t/dataset_io.hpp"
#include "d3t/errors.hpp"
#include "d3t/parallel.hpp"

namespace d3t {

using nlohmann::json;

namespace {

/// Reads an object field by field and rejects any key nobody asked for.
class StrictObject {
public:
    StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <typename T>
    void read(const char* key, T& into) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            into = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    std::optional<StrictObject> object(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return StrictObject(j_.at(key), where_ + "." + key);
    }

    [[nodiscard]] const json* raw(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

json policy_json(const PseudoLabelPolicy& p) {
    return {{"mode", p.mode == PseudoLabelPolicy::Mode::ScoreThreshold ? "threshold" : "top_fraction"},
            {"threshold", p.threshold},
            {"top_fraction", p.top_fraction}};
}

PseudoLabelPolicy read_policy(StrictObject o, PseudoLabelPolicy p) {
    std::string mode = p.mode == PseudoLabelPolicy::Mode::ScoreThreshold ? "threshold" : "top_fraction";
    o.read("mode", mode);
    o.read("threshold", p.threshold);
    o.read("top_fraction", p.top_fraction);
    o.finish();
    if (mode == "threshold") {
        p.mode = PseudoLabelPolicy::Mode::ScoreThreshold;
    } else if (mode == "top_fraction") {
        p.mode = PseudoLabelPolicy::Mode::TopPercent;
    } else {
        throw ConfigError("pseudo-label mode must be 'threshold' or 'top_fraction'");
    }
    return p;
}

json decode_json(const DecodeConfig& d) {
    return {{"score_threshold", d.score_threshold}, {"nms_iou", d.nms_iou}};
}

DecodeConfig read_decode(StrictObject o, DecodeConfig d) {
    o.read("score_threshold", d.score_threshold);
    o.read("nms_iou", d.nms_iou);
    o.finish();
    return d;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw FormatError("failed writing " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig desk_profile() {
    ExperimentConfig c;
    c.regime = Regime::D3T;
    c.seed = 1;
    c.eval_interval = 400;
    c.output_dir = "runs/d3t";

    TrainerConfig& t = c.trainer;
    t.learning_rate = 0.5;
    t.batch_size = 4;
    t.total_iterations = 4000;
    t.burn_in_iterations = 800;
    t.zigzag = ZigzagConfig{5, 15, 5, 400, 4000, 800};
    t.lambda = LambdaPolicy{LambdaSchedule{1000, 1000}, std::nullopt};
    t.ema_alpha = 0.996;
    t.teacher_mode = TeacherMode::Dual;
    t.domain_mode = DomainMode::Zigzag;
    t.thermal_policy = PseudoLabelPolicy::score_threshold(0.7);
    t.rgb_policy = PseudoLabelPolicy::top_percent(0.01);
    t.pseudo_decode = DecodeConfig{0.05, 0.5};
    return c;
}

ExperimentConfig ExperimentConfig::normalized() const {
    ExperimentConfig c = *this;
    c.trainer.seed = seed;
    apply_regime(c.trainer, regime);
    c.trainer.zigzag.total_iterations = c.trainer.total_iterations;
    c.trainer.zigzag.burn_in_iterations = c.trainer.burn_in_iterations;
    return c;
}

void ExperimentConfig::validate() const {
    if (eval_interval < 0) throw ConfigError("eval_interval must be >= 0");
    if (data.n_source < 1 || data.n_target < 1 || data.n_test < 1)
        throw ConfigError("dataset sizes must be >= 1");
    data.geometry.validate();
    data.gap.validate();
    arch.validate();
    if (arch.scene_size != data.geometry.height || arch.scene_size != data.geometry.width)
        throw ConfigError("detector scene_size must match the scene geometry");
    if (arch.num_classes != data.geometry.num_classes)
        throw ConfigError("detector num_classes must match the scene geometry");
    if (arch.in_channels != 1) throw ConfigError("scenes are single-channel");
    eval.decode.validate();
    if (!(eval.iou_threshold > 0.0 && eval.iou_threshold <= 1.0))
        throw ConfigError("eval.iou_threshold must lie in (0,1]");
    normalized().trainer.validate();
}

nlohmann::json to_json(const ExperimentConfig& c) {
    const auto& g = c.data.geometry;
    const auto& gap = c.data.gap;
    const auto& t = c.trainer;
    const auto& a = t.augment;
    json lambda = {{"start_iter", t.lambda.ramp.start_iter},
                   {"ramp_iters", t.lambda.ramp.ramp_iters},
                   {"fixed", t.lambda.fixed ? json(*t.lambda.fixed) : json(nullptr)}};
    return {
        {"regime", to_string(c.regime)},
        {"seed", c.seed},
        {"eval_interval", c.eval_interval},
        {"output_dir", c.output_dir},
        {"data",
         {{"n_source", c.data.n_source},
          {"n_target", c.data.n_target},
          {"n_test", c.data.n_test},
          {"geometry",
           {{"height", g.height},
            {"width", g.width},
            {"num_classes", g.num_classes},
            {"min_objects", g.min_objects},
            {"max_objects", g.max_objects},
            {"round_size_min", g.round_size_min},
            {"round_size_max", g.round_size_max},
            {"thin_width_min", g.thin_width_min},
            {"thin_width_max", g.thin_width_max},
            {"thin_length_min", g.thin_length_min},
            {"thin_length_max", g.thin_length_max},
            {"bright_fraction", g.bright_fraction},
            {"object_amplitude", g.object_amplitude},
            {"edge_softness", g.edge_softness},
            {"dome", g.dome},
            {"texture_amplitude", g.texture_amplitude},
            {"max_overlap_iou", g.max_overlap_iou}}},
          {"gap",
           {{"intensity_inversion", gap.intensity_inversion},
            {"contrast_scale", gap.contrast_scale},
            {"noise_sigma", gap.noise_sigma},
            {"texture_drop", gap.texture_drop}}}}},
        {"detector",
         {{"scene_size", c.arch.scene_size},
          {"in_channels", c.arch.in_channels},
          {"hidden", c.arch.hidden},
          {"grid", c.arch.grid},
          {"num_classes", c.arch.num_classes},
          {"input_center", c.arch.input_center},
          {"input_gain", c.arch.input_gain}}},
        {"trainer",
         {{"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"total_iterations", t.total_iterations},
          {"burn_in_iterations", t.burn_in_iterations},
          {"ema_alpha", t.ema_alpha},
          {"teacher_mode", t.teacher_mode == TeacherMode::Dual ? "dual" : "shared"},
          {"zigzag",
           {{"z0_thr", t.zigzag.z0_thr},
            {"z0_rgb", t.zigzag.z0_rgb},
            {"beta", t.zigzag.beta},
            {"step_length", t.zigzag.step_length}}},
          {"lambda", lambda},
          {"pseudo_thermal", policy_json(t.thermal_policy)},
          {"pseudo_rgb", policy_json(t.rgb_policy)},
          {"pseudo_decode", decode_json(t.pseudo_decode)},
          {"augment",
           {{"flip_prob", a.flip_prob},
            {"weak_noise_sigma", a.weak_noise_sigma},
            {"strong_noise_sigma", a.strong_noise_sigma},
            {"cutout_max_area_fraction", a.cutout_max_area_fraction},
            {"contrast_jitter", a.contrast_jitter}}}}},
        {"eval",
         {{"score_threshold", c.eval.decode.score_threshold},
          {"nms_iou", c.eval.decode.nms_iou},
          {"iou_threshold", c.eval.iou_threshold}}},
    };
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c = desk_profile();
    StrictObject root(j, "config");

    std::string regime = to_string(c.regime);
    root.read("regime", regime);
    c.regime = regime_from_string(regime);
    root.read("seed", c.seed);
    root.read("eval_interval", c.eval_interval);
    root.read("output_dir", c.output_dir);

    if (auto data = root.object("data")) {
        data->read("n_source", c.data.n_source);
        data->read("n_target", c.data.n_target);
        data->read("n_test", c.data.n_test);
        if (auto g = data->object("geometry")) {
            auto& geo = c.data.geometry;
            g->read("height", geo.height);
            g->read("width", geo.width);
            g->read("num_classes", geo.num_classes);
            g->read("min_objects", geo.min_objects);
            g->read("max_objects", geo.max_objects);
            g->read("round_size_min", geo.round_size_min);
            g->read("round_size_max", geo.round_size_max);
            g->read("thin_width_min", geo.thin_width_min);
            g->read("thin_width_max", geo.thin_width_max);
            g->read("thin_length_min", geo.thin_length_min);
            g->read("thin_length_max", geo.thin_length_max);
            g->read("bright_fraction", geo.bright_fraction);
            g->read("object_amplitude", geo.object_amplitude);
            g->read("edge_softness", geo.edge_softness);
            g->read("dome", geo.dome);
            g->read("texture_amplitude", geo.texture_amplitude);
            g->read("max_overlap_iou", geo.max_overlap_iou);
            g->finish();
        }
        if (auto g = data->object("gap")) {
            g->read("intensity_inversion", c.data.gap.intensity_inversion);
            g->read("contrast_scale", c.data.gap.contrast_scale);
            g->read("noise_sigma", c.data.gap.noise_sigma);
            g->read("texture_drop", c.data.gap.texture_drop);
            g->finish();
        }
        data->finish();
    }

    if (auto d = root.object("detector")) {
        d->read("scene_size", c.arch.scene_size);
        d->read("in_channels", c.arch.in_channels);
        d->read("hidden", c.arch.hidden);
        d->read("grid", c.arch.grid);
        d->read("num_classes", c.arch.num_classes);
        d->read("input_center", c.arch.input_center);
        d->read("input_gain", c.arch.input_gain);
        d->finish();
    }

    if (auto t = root.object("trainer")) {
        auto& tc = c.trainer;
        t->read("learning_rate", tc.learning_rate);
        t->read("batch_size", tc.batch_size);
        t->read("total_iterations", tc.total_iterations);
        t->read("burn_in_iterations", tc.burn_in_iterations);
        t->read("ema_alpha", tc.ema_alpha);
        std::string mode = tc.teacher_mode == TeacherMode::Dual ? "dual" : "shared";
        t->read("teacher_mode", mode);
        if (mode == "dual") {
            tc.teacher_mode = TeacherMode::Dual;
        } else if (mode == "shared") {
            tc.teacher_mode = TeacherMode::Shared;
        } else {
            throw ConfigError("trainer.teacher_mode must be 'dual' or 'shared'");
        }
        if (auto z = t->object("zigzag")) {
            z->read("z0_thr", tc.zigzag.z0_thr);
            z->read("z0_rgb", tc.zigzag.z0_rgb);
            z->read("beta", tc.zigzag.beta);
            z->read("step_length", tc.zigzag.step_length);
            z->finish();
        }
        if (auto l = t->object("lambda")) {
            l->read("start_iter", tc.lambda.ramp.start_iter);
            l->read("ramp_iters", tc.lambda.ramp.ramp_iters);
            if (const json* fixed = l->raw("fixed")) {
                if (fixed->is_null()) {
                    tc.lambda.fixed.reset();
                } else if (fixed->is_number()) {
                    tc.lambda.fixed = fixed->get<double>();
                } else {
                    throw ConfigError("trainer.lambda.fixed must be a number or null");
                }
            }
            l->finish();
        }
        if (auto p = t->object("pseudo_thermal")) tc.thermal_policy = read_policy(*p, tc.thermal_policy);
        if (auto p = t->object("pseudo_rgb")) tc.rgb_policy = read_policy(*p, tc.rgb_policy);
        if (auto p = t->object("pseudo_decode")) tc.pseudo_decode = read_decode(*p, tc.pseudo_decode);
        if (auto a = t->object("augment")) {
            a->read("flip_prob", tc.augment.flip_prob);
            a->read("weak_noise_sigma", tc.augment.weak_noise_sigma);
            a->read("strong_noise_sigma", tc.augment.strong_noise_sigma);
            a->read("cutout_max_area_fraction", tc.augment.cutout_max_area_fraction);
            a->read("contrast_jitter", tc.augment.contrast_jitter);
            a->finish();
        }
        t->finish();
    }

    if (auto e = root.object("eval")) {
        e->read("score_threshold", c.eval.decode.score_threshold);
        e->read("nms_iou", c.eval.decode.nms_iou);
        e->read("iou_threshold", c.eval.iou_threshold);
        e->finish();
    }
    root.finish();

    c = c.normalized();
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------

std::string metrics_jsonl(const TrainerState& state) {
    std::map<std::int64_t, const EvalRow*> evals;
    for (const auto& e : state.eval_log) evals[e.iter] = &e;
    std::ostringstream os;
    for (const auto& row : state.metric_log) {
        os << to_json(row).dump() << '\n';
        if (auto it = evals.find(row.iter + 1); it != evals.end())
            os << to_json(*it->second).dump() << '\n';
    }
    return os.str();
}

RunOutcome run_experiment(const ExperimentConfig& raw, const RunSettings& settings) {
    RunOutcome out;
    out.config = raw.normalized();
    const ExperimentConfig& cfg = out.config;
    cfg.validate();
    if (cfg.trainer.total_iterations < 1) throw ConfigError("total_iterations must be >= 1");

    const auto data = generate_dataset(cfg.seed, cfg.data.n_source, cfg.data.n_target, cfg.data.gap,
                                       cfg.data.geometry);
    const auto test = generate_split(cfg.seed, Domain::Target, cfg.data.n_source + cfg.data.n_target,
                                     cfg.data.n_test, cfg.data.gap, cfg.data.geometry);
    const auto target = strip_labels(data.target);

    const Trainer trainer(cfg.trainer, Detector(cfg.arch), settings.threads);
    RunOptions options;
    options.test_set = test;
    options.eval_interval = cfg.eval_interval > 0 ? cfg.eval_interval : cfg.trainer.total_iterations;
    options.eval_decode = cfg.eval.decode;
    options.eval_iou = cfg.eval.iou_threshold;
    out.state = trainer.run(data.source, target, options);

    out.final_eval = out.state.eval_log.back();
    if (out.final_eval.teacher_thr) {
        out.deployed = "teacher_thr";
        out.deployed_map = out.final_eval.teacher_thr->map;
    } else {
        out.deployed = "student";
        out.deployed_map = out.final_eval.student.map;
    }

    if (settings.output_dir) {
        const auto& dir = *settings.output_dir;
        std::filesystem::create_directories(dir / "checkpoints");
        write_text(dir / "config.norm.json", to_json(cfg).dump(2) + "\n");
        write_text(dir / "metrics.jsonl", metrics_jsonl(out.state));

        std::ostringstream sched;
        std::vector<ScheduleRow> rows;
        if (cfg.trainer.domain_mode == DomainMode::Zigzag)
            rows = schedule_trace(cfg.trainer.schedule(), cfg.trainer.lambda);
        write_schedule_csv(sched, rows);
        write_text(dir / "schedule.csv", sched.str());

        json final = to_json(out.final_eval);
        final.erase("type");
        final["deployed"] = out.deployed;
        final["deployed_map"] = out.deployed_map;
        write_text(dir / "eval_final.json", final.dump(2) + "\n");

        save_checkpoint(dir / "checkpoints" / "student.d3t", cfg.arch, out.state.student);
        if (out.state.teachers) {
            save_checkpoint(dir / "checkpoints" / "teacher_rgb.d3t", cfg.arch,
                            out.state.teachers->rgb_teacher);
            save_checkpoint(dir / "checkpoints" / "teacher_thr.d3t", cfg.arch,
                            out.state.teachers->thermal_teacher);
        }
        save_dataset(dir / "test_set", test);
    }
    return out;
}

// ---------------------------------------------------------------------------

ExperimentConfig apply_variant(const ExperimentConfig& base, const std::string& variant) {
    ExperimentConfig c = base;
    auto as_d3t = [&] {
        c.regime = Regime::D3T;
        c.trainer.teacher_mode = TeacherMode::Dual;
        if (c.trainer.burn_in_iterations == c.trainer.total_iterations)
            throw ConfigError("variant '" + variant + "' needs a base config with a zigzag phase");
    };
    if (variant == "d3t" || variant == "zigzag") {
        as_d3t();
    } else if (variant == "mt_baseline") {
        c.regime = Regime::MeanTeacher;
    } else if (variant == "source_only") {
        c.regime = Regime::SourceOnly;
    } else if (variant == "single_teacher") {
        as_d3t();
        c.trainer.teacher_mode = TeacherMode::Shared;
    } else if (variant == "lambda_dynamic") {
        as_d3t();
        c.trainer.lambda.fixed.reset();
    } else if (variant.starts_with("fixed")) {
        as_d3t();
        std::size_t used = 0;
        long long k = 0;
        try {
            k = std::stoll(variant.substr(5), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != variant.size() - 5) throw ConfigError("bad variant '" + variant + "'");
        c.trainer.zigzag = fixed_mode(k, c.trainer.zigzag);
    } else if (variant.starts_with("lambda")) {
        as_d3t();
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(variant.substr(6), &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != variant.size() - 6) throw ConfigError("bad variant '" + variant + "'");
        c.trainer.lambda.fixed = v;
    } else {
        throw ConfigError("unknown variant '" + variant + "'");
    }
    c = c.normalized();
    c.validate();
    return c;
}

std::vector<AblationRow> ablate(const ExperimentConfig& base, const std::vector<std::string>& variants,
                                int n_seeds, int threads) {
    if (variants.empty()) throw ConfigError("ablate needs at least one variant");
    if (n_seeds < 1) throw ConfigError("ablate needs at least one seed");

    std::vector<ExperimentConfig> configs;
    for (const auto& v : variants) configs.push_back(apply_variant(base, v));

    const std::size_t jobs = configs.size() * static_cast<std::size_t>(n_seeds);
    std::vector<double> maps(jobs);
    parallel_for(jobs, threads, [&](std::size_t job) {
        ExperimentConfig c = configs[job / n_seeds];
        c.seed = base.seed + job % n_seeds;
        maps[job] = run_experiment(c).deployed_map;
    });

    std::vector<AblationRow> rows;
    for (std::size_t v = 0; v < configs.size(); ++v) {
        AblationRow row;
        row.variant = variants[v];
        for (int s = 0; s < n_seeds; ++s) {
            row.seeds.push_back(base.seed + static_cast<std::uint64_t>(s));
            row.maps.push_back(maps[v * n_seeds + s]);
        }
        double sum = 0.0;
        for (double m : row.maps) sum += m;
        row.mean = sum / n_seeds;
        double ss = 0.0;
        for (double m : row.maps) ss += (m - row.mean) * (m - row.mean);
        row.sd = n_seeds > 1 ? std::sqrt(ss / (n_seeds - 1)) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "variant,n_seeds,mean_map,sd_map,seed_maps\n";
    for (const auto& r : rows) {
        os << r.variant << ',' << r.maps.size() << ',' << r.mean << ',' << r.sd << ',';
        for (std::size_t i = 0; i < r.maps.size(); ++i) os << (i ? ";" : "") << r.maps[i];
        os << '\n';
    }
    return os.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::size_t width = 7;
    for (const auto& r : rows) width = std::max(width, r.variant.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "variant" << "  seeds  mAP (mean +- sd, %)\n";
    os << std::string(width, '-') << "  -----  ---------------------\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(width)) << r.variant << "  " << std::right
           << std::setw(5) << r.maps.size() << "  " << std::fixed << std::setprecision(2)
           << std::setw(6) << 100.0 * r.mean << " +- " << std::setw(5) << 100.0 * r.sd << '\n';
        os.unsetf(std::ios::fixed);
    }
    return os.str();
}

}  // namespace d3t
