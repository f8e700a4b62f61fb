#include "d3t/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "d3t/errors.hpp"

namespace d3t {

namespace {

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double smooth_l1(double d) {
    const double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_grad(double d) { return std::clamp(d, -1.0, 1.0); }

// Offsets into the flat parameter vector.
struct Offsets {
    std::size_t conv_w, conv_b, cls_w, cls_b, obj_w, obj_b, box_w, box_b;
};

Offsets offsets_for(const std::vector<LayoutEntry>& layout) {
    return {layout[0].offset, layout[1].offset, layout[2].offset, layout[3].offset,
            layout[4].offset, layout[5].offset, layout[6].offset, layout[7].offset};
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t ArchConfig::param_count() const {
    const std::size_t k = hidden;
    return k * in_channels * 9 + k          // conv
           + num_classes * k + num_classes  // class head
           + k + 1                          // objectness head
           + 4 * k + 4;                     // box head
}

void ArchConfig::validate() const {
    if (scene_size <= 0 || in_channels <= 0 || hidden <= 0 || grid <= 0)
        throw ConfigError("architecture sizes must be positive");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (scene_size % grid != 0) throw ConfigError("grid must divide the scene size");
    if (!(input_gain > 0.0) || !std::isfinite(input_center))
        throw ConfigError("input normalization must be finite with a positive gain");
}

std::size_t LayoutEntry::size() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

const LayoutEntry& ParamVector::entry(const std::string& name) const {
    for (const auto& e : layout)
        if (e.name == name) return e;
    throw ConfigError("no parameter named " + name);
}

std::uint64_t ParamVector::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : values) {
        unsigned char bytes[sizeof(double)];
        std::memcpy(bytes, &v, sizeof(double));
        for (unsigned char b : bytes) {
            h ^= b;
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

void check_finite(const ParamVector& p, const char* what) {
    for (std::size_t i = 0; i < p.values.size(); ++i) {
        if (!std::isfinite(p.values[i])) {
            throw NumericError(std::string(what) + ": non-finite parameter at index " +
                               std::to_string(i));
        }
    }
}

ParamVector round_to_f32(const ParamVector& p) {
    ParamVector out = p;
    for (auto& v : out.values) v = static_cast<double>(static_cast<float>(v));
    return out;
}

const char* to_string(TeacherSource s) {
    switch (s) {
        case TeacherSource::RGB: return "rgb";
        case TeacherSource::Thermal: return "thermal";
        case TeacherSource::GroundTruth: return "ground_truth";
    }
    return "?";
}

void DecodeConfig::validate() const {
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
        throw ConfigError("score_threshold must lie in [0,1]");
    if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must lie in [0,1]");
}

DetectionSet non_max_suppression(DetectionSet candidates, double nms_iou) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Detection& a, const Detection& b) {
                         if (a.score != b.score) return a.score > b.score;
                         return a.cell < b.cell;
                     });
    DetectionSet kept;
    for (const auto& c : candidates) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
            return iou(k.box, c.box) > nms_iou;
        });
        if (!suppressed) kept.push_back(c);
    }
    return kept;
}

std::vector<int> assign_cells(int grid, double stride, std::span<const GroundTruthObject> targets) {
    std::vector<int> owner(static_cast<std::size_t>(grid) * grid, -1);
    for (int gy = 0; gy < grid; ++gy) {
        const double cy = (gy + 0.5) * stride;
        for (int gx = 0; gx < grid; ++gx) {
            const double cx = (gx + 0.5) * stride;
            int best = -1;
            for (int k = 0; k < static_cast<int>(targets.size()); ++k) {
                const Box& b = targets[k].box;
                if (cx < b.x0() || cx >= b.x1() || cy < b.y0() || cy >= b.y1()) continue;
                if (best < 0 || b.area() < targets[best].box.area()) best = k;
            }
            owner[static_cast<std::size_t>(gy) * grid + gx] = best;
        }
    }
    for (int k = 0; k < static_cast<int>(targets.size()); ++k) {
        if (std::find(owner.begin(), owner.end(), k) != owner.end()) continue;
        const Box& b = targets[k].box;
        const int gx = std::clamp(static_cast<int>(std::floor(b.cx / stride)), 0, grid - 1);
        const int gy = std::clamp(static_cast<int>(std::floor(b.cy / stride)), 0, grid - 1);
        auto& slot = owner[static_cast<std::size_t>(gy) * grid + gx];
        if (slot < 0) slot = k;
    }
    return owner;
}

HeadLoss head_loss(const DetectorOutput& out, std::span<const GroundTruthObject> targets) {
    const int G = out.grid;
    const int NC = out.num_classes;
    const int cells = out.cells();
    for (const auto& t : targets) {
        if (t.class_id < 0 || t.class_id >= NC) throw ConfigError("target class out of range");
    }

    HeadLoss r;
    r.d_class_logits.assign(out.class_logits.size(), 0.0);
    r.d_objectness.assign(out.objectness.size(), 0.0);
    r.d_box_logits.assign(out.box_logits.size(), 0.0);

    const auto owner = assign_cells(G, out.stride, targets);
    r.positives = static_cast<int>(std::count_if(owner.begin(), owner.end(), [](int o) { return o >= 0; }));

    const double inv_cells = 1.0 / cells;
    const double inv_pos = 1.0 / std::max(1, r.positives);

    for (int cell = 0; cell < cells; ++cell) {
        const double o = out.objectness[cell];
        const bool positive = owner[cell] >= 0;
        r.objectness += (positive ? softplus(-o) : softplus(o)) * inv_cells;
        r.d_objectness[cell] = (sigmoid(o) - (positive ? 1.0 : 0.0)) * inv_cells;
        if (!positive) continue;

        const auto& t = targets[owner[cell]];
        const double* z = &out.class_logits[static_cast<std::size_t>(cell) * NC];
        const double m = *std::max_element(z, z + NC);
        double denom = 0.0;
        for (int c = 0; c < NC; ++c) denom += std::exp(z[c] - m);
        const double lse = m + std::log(denom);
        r.classification += (lse - z[t.class_id]) * inv_pos;
        for (int c = 0; c < NC; ++c) {
            const double prob = std::exp(z[c] - lse);
            r.d_class_logits[static_cast<std::size_t>(cell) * NC + c] =
                (prob - (c == t.class_id ? 1.0 : 0.0)) * inv_pos;
        }

        const int gy = cell / G;
        const int gx = cell % G;
        const double cx = (gx + 0.5) * out.stride;
        const double cy = (gy + 0.5) * out.stride;
        const double target[4] = {(cx - t.box.x0()) / out.stride, (cy - t.box.y0()) / out.stride,
                                  (t.box.x1() - cx) / out.stride, (t.box.y1() - cy) / out.stride};
        for (int j = 0; j < 4; ++j) {
            const std::size_t idx = static_cast<std::size_t>(cell) * 4 + j;
            const double raw = out.box_logits[idx];
            const double diff = softplus(raw) - target[j];
            r.localization += smooth_l1(diff) * inv_pos;
            r.d_box_logits[idx] = smooth_l1_grad(diff) * sigmoid(raw) * inv_pos;
        }
    }
    r.loss = r.objectness + r.classification + r.localization;
    if (!std::isfinite(r.loss)) throw NumericError("head loss is not finite");
    return r;
}

std::vector<GroundTruthObject> detections_as_targets(const DetectionSet& dets) {
    std::vector<GroundTruthObject> out;
    out.reserve(dets.size());
    for (const auto& d : dets) out.push_back(GroundTruthObject{d.class_id, d.box});
    return out;
}

// ---------------------------------------------------------------------------

struct Detector::Activations {
    std::vector<double> hidden;  // K x S x S, post-tanh
    std::vector<double> pooled;  // cells x K
};

Detector::Detector(ArchConfig arch) : arch_(arch) {
    arch_.validate();
    const int K = arch_.hidden;
    const int C = arch_.in_channels;
    const int NC = arch_.num_classes;
    std::size_t offset = 0;
    auto add = [&](std::string name, std::vector<int> shape) {
        LayoutEntry e{std::move(name), offset, std::move(shape)};
        offset += e.size();
        layout_.push_back(std::move(e));
    };
    add("conv.weight", {K, C, 3, 3});
    add("conv.bias", {K});
    add("cls.weight", {NC, K});
    add("cls.bias", {NC});
    add("obj.weight", {1, K});
    add("obj.bias", {1});
    add("box.weight", {4, K});
    add("box.bias", {4});
}

std::vector<LayoutEntry> Detector::layout() const { return layout_; }

ParamVector Detector::zeros() const {
    return ParamVector{std::vector<double>(arch_.param_count(), 0.0), layout_};
}

ParamVector Detector::init_params(std::uint64_t seed) const {
    ParamVector p = zeros();
    auto eng = RngKey(seed).engine();
    const double conv_bound = 1.0 / std::sqrt(static_cast<double>(arch_.in_channels * 9));
    const double head_bound = 1.0 / std::sqrt(static_cast<double>(arch_.hidden));
    for (const auto& e : layout_) {
        const double b = e.name.starts_with("conv.") ? conv_bound : head_bound;
        std::uniform_real_distribution<double> u(-b, b);
        for (std::size_t i = 0; i < e.size(); ++i) p.values[e.offset + i] = u(eng);
    }
    return p;
}

void Detector::check_shape(const ParamVector& p, const Image& image) const {
    if (p.layout != layout_) throw ConfigError("parameter layout does not match the detector");
    if (image.height != arch_.scene_size || image.width != arch_.scene_size ||
        image.channels != arch_.in_channels) {
        throw ConfigError("image shape does not match the detector architecture");
    }
}

std::vector<double> Detector::normalized_input(const Image& image) const {
    std::vector<double> v(image.pixels.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        v[i] = (image.pixels[i] - arch_.input_center) * arch_.input_gain;
    return v;
}

DetectorOutput Detector::run_forward(const ParamVector& p, const Image& image,
                                     Activations* keep) const {
    check_shape(p, image);
    const int S = arch_.scene_size;
    const int C = arch_.in_channels;
    const int K = arch_.hidden;
    const int G = arch_.grid;
    const int NC = arch_.num_classes;
    const int stride = arch_.stride();
    const Offsets off = offsets_for(layout_);
    const double* w = p.values.data();

    const std::vector<double> input = normalized_input(image);
    std::vector<double> hidden(static_cast<std::size_t>(K) * S * S);
    for (int k = 0; k < K; ++k) {
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                double a = w[off.conv_b + k];
                for (int c = 0; c < C; ++c) {
                    for (int dy = 0; dy < 3; ++dy) {
                        const int yy = y + dy - 1;
                        if (yy < 0 || yy >= S) continue;
                        for (int dx = 0; dx < 3; ++dx) {
                            const int xx = x + dx - 1;
                            if (xx < 0 || xx >= S) continue;
                            a += w[off.conv_w + ((static_cast<std::size_t>(k) * C + c) * 3 + dy) * 3 + dx] *
                                 input[(static_cast<std::size_t>(yy) * S + xx) * C + c];
                        }
                    }
                }
                hidden[(static_cast<std::size_t>(k) * S + y) * S + x] = std::tanh(a);
            }
        }
    }

    const int cells = G * G;
    const double inv_area = 1.0 / (stride * stride);
    std::vector<double> pooled(static_cast<std::size_t>(cells) * K, 0.0);
    for (int k = 0; k < K; ++k) {
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                const int cell = (y / stride) * G + (x / stride);
                pooled[static_cast<std::size_t>(cell) * K + k] +=
                    hidden[(static_cast<std::size_t>(k) * S + y) * S + x];
            }
        }
    }
    for (auto& v : pooled) v *= inv_area;

    DetectorOutput out;
    out.grid = G;
    out.num_classes = NC;
    out.stride = stride;
    out.class_logits.assign(static_cast<std::size_t>(cells) * NC, 0.0);
    out.objectness.assign(cells, 0.0);
    out.box_logits.assign(static_cast<std::size_t>(cells) * 4, 0.0);
    out.offsets.assign(static_cast<std::size_t>(cells) * 4, 0.0);

    for (int cell = 0; cell < cells; ++cell) {
        const double* f = &pooled[static_cast<std::size_t>(cell) * K];
        for (int c = 0; c < NC; ++c) {
            double z = w[off.cls_b + c];
            for (int k = 0; k < K; ++k) z += w[off.cls_w + static_cast<std::size_t>(c) * K + k] * f[k];
            out.class_logits[static_cast<std::size_t>(cell) * NC + c] = z;
        }
        double o = w[off.obj_b];
        for (int k = 0; k < K; ++k) o += w[off.obj_w + k] * f[k];
        out.objectness[cell] = o;
        for (int j = 0; j < 4; ++j) {
            double z = w[off.box_b + j];
            for (int k = 0; k < K; ++k) z += w[off.box_w + static_cast<std::size_t>(j) * K + k] * f[k];
            out.box_logits[static_cast<std::size_t>(cell) * 4 + j] = z;
            out.offsets[static_cast<std::size_t>(cell) * 4 + j] = stride * softplus(z);
        }
    }

    for (double v : out.objectness)
        if (!std::isfinite(v)) throw NumericError("forward produced a non-finite objectness logit");

    if (keep != nullptr) {
        keep->hidden = std::move(hidden);
        keep->pooled = std::move(pooled);
    }
    return out;
}

DetectorOutput Detector::forward(const ParamVector& p, const Image& image) const {
    return run_forward(p, image, nullptr);
}

std::vector<DetectorOutput> Detector::forward_batch(const ParamVector& p,
                                                    std::span<const Image> images) const {
    std::vector<DetectorOutput> out;
    out.reserve(images.size());
    for (const auto& im : images) out.push_back(forward(p, im));
    return out;
}

DetectionSet Detector::decode(const DetectorOutput& out, const DecodeConfig& cfg) const {
    const int G = out.grid;
    const int NC = out.num_classes;
    const double limit = arch_.scene_size;
    DetectionSet candidates;
    for (int cell = 0; cell < out.cells(); ++cell) {
        const double* z = &out.class_logits[static_cast<std::size_t>(cell) * NC];
        const int best = static_cast<int>(std::max_element(z, z + NC) - z);
        double denom = 0.0;
        for (int c = 0; c < NC; ++c) denom += std::exp(z[c] - z[best]);
        const double score = sigmoid(out.objectness[cell]) / denom;
        if (score < cfg.score_threshold) continue;

        const double cx = (cell % G + 0.5) * out.stride;
        const double cy = (cell / G + 0.5) * out.stride;
        const double* d = &out.offsets[static_cast<std::size_t>(cell) * 4];
        const double x0 = std::clamp(cx - d[0], 0.0, limit);
        const double y0 = std::clamp(cy - d[1], 0.0, limit);
        const double x1 = std::clamp(cx + d[2], 0.0, limit);
        const double y1 = std::clamp(cy + d[3], 0.0, limit);
        if (!(x1 > x0 && y1 > y0)) continue;
        candidates.push_back(Detection{best, score, Box::from_corners(x0, y0, x1, y1),
                                       TeacherSource::GroundTruth, cell});
    }
    return non_max_suppression(std::move(candidates), cfg.nms_iou);
}

DetectionSet Detector::detect(const ParamVector& p, const Image& image,
                              const DecodeConfig& cfg) const {
    return decode(forward(p, image), cfg);
}

void Detector::backward(const ParamVector& p, const Image& image, const Activations& acts,
                        const HeadLoss& head, std::vector<double>& grad) const {
    const int S = arch_.scene_size;
    const int C = arch_.in_channels;
    const int K = arch_.hidden;
    const int G = arch_.grid;
    const int NC = arch_.num_classes;
    const int stride = arch_.stride();
    const int cells = G * G;
    const Offsets off = offsets_for(layout_);
    const double* w = p.values.data();
    grad.assign(p.values.size(), 0.0);

    std::vector<double> d_pooled(static_cast<std::size_t>(cells) * K, 0.0);
    for (int cell = 0; cell < cells; ++cell) {
        const double* f = &acts.pooled[static_cast<std::size_t>(cell) * K];
        double* df = &d_pooled[static_cast<std::size_t>(cell) * K];
        for (int c = 0; c < NC; ++c) {
            const double g = head.d_class_logits[static_cast<std::size_t>(cell) * NC + c];
            if (g == 0.0) continue;
            grad[off.cls_b + c] += g;
            for (int k = 0; k < K; ++k) {
                grad[off.cls_w + static_cast<std::size_t>(c) * K + k] += g * f[k];
                df[k] += g * w[off.cls_w + static_cast<std::size_t>(c) * K + k];
            }
        }
        const double go = head.d_objectness[cell];
        grad[off.obj_b] += go;
        for (int k = 0; k < K; ++k) {
            grad[off.obj_w + k] += go * f[k];
            df[k] += go * w[off.obj_w + k];
        }
        for (int j = 0; j < 4; ++j) {
            const double g = head.d_box_logits[static_cast<std::size_t>(cell) * 4 + j];
            if (g == 0.0) continue;
            grad[off.box_b + j] += g;
            for (int k = 0; k < K; ++k) {
                grad[off.box_w + static_cast<std::size_t>(j) * K + k] += g * f[k];
                df[k] += g * w[off.box_w + static_cast<std::size_t>(j) * K + k];
            }
        }
    }

    const std::vector<double> input = normalized_input(image);
    const double inv_area = 1.0 / (stride * stride);
    for (int k = 0; k < K; ++k) {
        for (int y = 0; y < S; ++y) {
            for (int x = 0; x < S; ++x) {
                const int cell = (y / stride) * G + (x / stride);
                const double h = acts.hidden[(static_cast<std::size_t>(k) * S + y) * S + x];
                const double da =
                    d_pooled[static_cast<std::size_t>(cell) * K + k] * inv_area * (1.0 - h * h);
                if (da == 0.0) continue;
                grad[off.conv_b + k] += da;
                for (int c = 0; c < C; ++c) {
                    for (int dy = 0; dy < 3; ++dy) {
                        const int yy = y + dy - 1;
                        if (yy < 0 || yy >= S) continue;
                        for (int dx = 0; dx < 3; ++dx) {
                            const int xx = x + dx - 1;
                            if (xx < 0 || xx >= S) continue;
                            grad[off.conv_w + ((static_cast<std::size_t>(k) * C + c) * 3 + dy) * 3 + dx] +=
                                da * input[(static_cast<std::size_t>(yy) * S + xx) * C + c];
                        }
                    }
                }
            }
        }
    }
}

LossResult Detector::supervised_loss(const ParamVector& p, const Image& image,
                                     std::span<const GroundTruthObject> labels) const {
    Activations acts;
    const DetectorOutput out = run_forward(p, image, &acts);
    const HeadLoss head = head_loss(out, labels);
    LossResult r;
    r.loss = head.loss;
    r.objectness = head.objectness;
    r.classification = head.classification;
    r.localization = head.localization;
    r.positives = head.positives;
    backward(p, image, acts, head, r.grad);
    return r;
}

LossResult Detector::unsupervised_loss(const ParamVector& p, const Image& image,
                                       const DetectionSet& pseudo) const {
    const auto targets = detections_as_targets(pseudo);
    return supervised_loss(p, image, targets);
}

}  // namespace d3t
