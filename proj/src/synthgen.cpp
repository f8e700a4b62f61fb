#include "d3t/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "d3t/errors.hpp"

namespace d3t {

namespace {

// Sub-stream indices under a per-sample key.
constexpr std::uint64_t kLayoutStream = 1;
constexpr std::uint64_t kGapStream = 2;

// Sub-stream indices under an augmentation key.
constexpr std::uint64_t kFlipStream = 0;
constexpr std::uint64_t kWeakNoiseStream = 1;
constexpr std::uint64_t kJitterStream = 2;
constexpr std::uint64_t kStrongNoiseStream = 3;
constexpr std::uint64_t kCutoutStream = 4;

struct PlacedObject {
    GroundTruthObject gt;
    double polarity = 1.0;
    double stripe_freq = 0.0;
    double stripe_phase = 0.0;
};

double uniform(std::mt19937_64& eng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(eng);
}

void clamp_unit(Image& image) {
    for (auto& p : image.pixels) p = std::clamp(p, 0.0f, 1.0f);
}

void add_noise(Image& image, double sigma, std::mt19937_64 eng) {
    if (sigma <= 0.0) return;
    std::normal_distribution<double> n(0.0, sigma);
    for (auto& p : image.pixels) p = static_cast<float>(p + n(eng));
}

}  // namespace

const char* to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

double Image::mean() const {
    if (pixels.empty()) return 0.0;
    double sum = 0.0;
    for (float p : pixels) sum += p;
    return sum / static_cast<double>(pixels.size());
}

UnlabeledSample strip_labels(const SceneSample& s) {
    return UnlabeledSample{s.image, s.domain, s.sample_id};
}

std::vector<UnlabeledSample> strip_labels(std::span<const SceneSample> samples) {
    std::vector<UnlabeledSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(strip_labels(s));
    return out;
}

void DomainGapConfig::validate() const {
    if (!(contrast_scale > 0.0)) throw ConfigError("gap.contrast_scale must be > 0");
    if (!(noise_sigma >= 0.0)) throw ConfigError("gap.noise_sigma must be >= 0");
    if (!(texture_drop >= 0.0 && texture_drop <= 1.0))
        throw ConfigError("gap.texture_drop must lie in [0,1]");
}

void SceneGeometry::validate() const {
    if (height <= 0 || width <= 0) throw ConfigError("scene dimensions must be positive");
    if (num_classes != 2) throw ConfigError("scene geometry supports exactly 2 classes");
    if (min_objects < 0 || max_objects < min_objects)
        throw ConfigError("object count range is invalid");
    if (!(round_size_min > 0.0 && round_size_min <= round_size_max))
        throw ConfigError("round object size range is invalid");
    if (!(thin_width_min > 0.0 && thin_width_min <= thin_width_max))
        throw ConfigError("thin object width range is invalid");
    if (!(thin_length_min > 0.0 && thin_length_min <= thin_length_max))
        throw ConfigError("thin object length range is invalid");
    const double largest_w = std::max(round_size_max, thin_width_max);
    const double largest_h = std::max(round_size_max, thin_length_max);
    if (largest_w > width || largest_h > height)
        throw ConfigError("object larger than scene");
    if (!(bright_fraction >= 0.0 && bright_fraction <= 1.0))
        throw ConfigError("bright_fraction must lie in [0,1]");
    if (!(edge_softness > 0.0)) throw ConfigError("edge_softness must be > 0");
    if (!(dome >= 0.0 && dome <= 1.0)) throw ConfigError("dome must lie in [0,1]");
    if (!(max_overlap_iou >= 0.0 && max_overlap_iou < 1.0))
        throw ConfigError("max_overlap_iou must lie in [0,1)");
}

SceneSample render_scene(std::uint64_t seed, std::int64_t sample_id, Domain domain,
                         const DomainGapConfig& gap, const SceneGeometry& geo) {
    const RngKey key = RngKey(seed).child(static_cast<std::uint64_t>(sample_id));
    auto eng = key.child(kLayoutStream).engine();

    const int W = geo.width;
    const int H = geo.height;

    // Layout draws happen in a fixed order regardless of domain, so the two
    // domains share one distribution over layouts.
    const double bg_fx = uniform(eng, 0.1, 0.5);
    const double bg_fy = uniform(eng, 0.1, 0.5);
    const double bg_phase = uniform(eng, 0.0, 2.0 * std::numbers::pi);
    const int n_objects =
        std::uniform_int_distribution<int>(geo.min_objects, geo.max_objects)(eng);

    std::vector<PlacedObject> placed;
    for (int k = 0; k < n_objects; ++k) {
        PlacedObject obj;
        obj.gt.class_id = std::uniform_int_distribution<int>(0, 1)(eng);
        double w = 0.0;
        double h = 0.0;
        if (obj.gt.class_id == 0) {
            w = h = uniform(eng, geo.round_size_min, geo.round_size_max);
        } else {
            w = uniform(eng, geo.thin_width_min, geo.thin_width_max);
            h = uniform(eng, geo.thin_length_min, geo.thin_length_max);
        }
        obj.polarity = uniform(eng, 0.0, 1.0) < geo.bright_fraction ? 1.0 : -1.0;
        obj.stripe_freq = uniform(eng, 0.8, 1.6);
        obj.stripe_phase = uniform(eng, 0.0, 2.0 * std::numbers::pi);

        bool ok = false;
        for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
            const double cx = uniform(eng, 0.5 * w, W - 0.5 * w);
            const double cy = uniform(eng, 0.5 * h, H - 0.5 * h);
            obj.gt.box = Box{cx, cy, w, h};
            ok = std::none_of(placed.begin(), placed.end(), [&](const PlacedObject& o) {
                return o.gt.box == obj.gt.box || iou(o.gt.box, obj.gt.box) > geo.max_overlap_iou;
            });
        }
        if (ok) placed.push_back(obj);
    }

    const bool target = domain == Domain::Target;
    const double texture_scale = target ? 1.0 - gap.texture_drop : 1.0;

    Image image(H, W, 1);
    for (int y = 0; y < H; ++y) {
        const double py = y + 0.5;
        for (int x = 0; x < W; ++x) {
            const double px = x + 0.5;
            double v = 0.5 + texture_scale * geo.texture_amplitude *
                                 std::sin(bg_fx * px + bg_fy * py + bg_phase);
            for (const auto& o : placed) {
                const auto& b = o.gt.box;
                const double dx = (px - b.cx) / (0.5 * b.w);
                const double dy = (py - b.cy) / (0.5 * b.h);
                const double r = std::sqrt(dx * dx + dy * dy);
                const double mask = 1.0 / (1.0 + std::exp((r - 1.0) / geo.edge_softness));
                const double stripes = texture_scale * geo.texture_amplitude *
                                       std::sin(o.stripe_freq * py + o.stripe_phase);
                v += o.polarity * mask * (geo.object_amplitude * (1.0 - geo.dome * std::min(r * r, 1.0)) + stripes);
            }
            image.at(y, x) = static_cast<float>(v);
        }
    }
    clamp_unit(image);

    if (target) {
        if (gap.intensity_inversion) {
            for (auto& p : image.pixels) p = 1.0f - p;
        }
        if (gap.contrast_scale != 1.0) {
            for (auto& p : image.pixels)
                p = static_cast<float>((p - 0.5) * gap.contrast_scale + 0.5);
        }
        add_noise(image, gap.noise_sigma, key.child(kGapStream).engine());
        clamp_unit(image);
    }

    SceneSample s;
    s.image = std::move(image);
    s.domain = domain;
    s.sample_id = sample_id;
    s.objects.reserve(placed.size());
    for (const auto& o : placed) s.objects.push_back(o.gt);
    return s;
}

std::vector<SceneSample> generate_split(std::uint64_t seed, Domain domain, std::int64_t first_id,
                                        std::int64_t count, const DomainGapConfig& gap,
                                        const SceneGeometry& geometry) {
    gap.validate();
    geometry.validate();
    if (count < 0 || first_id < 0) throw ConfigError("split size and first id must be >= 0");
    std::vector<SceneSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i)
        out.push_back(render_scene(seed, first_id + i, domain, gap, geometry));
    return out;
}

DatasetPair generate_dataset(std::uint64_t seed, std::int64_t n_source, std::int64_t n_target,
                             const DomainGapConfig& gap, const SceneGeometry& geometry) {
    if (n_source < 1 || n_target < 1)
        throw ConfigError("generate_dataset needs at least one sample per domain");
    DatasetPair d;
    d.source = generate_split(seed, Domain::Source, 0, n_source, gap, geometry);
    d.target = generate_split(seed, Domain::Target, n_source, n_target, gap, geometry);
    return d;
}

// ---------------------------------------------------------------------------

void AugmentConfig::validate() const {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("flip_prob must lie in [0,1]");
    if (!(weak_noise_sigma >= 0.0) || !(strong_noise_sigma >= 0.0))
        throw ConfigError("augmentation noise must be >= 0");
    if (!(cutout_max_area_fraction >= 0.0 && cutout_max_area_fraction <= 1.0))
        throw ConfigError("cutout_max_area_fraction must lie in [0,1]");
    if (!(contrast_jitter >= 0.0 && contrast_jitter < 1.0))
        throw ConfigError("contrast_jitter must lie in [0,1)");
}

bool draws_flip(RngKey key, const AugmentConfig& cfg) {
    auto eng = key.child(kFlipStream).engine();
    return std::uniform_real_distribution<double>(0.0, 1.0)(eng) < cfg.flip_prob;
}

void flip_horizontal(Image& image) {
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width / 2; ++x) {
            for (int c = 0; c < image.channels; ++c)
                std::swap(image.at(y, x, c), image.at(y, image.width - 1 - x, c));
        }
    }
}

Box flip_box(const Box& box, int scene_width) {
    return Box{scene_width - box.cx, box.cy, box.w, box.h};
}

void apply_cutout(Image& image, const PixelRect& rect) {
    const int x0 = std::clamp(rect.x, 0, image.width);
    const int y0 = std::clamp(rect.y, 0, image.height);
    const int x1 = std::clamp(rect.x + rect.w, 0, image.width);
    const int y1 = std::clamp(rect.y + rect.h, 0, image.height);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < image.channels; ++c) image.at(y, x, c) = 0.0f;
}

Image weak_augment(const Image& image, RngKey key, const AugmentConfig& cfg) {
    Image out = image;
    if (draws_flip(key, cfg)) flip_horizontal(out);
    if (cfg.weak_noise_sigma > 0.0) {
        add_noise(out, cfg.weak_noise_sigma, key.child(kWeakNoiseStream).engine());
        clamp_unit(out);
    }
    return out;
}

Image strong_augment(const Image& image, RngKey key, const AugmentConfig& cfg) {
    Image out = image;
    if (draws_flip(key, cfg)) flip_horizontal(out);

    if (cfg.contrast_jitter > 0.0) {
        auto eng = key.child(kJitterStream).engine();
        const double factor = uniform(eng, 1.0 - cfg.contrast_jitter, 1.0 + cfg.contrast_jitter);
        const double m = out.mean();
        for (auto& p : out.pixels) p = static_cast<float>((p - m) * factor + m);
    }
    add_noise(out, cfg.strong_noise_sigma, key.child(kStrongNoiseStream).engine());

    if (cfg.cutout_max_area_fraction > 0.0) {
        auto eng = key.child(kCutoutStream).engine();
        const double side = std::sqrt(cfg.cutout_max_area_fraction);
        const int max_w = static_cast<int>(std::floor(side * out.width));
        const int max_h = static_cast<int>(std::floor(side * out.height));
        PixelRect r;
        r.w = std::uniform_int_distribution<int>(0, max_w)(eng);
        r.h = std::uniform_int_distribution<int>(0, max_h)(eng);
        r.x = std::uniform_int_distribution<int>(0, out.width - r.w)(eng);
        r.y = std::uniform_int_distribution<int>(0, out.height - r.h)(eng);
        apply_cutout(out, r);
    }
    clamp_unit(out);
    return out;
}

namespace {

SceneSample with_image(const SceneSample& s, Image image, bool flipped) {
    SceneSample out;
    out.image = std::move(image);
    out.domain = s.domain;
    out.sample_id = s.sample_id;
    out.objects = s.objects;
    if (flipped) {
        for (auto& o : out.objects) o.box = flip_box(o.box, s.image.width);
    }
    return out;
}

}  // namespace

SceneSample weak_augment(const SceneSample& s, RngKey key, const AugmentConfig& cfg) {
    return with_image(s, weak_augment(s.image, key, cfg), draws_flip(key, cfg));
}

SceneSample strong_augment(const SceneSample& s, RngKey key, const AugmentConfig& cfg) {
    return with_image(s, strong_augment(s.image, key, cfg), draws_flip(key, cfg));
}

}  // namespace d3t
