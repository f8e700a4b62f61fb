#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "d3t/box.hpp"
#include "d3t/rng.hpp"

namespace d3t {

enum class Domain { Source, Target };

const char* to_string(Domain d);

/// Row-major H x W x C grid of f32 intensities.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 1;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    [[nodiscard]] float at(int y, int x, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float& at(int y, int x, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    [[nodiscard]] double mean() const;

    friend bool operator==(const Image&, const Image&) = default;
};

struct GroundTruthObject {
    int class_id = 0;
    Box box;

    friend bool operator==(const GroundTruthObject&, const GroundTruthObject&) = default;
};

struct SceneSample {
    Image image;
    std::vector<GroundTruthObject> objects;
    Domain domain = Domain::Source;
    std::int64_t sample_id = 0;

    friend bool operator==(const SceneSample&, const SceneSample&) = default;
};

/// A target-domain sample as the trainer sees it: the labels are gone.
struct UnlabeledSample {
    Image image;
    Domain domain = Domain::Target;
    std::int64_t sample_id = 0;

    friend bool operator==(const UnlabeledSample&, const UnlabeledSample&) = default;
};

UnlabeledSample strip_labels(const SceneSample& s);
std::vector<UnlabeledSample> strip_labels(std::span<const SceneSample> samples);

/// Appearance shift applied to target-domain renders.
struct DomainGapConfig {
    bool intensity_inversion = true;
    double contrast_scale = 0.7;
    double noise_sigma = 0.05;
    double texture_drop = 0.2;

    static DomainGapConfig neutral() { return {false, 1.0, 0.0, 0.0}; }
    void validate() const;

    friend bool operator==(const DomainGapConfig&, const DomainGapConfig&) = default;
};

/// Scene layout. Class 0 is a round blob, class 1 a thin vertical blob.
struct SceneGeometry {
    int height = 32;
    int width = 32;
    int num_classes = 2;
    int min_objects = 2;
    int max_objects = 5;
    double round_size_min = 8.0;
    double round_size_max = 10.0;
    double thin_width_min = 4.0;
    double thin_width_max = 5.0;
    double thin_length_min = 13.0;
    double thin_length_max = 16.0;
    /// Probability that an object is brighter than the background (before any inversion).
    double bright_fraction = 0.8;
    double object_amplitude = 0.3;
    double edge_softness = 0.08;
    // Intensity falls off as 1 - dome*r^2 towards the rim (0 = flat plateau).
    double dome = 0.7;
    double texture_amplitude = 0.08;
    double max_overlap_iou = 0.1;

    void validate() const;

    friend bool operator==(const SceneGeometry&, const SceneGeometry&) = default;
};

struct DatasetPair {
    std::vector<SceneSample> source;
    std::vector<SceneSample> target;
};

/// Renders one scene. A pure function of its arguments; Source renders ignore `gap`.
SceneSample render_scene(std::uint64_t seed, std::int64_t sample_id, Domain domain,
                         const DomainGapConfig& gap, const SceneGeometry& geometry);

/// Source samples get ids [0, n_source), target samples [n_source, n_source + n_target).
DatasetPair generate_dataset(std::uint64_t seed, std::int64_t n_source, std::int64_t n_target,
                             const DomainGapConfig& gap, const SceneGeometry& geometry);

/// Renders `count` samples of one domain with ids starting at `first_id`.
std::vector<SceneSample> generate_split(std::uint64_t seed, Domain domain, std::int64_t first_id,
                                        std::int64_t count, const DomainGapConfig& gap,
                                        const SceneGeometry& geometry);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
    double flip_prob = 0.5;
    double weak_noise_sigma = 0.02;
    double strong_noise_sigma = 0.08;
    /// Upper bound on the cutout patch area as a fraction of the scene.
    double cutout_max_area_fraction = 0.25;
    /// Contrast factor drawn from [1 - jitter, 1 + jitter].
    double contrast_jitter = 0.2;

    static AugmentConfig identity() { return {0.0, 0.0, 0.0, 0.0, 0.0}; }
    void validate() const;

    friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

struct PixelRect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
};

/// Whether the flip draw of `key` comes out "yes". Weak and strong views built
/// from the same key therefore agree on geometry.
bool draws_flip(RngKey key, const AugmentConfig& cfg);

void flip_horizontal(Image& image);
Box flip_box(const Box& box, int scene_width);
void apply_cutout(Image& image, const PixelRect& rect);

SceneSample weak_augment(const SceneSample& s, RngKey key, const AugmentConfig& cfg = {});
SceneSample strong_augment(const SceneSample& s, RngKey key, const AugmentConfig& cfg = {});
Image weak_augment(const Image& image, RngKey key, const AugmentConfig& cfg = {});
Image strong_augment(const Image& image, RngKey key, const AugmentConfig& cfg = {});

}  // namespace d3t
