#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "d3t/box.hpp"
#include "d3t/synthgen.hpp"

namespace d3t {

/// Micro anchor-free detector:
///   input S x S x C -> 3x3 conv (hidden channels, zero padding) -> tanh
///   -> average pool to a G x G grid -> per-cell linear heads
///      (class logits, objectness logit, 4 box-distance logits).
struct ArchConfig {
    int scene_size = 32;
    int in_channels = 1;
    int hidden = 8;
    int grid = 8;
    int num_classes = 2;
    // Pixels enter the conv as (p - input_center) * input_gain.
    double input_center = 0.5;
    double input_gain = 4.0;

    [[nodiscard]] int stride() const { return scene_size / grid; }
    [[nodiscard]] std::size_t param_count() const;
    void validate() const;

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct LayoutEntry {
    std::string name;
    std::size_t offset = 0;
    std::vector<int> shape;

    [[nodiscard]] std::size_t size() const;
    friend bool operator==(const LayoutEntry&, const LayoutEntry&) = default;
};

/// Flat weights plus the named layout that gives them meaning.
struct ParamVector {
    std::vector<double> values;
    std::vector<LayoutEntry> layout;

    [[nodiscard]] std::size_t size() const { return values.size(); }
    [[nodiscard]] bool same_layout(const ParamVector& other) const { return layout == other.layout; }
    [[nodiscard]] const LayoutEntry& entry(const std::string& name) const;
    /// FNV-1a over the raw value bytes.
    [[nodiscard]] std::uint64_t hash() const;

    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

/// Throws NumericError if any value is NaN or infinite.
void check_finite(const ParamVector& p, const char* what);

/// Each value rounded through f32, i.e. exactly what a checkpoint stores.
ParamVector round_to_f32(const ParamVector& p);

/// Raw head outputs. Cell index = gy * grid + gx.
struct DetectorOutput {
    int grid = 0;
    int num_classes = 0;
    double stride = 0.0;
    std::vector<double> class_logits;  // grid*grid*num_classes
    std::vector<double> objectness;    // grid*grid
    std::vector<double> box_logits;    // grid*grid*4, pre-activation
    std::vector<double> offsets;       // grid*grid*4, l,t,r,b in pixels, = stride * softplus(logit)

    [[nodiscard]] int cells() const { return grid * grid; }
    friend bool operator==(const DetectorOutput&, const DetectorOutput&) = default;
};

enum class TeacherSource { RGB, Thermal, GroundTruth };

const char* to_string(TeacherSource s);

struct Detection {
    int class_id = 0;
    double score = 0.0;
    Box box;
    TeacherSource source = TeacherSource::GroundTruth;
    int cell = -1;

    friend bool operator==(const Detection&, const Detection&) = default;
};

/// Sorted by score, highest first.
using DetectionSet = std::vector<Detection>;

struct DecodeConfig {
    double score_threshold = 0.05;
    double nms_iou = 0.5;

    void validate() const;
    friend bool operator==(const DecodeConfig&, const DecodeConfig&) = default;
};

/// Class-agnostic greedy NMS over an arbitrary candidate list. Order of the
/// result: score descending, ties by cell index ascending.
DetectionSet non_max_suppression(DetectionSet candidates, double nms_iou);

struct LossResult {
    double loss = 0.0;
    double objectness = 0.0;
    double classification = 0.0;
    double localization = 0.0;
    int positives = 0;
    std::vector<double> grad;  // same length as the parameter vector
};

/// Loss terms and their gradient with respect to the raw head outputs.
struct HeadLoss {
    double loss = 0.0;
    double objectness = 0.0;
    double classification = 0.0;
    double localization = 0.0;
    int positives = 0;
    std::vector<double> d_class_logits;
    std::vector<double> d_objectness;
    std::vector<double> d_box_logits;
};

/// Index of the object each cell is assigned to, or -1. A cell is positive for
/// the object whose box contains the cell center; ties go to the smaller box,
/// then to the lower object index. An object that covers no cell center falls
/// back to the cell containing its own center, if that cell is still free.
std::vector<int> assign_cells(int grid, double stride, std::span<const GroundTruthObject> targets);

/// BCE on objectness (mean over all cells) + CE on class and smooth-L1 on
/// stride-normalised box distances (mean over positive cells), weighted 1:1:1.
HeadLoss head_loss(const DetectorOutput& out, std::span<const GroundTruthObject> targets);

std::vector<GroundTruthObject> detections_as_targets(const DetectionSet& dets);

class Detector {
public:
    explicit Detector(ArchConfig arch);

    [[nodiscard]] const ArchConfig& arch() const { return arch_; }

    [[nodiscard]] std::vector<LayoutEntry> layout() const;
    [[nodiscard]] ParamVector zeros() const;
    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.
    [[nodiscard]] ParamVector init_params(std::uint64_t seed) const;

    [[nodiscard]] DetectorOutput forward(const ParamVector& p, const Image& image) const;
    [[nodiscard]] std::vector<DetectorOutput> forward_batch(const ParamVector& p,
                                                            std::span<const Image> images) const;
    [[nodiscard]] DetectionSet decode(const DetectorOutput& out, const DecodeConfig& cfg) const;
    [[nodiscard]] DetectionSet detect(const ParamVector& p, const Image& image,
                                      const DecodeConfig& cfg) const;

    [[nodiscard]] LossResult supervised_loss(const ParamVector& p, const Image& image,
                                             std::span<const GroundTruthObject> labels) const;
    [[nodiscard]] LossResult unsupervised_loss(const ParamVector& p, const Image& image,
                                               const DetectionSet& pseudo) const;

private:
    struct Activations;

    void check_shape(const ParamVector& p, const Image& image) const;
    [[nodiscard]] std::vector<double> normalized_input(const Image& image) const;
    DetectorOutput run_forward(const ParamVector& p, const Image& image, Activations* keep) const;
    void backward(const ParamVector& p, const Image& image, const Activations& acts,
                  const HeadLoss& head, std::vector<double>& grad) const;

    ArchConfig arch_;
    std::vector<LayoutEntry> layout_;
};

}  // namespace d3t
