#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>

#include "d3t/detector.hpp"
#include "d3t/errors.hpp"
#include "d3t/synthgen.hpp"
#include "oracles/oracles.hpp"

using namespace d3t;

namespace {

double softplus_ref(double x) { return std::log1p(std::exp(x)); }
double inv_softplus(double y) { return std::log(std::expm1(y)); }

ParamVector random_params(const Detector& det, std::uint64_t seed, double scale) {
    ParamVector p = det.zeros();
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& v : p.values) v = u(eng);
    return p;
}

DetectorOutput blank_output(int grid, int nc, double stride) {
    DetectorOutput out;
    out.grid = grid;
    out.num_classes = nc;
    out.stride = stride;
    out.class_logits.assign(static_cast<std::size_t>(grid) * grid * nc, 0.0);
    out.objectness.assign(static_cast<std::size_t>(grid) * grid, 0.0);
    out.box_logits.assign(static_cast<std::size_t>(grid) * grid * 4, 0.0);
    out.offsets.assign(static_cast<std::size_t>(grid) * grid * 4, stride * std::log(2.0));
    return out;
}

std::vector<double> flat(const ParamVector& p) { return p.values; }

}  // namespace

TEST_CASE("parameter count matches a hand count for the default architecture") {
    // conv 8*1*3*3 + 8, class 2*8 + 2, objectness 8 + 1, box 4*8 + 4
    const std::size_t hand = 72 + 8 + 16 + 2 + 8 + 1 + 32 + 4;
    CHECK(hand == 143);
    const Detector det{ArchConfig{}};
    CHECK(ArchConfig{}.param_count() == hand);
    CHECK(det.zeros().size() == hand);
    CHECK(det.init_params(1).size() == hand);

    const auto layout = det.layout();
    REQUIRE(layout.size() == 8);
    CHECK(layout[0].name == "conv.weight");
    CHECK(layout[0].shape == std::vector<int>{8, 1, 3, 3});
    std::size_t offset = 0;
    for (const auto& e : layout) {
        CHECK(e.offset == offset);
        offset += e.size();
    }
    CHECK(offset == hand);
}

TEST_CASE("invalid architecture is a configuration error") {
    ArchConfig a;
    a.grid = 7;
    CHECK_THROWS_AS(Detector{a}, ConfigError);
    a = ArchConfig{};
    a.hidden = 0;
    CHECK_THROWS_AS(Detector{a}, ConfigError);
}

TEST_CASE("init_params is seeded and bounded by 1/sqrt(fan_in)") {
    const Detector det{ArchConfig{}};
    const auto a = det.init_params(3);
    CHECK(a == det.init_params(3));
    CHECK_FALSE(a == det.init_params(4));
    const auto& conv = a.entry("conv.weight");
    for (std::size_t i = 0; i < conv.size(); ++i)
        CHECK(std::abs(a.values[conv.offset + i]) <= 1.0 / 3.0);
    const auto& box = a.entry("box.weight");
    for (std::size_t i = 0; i < box.size(); ++i)
        CHECK(std::abs(a.values[box.offset + i]) <= 1.0 / std::sqrt(8.0));
}

TEST_CASE("zero weights: every cell emits the same neutral prediction") {
    const Detector det{ArchConfig{}};
    const auto p = det.zeros();
    const auto s = render_scene(1, 0, Domain::Source, DomainGapConfig{}, SceneGeometry{});
    const auto out = det.forward(p, s.image);
    CHECK(out.grid == 8);
    CHECK(out.stride == 4.0);
    for (double v : out.objectness) CHECK(v == 0.0);
    for (double v : out.class_logits) CHECK(v == 0.0);
    for (double v : out.offsets) CHECK(v == doctest::Approx(4.0 * softplus_ref(0.0)).epsilon(1e-15));

    // identical detections for any input of the same shape
    const auto other = render_scene(2, 5, Domain::Target, DomainGapConfig{}, SceneGeometry{});
    const DecodeConfig dc{0.05, 0.5};
    CHECK(det.decode(out, dc) == det.detect(p, other.image, dc));
    // sigmoid(0) * 1/2 = 0.25 < 0.9
    CHECK(det.decode(out, DecodeConfig{0.9, 0.5}).empty());
}

TEST_CASE("forward, losses and decode are pure") {
    const Detector det{ArchConfig{}};
    const auto p = det.init_params(9);
    const auto s = render_scene(1, 1, Domain::Source, DomainGapConfig{}, SceneGeometry{});
    CHECK(det.forward(p, s.image) == det.forward(p, s.image));
    const auto a = det.supervised_loss(p, s.image, s.objects);
    const auto b = det.supervised_loss(p, s.image, s.objects);
    CHECK(a.loss == b.loss);
    CHECK(a.grad == b.grad);
}

TEST_CASE("shape mismatches and non-finite parameters are rejected") {
    const Detector det{ArchConfig{}};
    auto p = det.init_params(1);
    CHECK_THROWS_AS((void)det.forward(p, Image(16, 16, 1)), ConfigError);
    p.values[3] = std::numeric_limits<double>::quiet_NaN();
    const auto s = render_scene(1, 0, Domain::Source, DomainGapConfig{}, SceneGeometry{});
    CHECK_THROWS_AS((void)det.supervised_loss(p, s.image, s.objects), NumericError);
}

TEST_CASE("analytic gradients match central differences") {
    const Detector det{ArchConfig{}};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CAPTURE(seed);
        const auto s = render_scene(seed, 0, Domain::Source, DomainGapConfig{}, SceneGeometry{});
        const auto p = random_params(det, seed, 0.5);

        const auto sup = det.supervised_loss(p, s.image, s.objects);
        const auto num_sup = oracle::central_difference(
            [&](const std::vector<double>& x) {
                ParamVector q = p;
                q.values = x;
                return det.supervised_loss(q, s.image, s.objects).loss;
            },
            flat(p));
        CHECK(oracle::max_relative_error(sup.grad, num_sup) < 1e-3);

        // pseudo-labels: a teacher's detections on a target scene
        const auto t = render_scene(seed, 100, Domain::Target, DomainGapConfig{}, SceneGeometry{});
        DetectionSet pseudo = det.detect(random_params(det, seed + 50, 0.5), t.image, DecodeConfig{0.2, 0.5});
        const auto uns = det.unsupervised_loss(p, t.image, pseudo);
        const auto num_uns = oracle::central_difference(
            [&](const std::vector<double>& x) {
                ParamVector q = p;
                q.values = x;
                return det.unsupervised_loss(q, t.image, pseudo).loss;
            },
            flat(p));
        CHECK(oracle::max_relative_error(uns.grad, num_uns) < 1e-3);
    }
}

TEST_CASE("losses are non-negative") {
    const Detector det{ArchConfig{}};
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto s = render_scene(seed, 3, Domain::Source, DomainGapConfig{}, SceneGeometry{});
        const auto p = random_params(det, seed, 1.0);
        const auto r = det.supervised_loss(p, s.image, s.objects);
        CHECK(r.loss >= 0.0);
        CHECK(r.objectness >= 0.0);
        CHECK(r.classification >= 0.0);
        CHECK(r.localization >= 0.0);
    }
}

TEST_CASE("empty labels leave only the all-negative objectness term") {
    const Detector det{ArchConfig{}};
    const auto p = det.init_params(2);
    const auto s = render_scene(1, 2, Domain::Source, DomainGapConfig{}, SceneGeometry{});
    const auto r = det.supervised_loss(p, s.image, {});
    CHECK(r.positives == 0);
    CHECK(r.classification == 0.0);
    CHECK(r.localization == 0.0);
    const auto out = det.forward(p, s.image);
    double expect = 0.0;
    for (double o : out.objectness) expect += softplus_ref(o);
    expect /= out.cells();
    CHECK(r.loss == doctest::Approx(expect).epsilon(1e-12));
    CHECK(r.objectness == r.loss);

    const auto u = det.unsupervised_loss(p, s.image, {});
    CHECK(u.loss == r.loss);
    CHECK(u.grad == r.grad);
}

TEST_CASE("ground truth used as pseudo-labels gives the supervised loss bitwise") {
    const Detector det{ArchConfig{}};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto s = render_scene(seed, 7, Domain::Source, DomainGapConfig{}, SceneGeometry{});
        const auto p = det.init_params(seed);
        DetectionSet pseudo;
        for (const auto& o : s.objects) pseudo.push_back(Detection{o.class_id, 1.0, o.box, TeacherSource::Thermal, -1});
        const auto a = det.supervised_loss(p, s.image, s.objects);
        const auto b = det.unsupervised_loss(p, s.image, pseudo);
        CHECK(a.loss == b.loss);
        CHECK(a.grad == b.grad);
    }
}

TEST_CASE("saturated logits that reproduce the targets give a loss below 1e-6") {
    std::vector<GroundTruthObject> targets = {{0, Box{10, 10, 9, 9}}, {1, Box{24, 20, 5, 14}}};
    auto out = blank_output(8, 2, 4.0);
    const auto owner = assign_cells(8, 4.0, targets);
    for (int cell = 0; cell < 64; ++cell) {
        const int k = owner[static_cast<std::size_t>(cell)];
        out.objectness[static_cast<std::size_t>(cell)] = k >= 0 ? 20.0 : -20.0;
        if (k < 0) continue;
        const auto& b = targets[static_cast<std::size_t>(k)].box;
        out.class_logits[static_cast<std::size_t>(cell) * 2 + targets[static_cast<std::size_t>(k)].class_id] = 20.0;
        out.class_logits[static_cast<std::size_t>(cell) * 2 + 1 - targets[static_cast<std::size_t>(k)].class_id] = -20.0;
        const double cx = (cell % 8 + 0.5) * 4.0, cy = (cell / 8 + 0.5) * 4.0;
        const double d[4] = {cx - b.x0(), cy - b.y0(), b.x1() - cx, b.y1() - cy};
        for (int j = 0; j < 4; ++j) {
            out.box_logits[static_cast<std::size_t>(cell) * 4 + j] = inv_softplus(d[j] / 4.0);
            out.offsets[static_cast<std::size_t>(cell) * 4 + j] = d[j];
        }
    }
    const auto h = head_loss(out, targets);
    CHECK(h.positives > 0);
    CHECK(h.loss < 1e-6);
}

TEST_CASE("cell assignment: center containment, smaller box wins, fallback for slivers") {
    // cell (gx=2, gy=2) has center (10, 10)
    std::vector<GroundTruthObject> nested = {{0, Box{10, 10, 12, 12}}, {1, Box{10, 10, 5, 5}}};
    const auto owner = assign_cells(8, 4.0, nested);
    CHECK(owner[2 * 8 + 2] == 1);
    CHECK(owner[1 * 8 + 1] == 0);  // center (6,6) lies only in the big box
    CHECK(owner[0] == -1);

    // a 1-pixel sliver between cell centers claims the cell containing its center
    std::vector<GroundTruthObject> sliver = {{1, Box{12.0, 13.0, 1.0, 1.0}}};
    const auto o2 = assign_cells(8, 4.0, sliver);
    CHECK(o2[3 * 8 + 3] == 0);
    CHECK(std::count(o2.begin(), o2.end(), 0) == 1);
}

TEST_CASE("decode: a single hot cell yields one box around its center") {
    const Detector det{ArchConfig{}};
    auto out = blank_output(8, 2, 4.0);
    const int cell = 2 * 8 + 3;  // center (14, 10)
    out.objectness[cell] = 10.0;
    out.class_logits[cell * 2 + 1] = 5.0;
    const double d[4] = {3.0, 2.0, 4.0, 6.0};
    for (int j = 0; j < 4; ++j) out.offsets[static_cast<std::size_t>(cell) * 4 + j] = d[j];
    const auto dets = det.decode(out, DecodeConfig{0.3, 0.5});
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].class_id == 1);
    CHECK(dets[0].cell == cell);
    const double expect_score = (1.0 / (1.0 + std::exp(-10.0))) * (1.0 / (1.0 + std::exp(-5.0)));
    CHECK(dets[0].score == doctest::Approx(expect_score).epsilon(1e-12));
    CHECK(dets[0].box.x0() == doctest::Approx(11.0));
    CHECK(dets[0].box.y0() == doctest::Approx(8.0));
    CHECK(dets[0].box.x1() == doctest::Approx(18.0));
    CHECK(dets[0].box.y1() == doctest::Approx(16.0));

    CHECK(det.decode(out, DecodeConfig{0.999, 0.5}).empty());
}

TEST_CASE("NMS agrees with a brute-force suppression oracle") {
    std::mt19937_64 eng(42);
    std::uniform_real_distribution<double> pos(4.0, 28.0), size(2.0, 10.0);
    std::uniform_int_distribution<int> count(1, 10), coarse(0, 4);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = count(eng);
        DetectionSet cands;
        for (int k = 0; k < n; ++k) {
            // coarse scores force ties, broken by cell index
            const double score = 0.2 * coarse(eng) + 0.1;
            cands.push_back(Detection{k % 2, score, Box{pos(eng), pos(eng), size(eng), size(eng)},
                                      TeacherSource::GroundTruth, 63 - k});
        }
        for (double thr : {0.1, 0.3, 0.5}) {
            auto ranked = cands;
            std::stable_sort(ranked.begin(), ranked.end(), [](const Detection& a, const Detection& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.cell < b.cell;
            });
            std::vector<Box> boxes;
            for (const auto& d : ranked) boxes.push_back(d.box);
            const auto keep = oracle::brute_force_nms(boxes, thr);
            DetectionSet expect;
            for (auto k : keep) expect.push_back(ranked[k]);
            CHECK(non_max_suppression(cands, thr) == expect);
        }
    }
}

TEST_CASE("two overlapping cells: only the higher score survives") {
    DetectionSet c = {{0, 0.6, Box{10, 10, 8, 8}, TeacherSource::GroundTruth, 5},
                      {0, 0.9, Box{11, 10, 8, 8}, TeacherSource::GroundTruth, 6}};
    const auto kept = non_max_suppression(c, 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].score == 0.9);
}
