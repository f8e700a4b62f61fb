#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "d3t/errors.hpp"
#include "d3t/eval.hpp"
#include "d3t/synthgen.hpp"
#include "oracles/oracles.hpp"

using namespace d3t;

namespace {

struct Instance {
    std::vector<DetectionSet> dets;
    std::vector<std::vector<GroundTruthObject>> gts;
};

// Micro-instances on a coarse grid so that ties in score and IoU occur often.
Instance random_instance(std::mt19937_64& eng) {
    std::uniform_int_distribution<int> n_img(1, 3), n_det(0, 6), n_gt(0, 4), coord(2, 6), size(2, 4), sc(1, 5);
    Instance in;
    const int images = n_img(eng);
    in.dets.resize(images);
    in.gts.resize(images);
    int total_det = n_det(eng), total_gt = std::max(1, n_gt(eng));
    std::uniform_int_distribution<int> pick(0, images - 1);
    for (int k = 0; k < total_gt; ++k)
        in.gts[pick(eng)].push_back({0, Box{2.0 * coord(eng), 2.0 * coord(eng), 2.0 * size(eng), 2.0 * size(eng)}});
    for (int k = 0; k < total_det; ++k)
        in.dets[pick(eng)].push_back(Detection{0, 0.2 * sc(eng),
                                               Box{2.0 * coord(eng), 2.0 * coord(eng), 2.0 * size(eng), 2.0 * size(eng)},
                                               TeacherSource::GroundTruth, k});
    return in;
}

DetectionSet as_detections(const std::vector<GroundTruthObject>& gt) {
    DetectionSet d;
    for (const auto& o : gt) d.push_back(Detection{o.class_id, 1.0, o.box, TeacherSource::GroundTruth, -1});
    return d;
}

}  // namespace

TEST_CASE("iou examples") {
    CHECK(iou(Box{5, 5, 4, 4}, Box{5, 5, 4, 4}) == 1.0);
    CHECK(iou(Box{2, 2, 4, 4}, Box{20, 20, 4, 4}) == 0.0);
    // corners (0,0)-(4,4) and (2,0)-(6,4): intersection 8, union 24
    CHECK(iou(Box::from_corners(0, 0, 4, 4), Box::from_corners(2, 0, 6, 4)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK_THROWS_AS(iou(Box{1, 1, 0, 4}, Box{1, 1, 2, 2}), ConfigError);
}

TEST_CASE("AP trivial cases") {
    std::vector<std::vector<GroundTruthObject>> gts = {{{0, Box{10, 10, 6, 6}}, {0, Box{20, 20, 4, 8}}}};
    std::vector<DetectionSet> perfect = {as_detections(gts[0])};
    CHECK(average_precision(perfect, gts) == 1.0);
    std::vector<DetectionSet> none = {{}};
    CHECK(average_precision(none, gts) == 0.0);
}

TEST_CASE("AP: three detections, two ground truths, against the enumeration oracle") {
    std::vector<std::vector<GroundTruthObject>> gts = {{{0, Box{10, 10, 6, 6}}, {0, Box{24, 24, 6, 6}}}};
    std::vector<DetectionSet> dets = {{
        {0, 0.9, Box{10, 10, 6, 6}, TeacherSource::GroundTruth, 0},
        {0, 0.8, Box{16, 16, 4, 4}, TeacherSource::GroundTruth, 1},
        {0, 0.7, Box{24, 25, 6, 6}, TeacherSource::GroundTruth, 2},
    }};
    // P/R: (1, .5), (.5, .5), (2/3, 1) -> 51 points at 1, 50 at 2/3
    const double hand = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
    CHECK(average_precision(dets, gts) == doctest::Approx(hand).epsilon(1e-12));
    CHECK(std::abs(average_precision(dets, gts) - oracle::brute_force_ap(dets, gts, 0.5)) < 1e-12);
}

TEST_CASE("AP matches brute-force precision-recall enumeration on random micro-instances") {
    std::mt19937_64 eng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const auto in = random_instance(eng);
        for (double thr : {0.3, 0.5}) {
            const double got = average_precision(in.dets, in.gts, thr);
            const double ref = oracle::brute_force_ap(in.dets, in.gts, thr);
            CHECK(std::abs(got - ref) < 1e-9);
        }
    }
}

TEST_CASE("AP is non-increasing in the IoU threshold") {
    std::mt19937_64 eng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const auto in = random_instance(eng);
        double prev = 2.0;
        for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
            const double ap = average_precision(in.dets, in.gts, thr);
            CHECK(ap <= prev + 1e-15);
            prev = ap;
        }
    }
}

TEST_CASE("a duplicate lower-score detection never increases AP") {
    // Holds when the duplicated box reaches at most one ground truth; a box that
    // reaches two could hand the second one to its duplicate.
    std::mt19937_64 eng(13);
    int tested = 0;
    for (int trial = 0; trial < 400; ++trial) {
        auto in = random_instance(eng);
        const double before = average_precision(in.dets, in.gts);
        std::size_t img = 0;
        while (img < in.dets.size() && in.dets[img].empty()) ++img;
        if (img == in.dets.size()) continue;
        const auto reach = std::count_if(in.gts[img].begin(), in.gts[img].end(), [&](const GroundTruthObject& g) {
            return oracle::box_iou(g.box, in.dets[img][0].box) >= 0.5;
        });
        if (reach > 1) continue;
        ++tested;
        Detection dup = in.dets[img][0];
        dup.score = 0.01;
        dup.cell = 99;
        in.dets[img].push_back(dup);
        CHECK(average_precision(in.dets, in.gts) <= before + 1e-15);
    }
    CHECK(tested > 100);
}

TEST_CASE("mAP is the mean over classes present in ground truth") {
    std::vector<std::vector<GroundTruthObject>> gts = {{{0, Box{10, 10, 6, 6}}, {1, Box{24, 24, 4, 10}}}};
    std::vector<DetectionSet> dets = {{{0, 0.9, Box{10, 10, 6, 6}, TeacherSource::GroundTruth, 0}}};
    const auto r = evaluate_detections(dets, gts);
    CHECK(r.per_class_ap.size() == 2);
    CHECK(r.per_class_ap.at(0) == 1.0);
    CHECK(r.per_class_ap.at(1) == 0.0);
    CHECK(r.map == 0.5);
    CHECK(r.n_gt == 2);
    CHECK(r.n_detections == 1);
    CHECK(eval_report_from_json(to_json(r)) == r);

    // a class that only appears in detections does not count
    dets[0].push_back({1, 0.9, Box{24, 24, 4, 10}, TeacherSource::GroundTruth, 1});
    std::vector<std::vector<GroundTruthObject>> only0 = {{{0, Box{10, 10, 6, 6}}}};
    const auto r2 = evaluate_detections(dets, only0);
    CHECK(r2.per_class_ap.size() == 1);
    CHECK(r2.map == 1.0);
}

TEST_CASE("evaluate: zero weights, ordering invariance, repeatability, thread count") {
    const Detector det{ArchConfig{}};
    const auto test = generate_split(3, Domain::Target, 0, 40, DomainGapConfig{}, SceneGeometry{});
    const DecodeConfig dc{0.05, 0.5};

    const auto zero = evaluate(det, det.zeros(), test, dc);
    CHECK(zero.map < 0.05);
    CHECK(zero.n_images == 40);

    const auto p = det.init_params(4);
    const auto a = evaluate(det, p, test, dc);
    CHECK(evaluate(det, p, test, dc) == a);
    CHECK(evaluate(det, p, test, dc, 0.5, 3) == a);

    auto shuffled = test;
    std::mt19937_64 eng(5);
    std::shuffle(shuffled.begin(), shuffled.end(), eng);
    const auto b = evaluate(det, p, shuffled, dc);
    CHECK(b.map == doctest::Approx(a.map).epsilon(1e-12));
    CHECK(b.n_detections == a.n_detections);

    CHECK_THROWS_AS(evaluate(det, p, std::vector<SceneSample>{}, dc), ConfigError);
}
