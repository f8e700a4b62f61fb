#include "doctest.h"

#include <random>
#include <sstream>

#include "d3t/errors.hpp"
#include "d3t/schedule.hpp"
#include "oracles/oracles.hpp"

using namespace d3t;

TEST_CASE("FLIR budgets: first period and the first shift") {
    const auto cfg = flir_zigzag();
    CHECK(domain_at(cfg, 0) == TrainDomain::Thermal);
    CHECK(domain_at(cfg, 49) == TrainDomain::Thermal);
    CHECK(domain_at(cfg, 50) == TrainDomain::RGB);
    CHECK(domain_at(cfg, 199) == TrainDomain::RGB);
    CHECK(domain_at(cfg, 200) == TrainDomain::Thermal);
    for (std::int64_t i = 10000; i < 10100; ++i) CHECK(domain_at(cfg, i) == TrainDomain::Thermal);
    for (std::int64_t i = 10100; i < 10200; ++i) CHECK(domain_at(cfg, i) == TrainDomain::RGB);
}

TEST_CASE("FLIR per-step budgets keep a constant sum and clamp at the end") {
    const auto cfg = flir_zigzag();
    const StepBudget expect[] = {{0, 50, 150}, {1, 100, 100}, {2, 150, 50}, {3, 200, 0}, {4, 200, 0}};
    for (const auto& e : expect) {
        const auto b = budget_for_step(cfg, e.step_index);
        CHECK(b == e);
        CHECK(b.z_thr + b.z_rgb == 200);
    }
    for (std::int64_t i = 30000; i < 40000; i += 37) CHECK(domain_at(cfg, i) == TrainDomain::Thermal);
}

TEST_CASE("each period of a step holds exactly z_thr thermal iterations") {
    const auto cfg = kaist_zigzag();
    for (std::int64_t t = 0; t < 4; ++t) {
        const auto b = budget_for_step(cfg, t);
        for (std::int64_t start = t * cfg.step_length; start < (t + 1) * cfg.step_length; start += cfg.period()) {
            std::int64_t thermal = 0;
            for (std::int64_t i = start; i < start + cfg.period(); ++i) thermal += domain_at(cfg, i) == TrainDomain::Thermal;
            CHECK(thermal == b.z_thr);
        }
    }
}

TEST_CASE("small config matches the stepped switch-counter interpreter") {
    ZigzagConfig cfg{2, 6, 2, 8, 32, 0};
    const auto ref = oracle::switch_counter_stepped(2, 6, 2, 8, 32);
    for (std::int64_t i = 0; i < 32; ++i) CHECK(domain_at(cfg, i) == ref[static_cast<std::size_t>(i)]);
}

TEST_CASE("closed form agrees with the switch-counter interpreter on long fixed-budget traces") {
    std::mt19937_64 eng(2024);
    std::uniform_int_distribution<std::int64_t> budget(0, 120), burn(0, 500);
    const std::int64_t n = 100000;
    for (int c = 0; c < 8; ++c) {
        std::int64_t zt = budget(eng), zr = budget(eng);
        if (zt + zr == 0) zr = 1;
        const std::int64_t b0 = burn(eng);
        const ZigzagConfig cfg{zt, zr, 0, std::max<std::int64_t>(zt + zr, 1000), b0 + n, b0};
        CAPTURE(zt);
        CAPTURE(zr);
        const auto ref = oracle::switch_counter_trace(zt, zr, n);
        std::int64_t mismatches = 0;
        for (std::int64_t j = 0; j < n; ++j) mismatches += domain_at(cfg, b0 + j) != ref[static_cast<std::size_t>(j)];
        CHECK(mismatches == 0);
    }
}

TEST_CASE("closed form agrees with the stepped interpreter when steps hold whole periods") {
    std::mt19937_64 eng(7);
    std::uniform_int_distribution<std::int64_t> budget(1, 60), beta(1, 30), periods(1, 40);
    const std::int64_t n = 100000;
    for (int c = 0; c < 6; ++c) {
        const std::int64_t zt = budget(eng), zr = budget(eng), b = beta(eng);
        const std::int64_t step = (zt + zr) * periods(eng);
        const ZigzagConfig cfg{zt, zr, b, step, n, 0};
        const auto ref = oracle::switch_counter_stepped(zt, zr, b, step, n);
        std::int64_t mismatches = 0;
        for (std::int64_t i = 0; i < n; ++i) mismatches += domain_at(cfg, i) != ref[static_cast<std::size_t>(i)];
        CHECK(mismatches == 0);
    }
}

TEST_CASE("thermal share is non-decreasing over steps") {
    const ZigzagConfig cfg{5, 15, 5, 400, 4000, 800};
    double prev = -1.0;
    for (std::int64_t t = 0; t < 8; ++t) {
        std::int64_t thermal = 0;
        const std::int64_t lo = cfg.burn_in_iterations + t * cfg.step_length;
        for (std::int64_t i = lo; i < lo + cfg.step_length; ++i) thermal += domain_at(cfg, i) == TrainDomain::Thermal;
        const double share = static_cast<double>(thermal) / static_cast<double>(cfg.step_length);
        CHECK(share >= prev);
        prev = share;
    }
}

TEST_CASE("teacher to update follows the domain") {
    CHECK(teacher_to_update(TrainDomain::Thermal) == TeacherId::ThermalTeacher);
    CHECK(teacher_to_update(TrainDomain::RGB) == TeacherId::RGBTeacher);
    const auto rows = schedule_trace(ZigzagConfig{5, 15, 5, 400, 4000, 800}, LambdaPolicy{});
    for (const auto& r : rows) CHECK(r.teacher == teacher_to_update(r.domain));
}

TEST_CASE("iterations outside the zigzag phase are contract errors") {
    const ZigzagConfig cfg{5, 15, 5, 400, 4000, 800};
    CHECK_THROWS_AS(domain_at(cfg, 799), ContractError);
    CHECK_THROWS_AS(domain_at(cfg, 4000), ContractError);
    CHECK(domain_at(cfg, 800) == TrainDomain::Thermal);
}

TEST_CASE("invalid zigzag configs are rejected") {
    CHECK_THROWS_AS((ZigzagConfig{0, 0, 0, 10, 100, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((ZigzagConfig{5, 5, -1, 10, 100, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((ZigzagConfig{5, 15, 5, 10, 100, 0}.validate()), ConfigError);
    CHECK_THROWS_AS(fixed_mode(0, flir_zigzag()), ConfigError);
}

TEST_CASE("fixed mode alternates k/k with period 2k") {
    for (std::int64_t k : {1, 7, 50, 100}) {
        const auto cfg = fixed_mode(k, flir_zigzag());
        for (std::int64_t i = 0; i < 20 * k; ++i) {
            const auto expect = (i / k) % 2 == 0 ? TrainDomain::Thermal : TrainDomain::RGB;
            CHECK(domain_at(cfg, i) == expect);
        }
        CHECK(domain_at(cfg, 39000) == domain_at(cfg, 39000 - 2 * k));
    }
    CHECK(zigzag_mode(flir_zigzag()) == flir_zigzag());
}

TEST_CASE("lambda ramp") {
    const LambdaSchedule s{10000, 10000};
    CHECK(lambda_at(s, 5000) == 0.0);
    CHECK(lambda_at(s, 10000) == 0.0);
    CHECK(lambda_at(s, 15000) == 0.5);
    CHECK(lambda_at(s, 20000) == 1.0);
    CHECK(lambda_at(s, 25000) == 1.0);
    double prev = 0.0;
    for (std::int64_t i = 0; i < 30000; i += 250) {
        const double v = lambda_at(s, i);
        CHECK(v >= prev);
        CHECK(v <= 1.0);
        prev = v;
    }
    CHECK_THROWS_AS((LambdaSchedule{0, 0}.validate()), ConfigError);

    LambdaPolicy fixed{s, 0.1};
    CHECK(fixed.at(0) == 0.1);
    CHECK(fixed.at(30000) == 0.1);
    LambdaPolicy bad{s, 1.5};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("schedule trace and CSV") {
    const ZigzagConfig cfg{50, 150, 50, 10000, 40000, 0};
    const auto rows = schedule_trace(cfg, LambdaPolicy{});
    CHECK(rows.size() == 40000);
    for (std::size_t i = 0; i < 200; ++i)
        CHECK(rows[i].domain == (i < 50 ? TrainDomain::Thermal : TrainDomain::RGB));
    CHECK(rows[15000].lambda == 0.5);
    CHECK(rows[10000].z_thr == 100);
    CHECK(rows[10000].step_index == 1);

    const auto fix = schedule_trace(fixed_mode(100, flir_zigzag(1000, 200)), LambdaPolicy{});
    CHECK(fix.size() == 800);
    for (std::size_t i = 0; i < fix.size(); ++i)
        CHECK(fix[i].domain == ((i / 100) % 2 == 0 ? TrainDomain::Thermal : TrainDomain::RGB));

    std::ostringstream os;
    write_schedule_csv(os, schedule_trace(ZigzagConfig{1, 1, 0, 2, 3, 0}, LambdaPolicy{LambdaSchedule{0, 2}, {}}));
    CHECK(os.str() ==
          "iteration,domain,teacher_updated,lambda,z_thr,z_rgb,step_index\n"
          "0,thermal,teacher_thr,0,1,1,0\n"
          "1,rgb,teacher_rgb,0.5,1,1,0\n"
          "2,thermal,teacher_thr,1,1,1,1\n");
}
