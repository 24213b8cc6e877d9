#include "doctest.h"

#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "lbsim/engine.hpp"
#include "lbsim/stats.hpp"

using lbsim::CouplingDraw;
using lbsim::EventKind;
using lbsim::OccupancyState;
using lbsim::PolicySpec;
using lbsim::SimConfig;

namespace {

SimConfig small_config(std::vector<PolicySpec> policies, double load = 0.9, int n = 50, double horizon = 20.0) {
    SimConfig c;
    c.servers = n;
    c.lambda = load * n;
    c.buffer = 5;
    c.horizon = horizon;
    c.seed = 17;
    c.snapshot_dt = 1.0;
    c.policies = std::move(policies);
    return c;
}

bool same_paths(const lbsim::SystemTrajectory& a, const lbsim::SystemTrajectory& b) {
    if (a.snapshots.size() != b.snapshots.size()) return false;
    for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
        if (a.snapshots[k].t != b.snapshots[k].t || !(a.snapshots[k].state == b.snapshots[k].state)) return false;
    }
    return a.max_tails == b.max_tails;
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("event stream: no arrivals at zero load, single server ranks") {
    auto cfg = small_config({PolicySpec::jsq()}, 0.0);
    lbsim::EventStream zero(cfg);
    for (int k = 0; k < 1000; ++k) CHECK(zero.next().kind == EventKind::potential_departure);

    auto one = small_config({PolicySpec::jsq()}, 0.7, 1);
    lbsim::EventStream stream(one);
    for (int k = 0; k < 1000; ++k) {
        const auto d = stream.next();
        if (d.kind == EventKind::potential_departure) CHECK(d.dep_rank == 1);
    }
}

TEST_CASE("event stream: arrival fraction at lambda = N") {
    auto cfg = small_config({PolicySpec::jsq_d(3)}, 1.0, 40);
    lbsim::EventStream stream(cfg, 2024);
    const int events = 1000000;
    int arrivals = 0;
    double last_t = 0.0;
    bool ordered = true;
    CouplingDraw d;
    for (int k = 0; k < events; ++k) {
        stream.next(d);
        arrivals += d.kind == EventKind::arrival;
        ordered = ordered && d.t > last_t;
        last_t = d.t;
    }
    const double sigma = std::sqrt(0.25 / events);
    CHECK(std::abs(arrivals / double(events) - 0.5) < 3 * sigma);
    CHECK(ordered);
    CHECK(last_t == doctest::Approx(events / 80.0).epsilon(0.01));
}

TEST_CASE("prefix minima have the law of explicit sampling") {
    // P(min of d uniform ranks >= r) = ((N - r + 1)/N)^d for both encodings.
    const int n = 7, d = 3, draws = 200000;
    for (auto enc : {lbsim::SampleEncoding::prefix_minima, lbsim::SampleEncoding::explicit_ranks}) {
        auto cfg = small_config({PolicySpec::jsq_d(1), PolicySpec::jsq_d(d)}, 1e6, n);
        cfg.encoding = enc;
        lbsim::EventStream stream(cfg, 99);
        std::vector<int> hist1(n + 1, 0), hist3(n + 1, 0);
        int seen = 0;
        CouplingDraw draw;
        while (seen < draws) {
            stream.next(draw);
            if (draw.kind != EventKind::arrival) continue;
            const int m1 = draw.min_rank(1);
            const int m3 = draw.min_rank(d);
            REQUIRE(m3 <= m1);
            ++hist1[m1];
            ++hist3[m3];
            ++seen;
        }
        int tail1 = 0, tail3 = 0;
        for (int r = n; r >= 1; --r) {
            tail1 += hist1[r];
            tail3 += hist3[r];
            const double p1 = (n - r + 1.0) / n;
            const double p3 = std::pow(p1, d);
            CHECK(std::abs(tail1 / double(draws) - p1) < 4 * std::sqrt(p1 * (1 - p1) / draws) + 1e-12);
            CHECK(std::abs(tail3 / double(draws) - p3) < 4 * std::sqrt(p3 * (1 - p3) / draws) + 1e-12);
        }
    }
}

TEST_CASE("without-replacement samples are distinct") {
    auto cfg = small_config({PolicySpec::jsq_d(6, false)}, 1.0, 8);
    lbsim::EventStream stream(cfg, 5);
    CouplingDraw d;
    for (int k = 0; k < 5000; ++k) {
        stream.next(d);
        if (d.kind != EventKind::arrival) continue;
        const auto s = d.samples(6, false);
        REQUIRE(s.size() == 6);
        CHECK(std::set<int>(s.begin(), s.end()).size() == 6);
        for (int r : s) CHECK((r >= 1 && r <= 8));
    }
}

TEST_CASE("step_coupled: departures hit the same rank everywhere") {
    std::vector<OccupancyState> states{OccupancyState::from_tails(4, {4, 2, 1}),
                                       OccupancyState::from_tails(4, {2, 0, 0})};
    const std::vector<PolicySpec> pol{PolicySpec::jsq(), PolicySpec::mjsq(1)};
    CouplingDraw d;
    d.kind = EventKind::potential_departure;
    d.dep_rank = 2;
    lbsim::StepOutcome out;
    lbsim::step_coupled(states, pol, d, 1, out);
    CHECK(states[0] == OccupancyState::from_tails(4, {3, 2, 1}));
    CHECK(states[1] == OccupancyState::from_tails(4, {2, 0, 0}));  // rank 2 idle: null in this one
    CHECK(out.ranks == std::vector<int>{2, 0});
}

TEST_CASE("step_coupled: JSQ vs MJSQ(n) ranks and flags") {
    for (int n : {0, 1, 3}) {
        std::vector<OccupancyState> states(2, OccupancyState::from_tails(4, {4, 2, 1}));
        const std::vector<PolicySpec> pol{PolicySpec::jsq(), PolicySpec::mjsq(n)};
        CouplingDraw d;
        d.kind = EventKind::arrival;
        lbsim::StepOutcome out;
        lbsim::step_coupled(states, pol, d, 1, out);
        CHECK(out.ranks == std::vector<int>{1, n + 1});
        CHECK(static_cast<bool>(out.differs[0]) == (n >= 1));
    }
}

TEST_CASE("first differing arrival opens an l1 gap of exactly two") {
    std::vector<OccupancyState> states(2, OccupancyState::from_tails(4, {4, 2, 1}));
    const std::vector<PolicySpec> pol{PolicySpec::jsq(), PolicySpec::mjsq(2)};
    CouplingDraw d;
    d.kind = EventKind::arrival;
    lbsim::StepOutcome out;
    lbsim::step_coupled(states, pol, d, 1, out);
    CHECK(out.differs[0] == 1);
    CHECK(lbsim::l1_gap(states[0], states[1]) == 2);
    CHECK_FALSE(lbsim::l1_delta_bound_check(states[0], states[1], 1).has_value());
    CHECK(lbsim::l1_delta_bound_check(states[0], states[1], 0).has_value());
}

TEST_CASE("JSQ(d) and JSQ(n,d) agree whenever the sample hits the window") {
    auto cfg = small_config({PolicySpec::jsq_d(4), PolicySpec::jsq_nd(3, 4)}, 0.9, 30);
    lbsim::EventStream stream(cfg, 8);
    std::vector<OccupancyState> states(2, OccupancyState::empty(30, 5));
    lbsim::StepOutcome out;
    CouplingDraw d;
    int hits = 0;
    for (int k = 0; k < 20000; ++k) {
        stream.next(d);
        const bool hit = d.kind == EventKind::arrival && d.min_rank(4) <= 4;
        lbsim::step_coupled(states, cfg.policies, d, 1, out);
        if (hit) {
            ++hits;
            CHECK(out.ranks[0] == out.ranks[1]);
            CHECK(out.differs[0] == 0);
        }
    }
    CHECK(hits > 1000);
}

TEST_CASE("run_coupled is deterministic") {
    auto cfg = small_config({PolicySpec::jsq(), PolicySpec::jsq_d(3), PolicySpec::jsq_nd(2, 3)});
    const auto a = lbsim::run_coupled(cfg);
    const auto b = lbsim::run_coupled(cfg);
    REQUIRE(a.systems.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(same_paths(a.systems[i], b.systems[i]));
    CHECK(a.final_delta == b.final_delta);
    CHECK(a.events == b.events);
    cfg.seed = 18;
    const auto c = lbsim::run_coupled(cfg);
    CHECK_FALSE(same_paths(a.systems[1], c.systems[1]));
}

TEST_CASE("policies that coincide produce identical trajectories") {
    auto cfg = small_config({PolicySpec::jsq(), PolicySpec::jsq_d(50, false), PolicySpec::mjsq(0)});
    cfg.audit = true;
    const auto t = lbsim::run_coupled(cfg);
    CHECK(same_paths(t.systems[0], t.systems[1]));
    CHECK(same_paths(t.systems[0], t.systems[2]));
    for (auto v : t.final_delta) CHECK(v == 0);
}

TEST_CASE("a window covering every rank never disagrees") {
    auto cfg = small_config({PolicySpec::jsq_d(5), PolicySpec::jsq_nd(49, 5)});
    const auto t = lbsim::run_coupled(cfg);
    CHECK(t.delta_between(0, 1) == 0);
}

TEST_CASE("audited coupled runs pass every ordering and l1 check") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        auto cfg = small_config({PolicySpec::jsq(), PolicySpec::cjsq_uniform(5), PolicySpec::mjsq(5),
                                 PolicySpec::jsq_nd(5, 3)});
        cfg.seed = seed;
        cfg.audit = true;
        lbsim::Trajectory t;
        CHECK_NOTHROW(t = lbsim::run_coupled(cfg));
        CHECK(t.audited_events == t.events);
    }
}

TEST_CASE("assert_orderings catches a reversed pair") {
    const auto lo = OccupancyState::from_tails(4, {2, 0, 0});
    const auto hi = OccupancyState::from_tails(4, {3, 2, 1});
    CHECK_FALSE(lbsim::assert_orderings(lo, lo, lo).has_value());
    CHECK(lbsim::assert_orderings(hi, lo, lo).has_value());
}

TEST_CASE("Delta law: disagreement rate is the window-miss probability") {
    // Exact per-arrival disagreement probability is (1 - (n+1)/N)^d.
    const int n = 100, window = 10, d = 20;
    std::vector<std::pair<std::int64_t, std::int64_t>> samples;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        auto cfg = small_config({PolicySpec::jsq_d(d), PolicySpec::jsq_nd(window, d)}, 0.9, n, 10.0);
        cfg.buffer = 10;
        cfg.seed = lbsim::derive_seed(77, seed);
        const auto t = lbsim::run_coupled(cfg);
        samples.emplace_back(t.arrivals, t.delta_between(0, 1));
    }
    const auto r = lbsim::delta_tail_check(samples, std::pow(1.0 - (window + 1.0) / n, d));
    CHECK(std::abs(r.z) < 4.0);
    CHECK(r.samples == 60);
}

TEST_CASE("JSQ(1) marginals match M/M/1 and null departures track idleness") {
    auto cfg = small_config({PolicySpec::jsq_d(1)}, 0.5, 200, 2000.0);
    cfg.buffer = 10;
    cfg.snapshot_dt = 0.5;
    const auto t = lbsim::run_coupled(cfg);
    const auto est = lbsim::stationary_estimate(t.systems[0], 100.0);
    for (int k = 1; k <= 3; ++k) CHECK(std::abs(est.at(k) - std::pow(0.5, k)) < 0.02);
    const double null_fraction = t.systems[0].null_departures / double(t.potential_departures);
    CHECK(std::abs(null_fraction - (1.0 - est.at(1))) < 0.01);
}

TEST_CASE("Pi(c) mode") {
    SimConfig cfg;
    cfg.servers = 100;
    cfg.lambda = 90;
    cfg.buffer = 2;
    cfg.horizon = 5;
    cfg.snapshot_dt = 0.5;
    cfg.initial = lbsim::InitialCondition::all_busy;
    cfg.seed = 4;

    SUBCASE("c = N always discards") {
        cfg.policies = {PolicySpec::pi_c(100.0, 3)};
        const auto t = lbsim::run_pi_c_mode(cfg);
        CHECK(t.systems[0].max_tails[1] == 0);
        CHECK(t.systems[0].snapshots.back().state.overflow > 0);
        CHECK(t.systems[0].snapshots.back().state.q(1) == 100);
    }
    SUBCASE("c = 0 fills level two at rate lambda") {
        cfg.servers = 1000;
        cfg.lambda = 900;
        cfg.horizon = 0.005;
        cfg.snapshot_dt = 0.005;
        cfg.policies = {PolicySpec::pi_c(0.0, 1)};
        const int reps = 400;
        double total = 0.0;
        for (int r = 0; r < reps; ++r) {
            cfg.seed = lbsim::derive_seed(31, r);
            total += lbsim::run_pi_c_mode(cfg).systems[0].snapshots.back().state.q(2);
        }
        const double mean = total / reps;
        const double expected = 900 * 0.005;
        CHECK(std::abs(mean - expected) < 3 * std::sqrt(expected / reps) + 0.05);
    }
    SUBCASE("config checks") {
        cfg.policies = {PolicySpec::jsq()};
        CHECK_THROWS_AS(lbsim::run_pi_c_mode(cfg), lbsim::ConfigError);
        cfg.policies = {PolicySpec::pi_c(1.0, 2)};
        cfg.buffer = 3;
        CHECK_THROWS_AS(lbsim::run_pi_c_mode(cfg), lbsim::ConfigError);
    }
}

TEST_CASE("batch arrivals move ell tasks at once") {
    SimConfig cfg;
    cfg.servers = 400;
    cfg.lambda = 0.7 * 400;
    cfg.buffer = 10;
    cfg.horizon = 5;
    cfg.snapshot_dt = 0.5;
    cfg.batch = 4;
    cfg.seed = 12;
    cfg.policies = {PolicySpec::batch_jsq_d(4, 16), PolicySpec::jsq()};
    const auto t = lbsim::run_coupled(cfg);
    for (const auto& sys : t.systems) CHECK(sys.snapshots.back().state.valid());

    // Both tasks of a batch are placed against the lengths seen at arrival.
    std::vector<OccupancyState> states(2, OccupancyState::from_tails(4, {1, 0, 0}));
    const std::vector<PolicySpec> pol{PolicySpec::batch_jsq_d(2, 3), PolicySpec::jsq()};
    CouplingDraw d;
    d.kind = EventKind::arrival;
    d.distinct_samples = {4, 2, 3};
    lbsim::StepOutcome out;
    lbsim::step_coupled(states, pol, d, 2, out);
    CHECK(out.batch_ranks[0] == std::vector<int>{2, 3});
    CHECK(states[0] == OccupancyState::from_tails(4, {3, 0, 0}));
    CHECK(states[1] == OccupancyState::from_tails(4, {3, 0, 0}));
    cfg.policies = {PolicySpec::batch_jsq_d(3, 16)};
    CHECK_THROWS_AS(lbsim::run_coupled(cfg), lbsim::ConfigError);
    cfg.policies = {PolicySpec::jsq_d(2)};
    CHECK_THROWS_AS(lbsim::run_coupled(cfg), lbsim::ConfigError);
}

TEST_CASE("snapshot grid and config validation") {
    auto cfg = small_config({PolicySpec::jsq()}, 0.9, 10, 2.0);
    cfg.snapshot_dt = 0.5;
    const auto t = lbsim::run_coupled(cfg);
    CHECK(t.snapshot_times == std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0});
    CHECK(t.systems[0].snapshots.front().state == OccupancyState::empty(10, 5));

    auto bad = cfg;
    bad.servers = 0;
    CHECK_THROWS_AS(lbsim::run_coupled(bad), lbsim::ConfigError);
    bad = cfg;
    bad.policies = {PolicySpec::jsq_d(11)};
    CHECK_THROWS_AS(lbsim::run_coupled(bad), lbsim::ConfigError);
}

}  // TEST_SUITE
