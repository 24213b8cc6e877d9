// Acceptance checks, one per criterion. `acceptance K` runs criterion K;
// with no argument all of them run. Each prints a single PASS/FAIL line and
// the process exits nonzero if any selected criterion failed.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "lbsim/diffusion.hpp"
#include "lbsim/engine.hpp"
#include "lbsim/experiments.hpp"
#include "oracles.hpp"

using lbsim::ExperimentKind;
using lbsim::Rule;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt_value(const lbsim::ComparisonReport& r, std::string_view metric, int n = 0,
                      std::string_view policy = {}) {
    const auto v = r.find(metric, n, policy);
    return v ? fmt::format("{:.4g}", *v) : "n/a";
}

std::string failing_rows(const lbsim::ComparisonReport& r) {
    std::string out;
    for (const auto& row : r.rows) {
        if (!row.pass) out += fmt::format(" [{} N={} {}={:.4g}]", row.policy, row.servers, row.metric, row.value);
    }
    return out;
}

Outcome ordering_audit() {
    auto cfg = lbsim::defaults_for(ExperimentKind::ordering_audit);
    cfg.n_grid = {50};
    cfg.buffer = 5;
    cfg.horizon = 100;
    cfg.replications = 10;
    cfg.seed = 101;
    const auto r = lbsim::run_experiment(cfg);
    return {r.passed() && r.invariant_violations == 0,
            fmt::format("violations={} audited_events={}", r.invariant_violations, fmt_value(r, "audited_events"))};
}

Outcome l1_delta_bound() {
    std::int64_t events = 0;
    std::int64_t max_delta = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        lbsim::SimConfig cfg;
        cfg.servers = 50;
        cfg.lambda = 45;
        cfg.buffer = 10;
        cfg.horizon = 50;
        cfg.snapshot_dt = 1;
        cfg.audit = true;
        cfg.seed = lbsim::derive_seed(202, seed);
        cfg.policies = {lbsim::PolicySpec::jsq_d(3), lbsim::PolicySpec::jsq()};
        try {
            const auto t = lbsim::run_coupled(cfg);
            events += t.audited_events;
            max_delta = std::max(max_delta, t.delta_between(0, 1));
        } catch (const lbsim::InvariantViolation& e) {
            return {false, fmt::format("seed {}: {}", seed, e.what())};
        }
    }
    return {events > 0, fmt::format("violations=0 audited_events={} max_delta={}", events, max_delta)};
}

Outcome delta_law() {
    auto cfg = lbsim::defaults_for(ExperimentKind::delta_bound);
    cfg.seed = 303;
    const auto r = lbsim::run_experiment(cfg);
    const auto* row = r.find_row("delta_z_stated_p");
    return {row && row->pass && r.find_row("l1_bound_violations")->pass,
            fmt::format("mean_delta={} expected(0.9^20)={} z={} | expected(0.89^20)={} z={}",
                        fmt_value(r, "delta_mean"), fmt_value(r, "delta_expected_stated_p"),
                        fmt_value(r, "delta_z_stated_p"), fmt_value(r, "delta_expected_window_p"),
                        fmt_value(r, "delta_z_window_p"))};
}

Outcome fluid_universality() {
    auto cfg = lbsim::defaults_for(ExperimentKind::fluid_universality);
    cfg.seed = 404;
    const auto r = lbsim::run_experiment(cfg);
    std::string detail;
    for (const auto& row : r.rows) {
        if (row.metric == "sup_l1_to_ode") detail += fmt::format(" {}@{}={:.4f}", row.policy, row.servers, row.value);
    }
    return {r.passed(), detail + failing_rows(r)};
}

Outcome fixed_point() {
    auto cfg = lbsim::defaults_for(ExperimentKind::fixed_point);
    cfg.seed = 505;
    const auto r = lbsim::run_experiment(cfg);
    return {r.passed(), fmt::format("level1={} level2={}{}", fmt_value(r, "stationary_level1"),
                                    fmt_value(r, "stationary_level2"), failing_rows(r))};
}

Outcome batch_fluid() {
    auto cfg = lbsim::defaults_for(ExperimentKind::batch_fluid);
    cfg.seed = 606;
    const auto r = lbsim::run_experiment(cfg);
    return {r.passed(), fmt::format("sup|q1-closed|={} (<= 0.05) max q2={} (<= 0.02)", fmt_value(r, "q1_sup_error"),
                                    fmt_value(r, "q2_max"))};
}

Outcome diffusion_universality() {
    auto cfg = lbsim::defaults_for(ExperimentKind::diffusion_universality);
    cfg.seed = 707;
    const auto r = lbsim::run_experiment(cfg);
    std::string detail;
    for (int n : cfg.n_grid) detail += fmt::format(" ks@{}={}", n, fmt_value(r, "ks_terminal_q2_vs_jsq", n));
    detail += fmt::format(" ks_sde={}", fmt_value(r, "ks_terminal_q2_vs_sde"));
    return {r.passed(), detail + failing_rows(r)};
}

Outcome necessity() {
    auto cfg = lbsim::defaults_for(ExperimentKind::necessity);
    cfg.seed = 808;
    const auto r = lbsim::run_experiment(cfg);
    return {r.passed(), fmt::format("growth={} jsq_spread={}{}", fmt_value(r, "median_sup_q2_growth"),
                                    fmt_value(r, "median_sup_q2_spread"), failing_rows(r))};
}

Outcome policy_law() {
    long cases = 0;
    const auto mismatch = oracle::jsq_d_law_mismatch(6, 3, 3, &cases);
    if (!mismatch.empty()) return {false, "law mismatch at " + mismatch};
    return {true, fmt::format("{} (state, d) cases agree exactly", cases)};
}

Outcome sde_integrity() {
    lbsim::diffusion::DiffusionParams p;
    p.beta = 1.0;
    p.levels = 2;
    p.horizon = 5.0;
    p.step = 1e-3;
    p.seed = 1010;
    const auto samples = lbsim::diffusion::simulate_sde(p, 100, lbsim::diffusion::initial_state(2), true);
    for (std::size_t k = 0; k < samples.paths.size(); ++k) {
        if (auto bad = lbsim::diffusion::complementarity_audit(samples.paths[k])) {
            return {false, fmt::format("path {}: {}", k, *bad)};
        }
    }
    const double h = p.step;
    const auto path = oracle::skeleton_path(1.0, -1.0, 1.0, p.horizon, h);
    double err = 0.0;
    for (std::size_t k = 0; k < path.size(); ++k) {
        const auto [x, y] = oracle::linear_skeleton(1.0, -1.0, 1.0, k * h);
        err = std::max({err, std::abs(path[k].first - x), std::abs(path[k].second - y)});
    }
    const double ratio = oracle::halving_gap(1.0, -1.0, 1.0, p.horizon, 2 * h) /
                         oracle::halving_gap(1.0, -1.0, 1.0, p.horizon, h);
    return {samples.paths.size() == 100 && err <= 10 * h && ratio >= 1.8,
            fmt::format("paths_audited={} skeleton_err={:.3g} (<= {:.3g}) halving_ratio={:.3f}", samples.paths.size(),
                        err, 10 * h, ratio)};
}

const std::vector<Criterion>& criteria() {
    static const std::vector<Criterion> all{
        {1, "exact ordering audit", 10, ordering_audit},
        {2, "l1-delta bound", 5, l1_delta_bound},
        {3, "delta binomial law", 30, delta_law},
        {4, "fluid universality", 180, fluid_universality},
        {5, "fixed point / stationary consistency", 60, fixed_point},
        {6, "batch-arrival fluid limit", 60, batch_fluid},
        {7, "diffusion universality", 600, diffusion_universality},
        {8, "near-necessity", 600, necessity},
        {9, "policy-law oracles", 5, policy_law},
        {10, "SDE solver integrity", 10, sde_integrity},
    };
    return all;
}

bool run_one(const Criterion& c) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
        out = c.run();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = out.pass && in_time;
    std::cout << fmt::format("criterion {:>2} {:<40} {}  ({:.2f}s{}) {}\n", c.id, c.name, pass ? "PASS" : "FAIL", secs,
                             in_time ? "" : fmt::format(" > {}s budget", c.budget_seconds), out.detail)
              << std::flush;
    return pass;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));
    bool ok = true;
    int ran = 0;
    for (const auto& c : criteria()) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
        ok = run_one(c) && ok;
        ++ran;
    }
    if (ran == 0) {
        std::cerr << "no such criterion\n";
        return 2;
    }
    return ok ? 0 : 1;
}
