#include "lbsim/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include "json.hpp"

#include "lbsim/diffusion.hpp"
#include "lbsim/fluid.hpp"
#include "lbsim/stats.hpp"

namespace lbsim {

namespace {

constexpr std::pair<ExperimentKind, std::string_view> kExperimentNames[] = {
    {ExperimentKind::fluid_universality, "fluid-universality"},
    {ExperimentKind::fixed_point, "fixed-point"},
    {ExperimentKind::ordering_audit, "ordering-audit"},
    {ExperimentKind::delta_bound, "delta-bound"},
    {ExperimentKind::diffusion_universality, "diffusion-universality"},
    {ExperimentKind::necessity, "necessity"},
    {ExperimentKind::batch_fluid, "batch-fluid"},
    {ExperimentKind::stationary, "stationary"},
};

const std::set<std::string> kAllowedKeys = {
    "experiment", "N_grid", "lambda_rule", "d_rule", "n_rule", "c_rule", "ell_rule", "b",
    "T",          "dt",     "snapshot_dt", "replications", "seed", "burn_in", "tolerances",
};

}  // namespace

std::string_view to_string(ExperimentKind kind) noexcept {
    for (const auto& [k, name] : kExperimentNames) {
        if (k == kind) return name;
    }
    return "?";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
    for (const auto& [k, n] : kExperimentNames) {
        if (n == name) return k;
    }
    throw ConfigError(fmt::format("experiment: unknown kind '{}'", name));
}

double ExperimentConfig::tolerance(const std::string& key) const {
    auto it = tolerances.find(key);
    if (it == tolerances.end()) throw ConfigError(fmt::format("tolerances.{} is required", key));
    return it->second;
}

ExperimentConfig defaults_for(ExperimentKind kind) {
    ExperimentConfig c;
    c.kind = kind;
    switch (kind) {
        case ExperimentKind::fluid_universality:
            c.n_grid = {500, 2000, 8000};
            c.lambda_rule = Rule::parse("frac:0.9");
            c.d_rules = {Rule::parse("pow:0.7"), Rule::parse("pow:0.5")};
            c.buffer = 10;
            c.horizon = 10.0;
            c.snapshot_dt = 0.1;
            c.tolerances = {{"sup_l1", 0.05}};
            break;
        case ExperimentKind::fixed_point:
            c.n_grid = {2000};
            c.lambda_rule = Rule::parse("frac:0.9");
            c.d_rules = {Rule::parse("pow:0.5")};
            c.buffer = 10;
            c.horizon = 200.0;
            c.burn_in = 100.0;
            c.snapshot_dt = 0.5;
            c.tolerances = {{"level1", 0.02}, {"level2", 0.02}};
            break;
        case ExperimentKind::stationary:
            c.n_grid = {500, 2000, 8000};
            c.lambda_rule = Rule::parse("frac:0.9");
            c.d_rules = {Rule::parse("pow:0.5")};
            c.buffer = 10;
            c.horizon = 100.0;
            c.burn_in = 50.0;
            c.snapshot_dt = 0.5;
            c.tolerances = {{"l1", 0.05}};
            break;
        case ExperimentKind::ordering_audit:
            c.n_grid = {50};
            c.lambda_rule = Rule::parse("frac:0.9");
            c.n_rule = Rule::parse("const:5");
            c.buffer = 5;
            c.horizon = 100.0;
            c.snapshot_dt = 1.0;
            c.replications = 10;
            break;
        case ExperimentKind::delta_bound:
            c.n_grid = {100};
            c.lambda_rule = Rule::parse("frac:0.9");
            c.n_rule = Rule::parse("const:10");
            c.d_rules = {Rule::parse("const:20")};
            c.buffer = 10;
            c.horizon = 10.0;
            c.snapshot_dt = 1.0;
            c.replications = 200;
            c.tolerances = {{"z_max", 3.0}};
            break;
        case ExperimentKind::diffusion_universality:
            c.n_grid = {400, 1600, 6400};
            c.lambda_rule = Rule::parse("halfin:1");
            c.d_rules = {Rule::parse("pow:0.85")};
            c.buffer = 2;
            c.horizon = 5.0;
            c.snapshot_dt = 0.1;
            c.replications = 500;
            c.tolerances = {{"ks_jsqd", 0.10}, {"ks_sde", 0.15}};
            break;
        case ExperimentKind::necessity:
            c.n_grid = {400, 1600, 6400};
            c.lambda_rule = Rule::parse("halfin:1");
            c.d_rules = {Rule::parse("pow:0.4")};
            c.buffer = 2;
            c.horizon = 5.0;
            c.snapshot_dt = 0.1;
            c.replications = 500;
            c.tolerances = {{"growth", 1.5}, {"baseline", 0.2}};
            break;
        case ExperimentKind::batch_fluid:
            c.n_grid = {4000};
            c.lambda_rule = Rule::parse("frac:0.7");
            c.ell_rule = Rule::parse("pow:0.25");
            c.d_rules = {Rule::parse("batch:0.05")};
            c.buffer = 10;
            c.horizon = 10.0;
            c.snapshot_dt = 0.1;
            c.tolerances = {{"q1_sup", 0.05}, {"q2_max", 0.02}};
            break;
    }
    return c;
}

void ExperimentConfig::validate() const {
    if (n_grid.empty()) throw ConfigError("N_grid: must list at least one N");
    for (int n : n_grid) {
        if (n < 1) throw ConfigError(fmt::format("N_grid: non-positive N {}", n));
    }
    if (buffer < 1) throw ConfigError("b: must be positive");
    if (!(horizon > 0.0)) throw ConfigError("T: must be positive");
    if (!(dt > 0.0)) throw ConfigError("dt: must be positive");
    if (!(snapshot_dt > 0.0)) throw ConfigError("snapshot_dt: must be positive");
    if (replications < 1) throw ConfigError("replications: must be positive");
    if (burn_in < 0.0 || burn_in >= horizon) {
        if (kind == ExperimentKind::fixed_point || kind == ExperimentKind::stationary) {
            throw ConfigError("burn_in: must lie in [0, T)");
        }
    }
    for (int n : n_grid) {
        const double lam = lambda_rule.value(n);
        if (!(lam >= 0.0)) throw ConfigError(fmt::format("lambda_rule: negative rate at N={}", n));
        const Rule::Context ctx{lam / n, ell_rule ? ell_rule->integer(n) : 1};
        for (const auto& r : d_rules) {
            const int d = r.integer(n, ctx);
            if (d < 1 || d > n) throw ConfigError(fmt::format("d_rule: '{}' gives d={} at N={}", r.text(), d, n));
        }
        if (n_rule) {
            const int w = n_rule->integer(n);
            if (w < 0 || w + 1 > n) throw ConfigError(fmt::format("n_rule: '{}' gives n={} at N={}", n_rule->text(), w, n));
        }
        if (ell_rule && ctx.ell < 1) throw ConfigError(fmt::format("ell_rule: non-positive batch at N={}", n));
    }
    auto needs = [&](bool ok, std::string_view what) {
        if (!ok) throw ConfigError(fmt::format("{} is required for experiment {}", what, to_string(kind)));
    };
    switch (kind) {
        case ExperimentKind::ordering_audit: needs(n_rule.has_value(), "n_rule"); break;
        case ExperimentKind::delta_bound:
            needs(n_rule.has_value(), "n_rule");
            needs(!d_rules.empty(), "d_rule");
            break;
        case ExperimentKind::batch_fluid:
            needs(ell_rule.has_value(), "ell_rule");
            needs(!d_rules.empty(), "d_rule");
            break;
        case ExperimentKind::diffusion_universality:
        case ExperimentKind::necessity:
            needs(!d_rules.empty(), "d_rule");
            needs(buffer >= 2, "b >= 2");
            break;
        default: break;
    }
}

ExperimentConfig parse_config_text(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    std::vector<std::string> unknown;
    for (const auto& [key, _] : j.items()) {
        if (!kAllowedKeys.contains(key)) unknown.push_back(key);
    }
    if (!unknown.empty()) throw ConfigError(fmt::format("unknown keys: {}", fmt::join(unknown, ", ")));
    if (!j.contains("experiment") || !j["experiment"].is_string()) {
        throw ConfigError("experiment: required string field");
    }
    auto cfg = defaults_for(parse_experiment_kind(j["experiment"].get<std::string>()));

    auto field = [&](const char* key, auto& target) {
        if (!j.contains(key)) return;
        try {
            j.at(key).get_to(target);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(fmt::format("{}: {}", key, e.what()));
        }
    };
    auto rule_text = [&](const char* key) -> std::optional<Rule> {
        if (!j.contains(key)) return std::nullopt;
        const auto& v = j.at(key);
        if (v.is_number()) return Rule::parse(fmt::format("{}", v.get<double>()));
        if (!v.is_string()) throw ConfigError(fmt::format("{}: expected a rule string", key));
        try {
            return Rule::parse(v.get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("{}: {}", key, e.what()));
        }
    };

    if (j.contains("N_grid")) {
        const auto& g = j.at("N_grid");
        if (!g.is_array()) throw ConfigError("N_grid: expected an array of integers");
        cfg.n_grid.clear();
        for (const auto& v : g) {
            if (!v.is_number_integer()) throw ConfigError("N_grid: entries must be integers");
            cfg.n_grid.push_back(v.get<int>());
        }
    }
    if (auto r = rule_text("lambda_rule")) cfg.lambda_rule = *r;
    if (j.contains("d_rule")) {
        const auto& v = j.at("d_rule");
        cfg.d_rules.clear();
        if (v.is_array()) {
            for (const auto& e : v) {
                if (!e.is_string()) throw ConfigError("d_rule: entries must be rule strings");
                cfg.d_rules.push_back(Rule::parse(e.get<std::string>()));
            }
        } else {
            cfg.d_rules.push_back(*rule_text("d_rule"));
        }
    }
    if (auto r = rule_text("n_rule")) cfg.n_rule = r;
    if (auto r = rule_text("c_rule")) cfg.c_rule = r;
    if (auto r = rule_text("ell_rule")) cfg.ell_rule = r;
    field("b", cfg.buffer);
    field("T", cfg.horizon);
    field("dt", cfg.dt);
    field("snapshot_dt", cfg.snapshot_dt);
    field("replications", cfg.replications);
    field("seed", cfg.seed);
    field("burn_in", cfg.burn_in);
    if (j.contains("tolerances")) {
        const auto& t = j.at("tolerances");
        if (!t.is_object()) throw ConfigError("tolerances: expected an object");
        for (const auto& [k, v] : t.items()) {
            if (!v.is_number()) throw ConfigError(fmt::format("tolerances.{}: expected a number", k));
            cfg.tolerances[k] = v.get<double>();
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

bool ComparisonReport::passed() const noexcept {
    return std::all_of(rows.begin(), rows.end(), [](const ReportRow& r) { return r.pass; });
}

const ReportRow* ComparisonReport::find_row(std::string_view metric, int servers, std::string_view policy) const {
    for (const auto& r : rows) {
        if (r.metric != metric) continue;
        if (servers != 0 && r.servers != servers) continue;
        if (!policy.empty() && r.policy != policy) continue;
        return &r;
    }
    return nullptr;
}

std::optional<double> ComparisonReport::find(std::string_view metric, int servers, std::string_view policy) const {
    if (const auto* r = find_row(metric, servers, policy)) return r->value;
    return std::nullopt;
}

std::string format_real(double v) { return fmt::format("{:.17g}", v); }

void write_summary_csv(const std::filesystem::path& path, const ComparisonReport& report) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
    out << "experiment,N,policy,metric,value,pass\n";
    for (const auto& r : report.rows) {
        out << r.experiment << ',' << r.servers << ',' << r.policy << ',' << r.metric << ','
            << format_real(r.value) << ',' << (r.pass ? "true" : "false") << '\n';
    }
}

void write_trajectory_csv(std::ostream& out, int rep_id, const Trajectory& traj, bool header) {
    if (traj.systems.empty()) return;
    const int b = traj.systems.front().snapshots.empty() ? 0 : traj.systems.front().snapshots.front().state.buffer;
    if (header) {
        out << "rep_id,policy,t";
        for (int i = 1; i <= b; ++i) out << ",level_" << i;
        out << ",loss\n";
    }
    for (const auto& sys : traj.systems) {
        const auto label = sys.policy.label();
        for (const auto& snap : sys.snapshots) {
            const double n = snap.state.servers;
            out << rep_id << ",\"" << label << "\"," << format_real(snap.t);
            for (auto v : snap.state.tails) out << ',' << format_real(static_cast<double>(v) / n);
            out << ',' << format_real(static_cast<double>(snap.state.overflow) / n) << '\n';
        }
    }
}

namespace {

using Clock = std::chrono::steady_clock;

struct Context {
    const ExperimentConfig& cfg;
    const RunOptions& opts;
    ComparisonReport& report;

    void row(int servers, std::string policy, std::string metric, double value, bool pass) {
        report.rows.push_back({std::string(to_string(cfg.kind)), servers, std::move(policy), std::move(metric), value,
                               pass});
    }
};

double normalized_lambda(const ExperimentConfig& cfg, int n) { return cfg.lambda_rule.value(n) / n; }

int d_at(const ExperimentConfig& cfg, std::size_t idx, int n) {
    const Rule::Context ctx{normalized_lambda(cfg, n), cfg.ell_rule ? cfg.ell_rule->integer(n) : 1};
    return cfg.d_rules.at(idx).integer(n, ctx);
}

SimConfig base_sim(const ExperimentConfig& cfg, int n) {
    SimConfig s;
    s.servers = n;
    s.lambda = cfg.lambda_rule.value(n);
    s.buffer = cfg.buffer;
    s.horizon = cfg.horizon;
    s.snapshot_dt = cfg.snapshot_dt;
    return s;
}

struct RepResults {
    std::vector<Trajectory> runs;
    std::int64_t violations = 0;
    std::vector<std::string> violation_messages;
};

// Violations are tallied when `tolerate` is set (audit kinds); otherwise the
// first one propagates.
RepResults run_replications(const ExperimentConfig& cfg, const RunOptions& opts, SimConfig sim, bool pi_c_mode = false,
                            bool tolerate = false) {
    RepResults out;
    sim.audit = sim.audit || opts.audit;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.replications));
    out.runs.resize(static_cast<std::size_t>(cfg.replications));
    std::vector<std::string> messages(out.runs.size());
    const auto salt = mix64(static_cast<std::uint64_t>(sim.servers) * 0x100000001B3ULL + (pi_c_mode ? 7 : 0));
    parallel_for(cfg.replications, opts.parallel, [&](int rep) {
        SimConfig local = sim;
        local.seed = derive_seed(cfg.seed ^ salt, static_cast<std::uint64_t>(rep));
        try {
            out.runs[static_cast<std::size_t>(rep)] = pi_c_mode ? run_pi_c_mode(local) : run_coupled(local);
        } catch (const InvariantViolation& e) {
            messages[static_cast<std::size_t>(rep)] = fmt::format("rep {}: {}", rep, e.what());
            errors[static_cast<std::size_t>(rep)] = std::current_exception();
        }
    });
    if (!tolerate) {
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    for (auto& m : messages) {
        if (!m.empty()) {
            ++out.violations;
            out.violation_messages.push_back(std::move(m));
        }
    }
    return out;
}

void account(Context& ctx, const RepResults& r) {
    for (const auto& t : r.runs) ctx.report.events += t.events;
    ctx.report.invariant_violations += r.violations;
}

void emit_trajectories(Context& ctx, const RepResults& r, int n, std::string_view tag) {
    if (ctx.opts.output_dir.empty() || !ctx.opts.write_trajectories) return;
    const auto path = ctx.opts.output_dir / fmt::format("trajectory_{}_N{}{}.csv", to_string(ctx.cfg.kind), n, tag);
    std::ofstream out(path);
    bool header = true;
    for (std::size_t rep = 0; rep < r.runs.size(); ++rep) {
        write_trajectory_csv(out, static_cast<int>(rep), r.runs[rep], header);
        header = false;
    }
}

void emit_violations(Context& ctx, const std::vector<std::string>& messages) {
    if (ctx.opts.output_dir.empty()) return;
    std::ofstream out(ctx.opts.output_dir / "audit.log", std::ios::app);
    for (const auto& m : messages) out << m << '\n';
}

// Fluid kinds stand in for b = infinity, so the top level must never fill.
void check_headroom(Context& ctx, int n, const SimConfig& sim, const RepResults& reps) {
    for (std::size_t p = 0; p < sim.policies.size(); ++p) {
        std::int64_t top = 0;
        for (const auto& t : reps.runs) top = std::max(top, t.systems[p].max_tails.back());
        ctx.row(n, sim.policies[p].label(), "max_q_b", static_cast<double>(top), top == 0);
    }
}

bool strictly_decreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (!(v[i] < v[i - 1])) return false;
    }
    return true;
}

bool nonincreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[i - 1]) return false;
    }
    return true;
}

void run_fluid_universality(Context& ctx) {
    const auto& cfg = ctx.cfg;
    std::map<std::string, std::vector<double>> by_policy;  // keyed by rule text
    std::vector<std::string> keys{"JSQ"};
    for (const auto& r : cfg.d_rules) keys.push_back("JSQ(d=" + r.text() + ")");

    for (int n : cfg.n_grid) {
        const double lam = normalized_lambda(cfg, n);
        FluidState q0;
        q0.q.assign(static_cast<std::size_t>(cfg.buffer), 0.0);
        const auto ode = fluid::integrate_fluid(q0, lam, cfg.horizon, {.step = cfg.dt, .output_dt = cfg.snapshot_dt});
        ctx.row(n, "fluid-ode", "projection_total", ode.projection_total, true);

        auto sim = base_sim(cfg, n);
        sim.policies.push_back(PolicySpec::jsq());
        for (std::size_t k = 0; k < cfg.d_rules.size(); ++k) sim.policies.push_back(PolicySpec::jsq_d(d_at(cfg, k, n)));
        const auto reps = run_replications(cfg, ctx.opts, sim);
        account(ctx, reps);
        emit_trajectories(ctx, reps, n, "");
        check_headroom(ctx, n, sim, reps);

        for (std::size_t p = 0; p < sim.policies.size(); ++p) {
            double total = 0.0;
            for (const auto& traj : reps.runs) {
                double sup = 0.0;
                for (const auto& snap : traj.systems[p].snapshots) {
                    sup = std::max(sup, l1_distance(fluid_scale(snap.state), fluid::state_at(ode, snap.t)));
                }
                total += sup;
            }
            const double v = total / static_cast<double>(reps.runs.size());
            by_policy[keys[p]].push_back(v);
            const bool last = n == cfg.n_grid.back();
            ctx.row(n, sim.policies[p].label(), "sup_l1_to_ode", v, !last || v <= cfg.tolerance("sup_l1"));
        }
        if (!ctx.opts.output_dir.empty() && ctx.opts.write_trajectories) {
            std::ofstream out(ctx.opts.output_dir / fmt::format("trajectory_fluid-ode_N{}.csv", n));
            out << "rep_id,policy,t";
            for (int i = 1; i <= cfg.buffer; ++i) out << ",level_" << i;
            out << ",loss\n";
            for (std::size_t k = 0; k < ode.times.size(); ++k) {
                out << 0 << ",fluid-ode," << format_real(ode.times[k]);
                for (double v : ode.states[k].q) out << ',' << format_real(v);
                out << ",0\n";
            }
        }
    }
    if (cfg.n_grid.size() > 1) {
        for (const auto& key : keys) {
            const auto& v = by_policy[key];
            ctx.row(cfg.n_grid.back(), key, "sup_l1_decreasing_in_N", strictly_decreasing(v) ? 1.0 : 0.0,
                    strictly_decreasing(v));
        }
    }
}

PolicySpec fixed_point_policy(const ExperimentConfig& cfg, int n) {
    return cfg.d_rules.empty() ? PolicySpec::jsq() : PolicySpec::jsq_d(d_at(cfg, 0, n));
}

void run_fixed_point(Context& ctx) {
    const auto& cfg = ctx.cfg;
    for (int n : cfg.n_grid) {
        const double lam = normalized_lambda(cfg, n);
        const auto star = fluid::fixed_point(lam, cfg.buffer);
        const auto rhs = fluid::fluid_rhs(star, lam);
        const double rhs_norm = std::accumulate(rhs.begin(), rhs.end(), 0.0,
                                                [](double a, double v) { return a + std::abs(v); });
        ctx.row(n, "fluid-ode", "rhs_l1_at_fixed_point", rhs_norm, rhs_norm <= 1e-12);

        auto sim = base_sim(cfg, n);
        sim.policies = {fixed_point_policy(cfg, n)};
        const auto reps = run_replications(cfg, ctx.opts, sim);
        account(ctx, reps);
        emit_trajectories(ctx, reps, n, "");
        check_headroom(ctx, n, sim, reps);
        std::vector<double> l1, l2;
        for (const auto& t : reps.runs) {
            const auto est = stationary_estimate(t.systems[0], cfg.burn_in);
            l1.push_back(est.at(1));
            l2.push_back(est.at(2));
        }
        const double q1 = mean(l1);
        const double q2 = mean(l2);
        const auto label = sim.policies[0].label();
        ctx.row(n, label, "stationary_level1", q1, std::abs(q1 - lam) <= cfg.tolerance("level1"));
        ctx.row(n, label, "stationary_level2", q2, q2 <= cfg.tolerance("level2"));
    }
}

void run_stationary(Context& ctx) {
    const auto& cfg = ctx.cfg;
    std::vector<double> dist;
    for (int n : cfg.n_grid) {
        const double lam = normalized_lambda(cfg, n);
        const auto star = fluid::fixed_point(lam, cfg.buffer);
        auto sim = base_sim(cfg, n);
        sim.policies = {fixed_point_policy(cfg, n)};
        const auto reps = run_replications(cfg, ctx.opts, sim);
        account(ctx, reps);
        check_headroom(ctx, n, sim, reps);
        std::vector<double> d;
        for (const auto& t : reps.runs) d.push_back(l1_distance(stationary_estimate(t.systems[0], cfg.burn_in), star));
        dist.push_back(mean(d));
        const bool last = n == cfg.n_grid.back();
        ctx.row(n, sim.policies[0].label(), "stationary_l1_to_fixed_point", dist.back(),
                !last || dist.back() <= cfg.tolerance("l1"));
    }
    if (cfg.n_grid.size() > 1) {
        ctx.row(cfg.n_grid.back(), "JSQ(d)", "l1_decreasing_in_N", strictly_decreasing(dist) ? 1.0 : 0.0,
                strictly_decreasing(dist));
    }
}

void run_ordering_audit(Context& ctx) {
    const auto& cfg = ctx.cfg;
    for (int n : cfg.n_grid) {
        const int window = cfg.n_rule->integer(n);
        auto sim = base_sim(cfg, n);
        sim.audit = true;
        sim.policies = {PolicySpec::jsq(), PolicySpec::cjsq_uniform(window), PolicySpec::mjsq(window)};
        for (std::size_t k = 0; k < cfg.d_rules.size(); ++k) {
            sim.policies.push_back(PolicySpec::jsq_nd(window, d_at(cfg, k, n)));
        }
        const auto reps = run_replications(cfg, ctx.opts, sim, false, true);
        account(ctx, reps);
        emit_violations(ctx, reps.violation_messages);
        emit_trajectories(ctx, reps, n, "");
        std::int64_t audited = 0;
        for (const auto& t : reps.runs) audited += t.audited_events;
        ctx.row(n, "JSQ|CJSQ|MJSQ", "audited_events", static_cast<double>(audited), audited > 0);
        ctx.row(n, "JSQ|CJSQ|MJSQ", "ordering_violations", static_cast<double>(reps.violations), reps.violations == 0);
    }
}

void run_delta_bound(Context& ctx) {
    const auto& cfg = ctx.cfg;
    for (int n : cfg.n_grid) {
        const int window = cfg.n_rule->integer(n);
        const int d = d_at(cfg, 0, n);
        auto sim = base_sim(cfg, n);
        sim.audit = true;
        sim.policies = {PolicySpec::jsq_d(d), PolicySpec::jsq_nd(window, d)};
        const auto reps = run_replications(cfg, ctx.opts, sim, false, true);
        account(ctx, reps);
        emit_violations(ctx, reps.violation_messages);
        std::vector<std::pair<std::int64_t, std::int64_t>> samples;
        for (const auto& t : reps.runs) {
            if (!t.final_delta.empty()) samples.emplace_back(t.arrivals, t.final_delta[0]);
        }
        const auto label = sim.policies[1].label();
        ctx.row(n, label, "l1_bound_violations", static_cast<double>(reps.violations), reps.violations == 0);

        const double z_max = cfg.tolerance("z_max");
        const double p_stated = std::pow(1.0 - static_cast<double>(window) / n, d);
        const auto stated = delta_tail_check(samples, p_stated);
        ctx.row(n, label, "delta_mean", stated.mean_delta, true);
        ctx.row(n, label, "delta_expected_stated_p", stated.mean_expected, true);
        ctx.row(n, label, "delta_z_stated_p", stated.z, std::abs(stated.z) <= z_max);
        // A decision differs exactly when no sampled rank lies in the n+1 window.
        const double p_exact = std::pow(1.0 - static_cast<double>(window + 1) / n, d);
        const auto exact = delta_tail_check(samples, p_exact);
        ctx.row(n, label, "delta_expected_window_p", exact.mean_expected, true);
        ctx.row(n, label, "delta_z_window_p", exact.z, std::abs(exact.z) <= z_max);
    }
}

struct DiffusionRun {
    std::vector<std::vector<double>> terminal_q2;  // per policy, per rep
    std::vector<std::vector<double>> sup_q2;
};

DiffusionRun run_diffusion_grid_point(Context& ctx, int n, std::vector<PolicySpec> policies) {
    const auto& cfg = ctx.cfg;
    auto sim = base_sim(cfg, n);
    sim.initial = InitialCondition::all_busy;
    sim.policies = std::move(policies);
    const auto reps = run_replications(cfg, ctx.opts, sim);
    account(ctx, reps);
    emit_trajectories(ctx, reps, n, "");
    const double root = std::sqrt(static_cast<double>(n));
    DiffusionRun out;
    out.terminal_q2.resize(sim.policies.size());
    out.sup_q2.resize(sim.policies.size());
    for (const auto& t : reps.runs) {
        for (std::size_t p = 0; p < sim.policies.size(); ++p) {
            const auto& sys = t.systems[p];
            out.terminal_q2[p].push_back(static_cast<double>(sys.snapshots.back().state.q(2)) / root);
            out.sup_q2[p].push_back(static_cast<double>(sys.max_tails[1]) / root);
        }
    }
    return out;
}

void run_diffusion_universality(Context& ctx) {
    const auto& cfg = ctx.cfg;
    std::vector<double> ks;
    std::vector<double> jsq_terminal_last;
    for (int n : cfg.n_grid) {
        const int d = d_at(cfg, 0, n);
        const auto run = run_diffusion_grid_point(ctx, n, {PolicySpec::jsq(), PolicySpec::jsq_d(d)});
        ks.push_back(ks_two_sample(run.terminal_q2[1], run.terminal_q2[0]));
        const bool last = n == cfg.n_grid.back();
        ctx.row(n, PolicySpec::jsq_d(d).label(), "ks_terminal_q2_vs_jsq", ks.back(),
                !last || ks.back() <= cfg.tolerance("ks_jsqd"));
        if (last) jsq_terminal_last = run.terminal_q2[0];
    }
    if (cfg.n_grid.size() > 1) {
        ctx.row(cfg.n_grid.back(), "JSQ(d)", "ks_nonincreasing_in_N", nonincreasing(ks) ? 1.0 : 0.0, nonincreasing(ks));
    }

    const int n = cfg.n_grid.back();
    diffusion::DiffusionParams params;
    params.beta = (n - cfg.lambda_rule.value(n)) / std::sqrt(static_cast<double>(n));
    params.levels = cfg.buffer;
    params.horizon = cfg.horizon;
    params.step = cfg.dt;
    params.seed = derive_seed(cfg.seed, 0x5DE5DEULL);
    const auto sde = diffusion::simulate_sde(params, cfg.replications, diffusion::initial_state(cfg.buffer));
    const auto sde_q2 = sde.coordinate(2);
    const double ks_sde = ks_two_sample(jsq_terminal_last, sde_q2);
    ctx.row(n, "JSQ", "ks_terminal_q2_vs_sde", ks_sde, ks_sde <= cfg.tolerance("ks_sde"));
    ctx.row(n, "sde", "beta", params.beta, params.beta > 0.0);

    if (!ctx.opts.output_dir.empty()) {
        std::ofstream out(ctx.opts.output_dir / "sde_terminal.csv");
        out << "rep_id,coordinate,value\n";
        for (std::size_t r = 0; r < sde.terminal.size(); ++r) {
            for (std::size_t i = 0; i < sde.terminal[r].size(); ++i) {
                out << r << ',' << i + 1 << ',' << format_real(sde.terminal[r][i]) << '\n';
            }
        }
    }
}

void run_necessity(Context& ctx) {
    const auto& cfg = ctx.cfg;
    std::vector<double> jsq_med, jsqd_med;
    for (int n : cfg.n_grid) {
        const int d = d_at(cfg, 0, n);
        const auto run = run_diffusion_grid_point(ctx, n, {PolicySpec::jsq(), PolicySpec::jsq_d(d)});
        jsq_med.push_back(median(run.sup_q2[0]));
        jsqd_med.push_back(median(run.sup_q2[1]));
        ctx.row(n, "JSQ", "median_sup_q2", jsq_med.back(), true);
        ctx.row(n, PolicySpec::jsq_d(d).label(), "median_sup_q2", jsqd_med.back(), true);

        if (cfg.c_rule) {
            // Lower-bounding scheme, coupled to JSQ(d) through one uniform per arrival.
            auto sim = base_sim(cfg, n);
            sim.buffer = 2;
            sim.initial = InitialCondition::all_busy;
            auto jsqd = PolicySpec::jsq_d(d);
            jsqd.use_cdf = true;
            sim.policies = {jsqd, PolicySpec::pi_c(cfg.c_rule->value(n), d)};
            const auto reps = run_replications(cfg, ctx.opts, sim, true);
            account(ctx, reps);
            const double root = std::sqrt(static_cast<double>(n));
            std::vector<double> sup_pi;
            std::int64_t missing = 0;
            for (const auto& t : reps.runs) {
                sup_pi.push_back(static_cast<double>(t.systems[1].max_tails[1]) / root);
                missing += t.systems[1].diagnostics.missing_length_one;
            }
            ctx.row(n, sim.policies[1].label(), "median_sup_q2", median(sup_pi), true);
            ctx.row(n, sim.policies[1].label(), "missing_length_one", static_cast<double>(missing), true);
        }
    }
    const double growth = jsqd_med.back() / jsqd_med.front();
    ctx.row(cfg.n_grid.back(), "JSQ(d)", "median_sup_q2_growth", growth, growth >= cfg.tolerance("growth"));
    bool increasing = true;
    for (std::size_t i = 1; i < jsqd_med.size(); ++i) increasing = increasing && jsqd_med[i] > jsqd_med[i - 1];
    ctx.row(cfg.n_grid.back(), "JSQ(d)", "median_sup_q2_increasing_in_N", increasing ? 1.0 : 0.0, increasing);
    const auto [lo, hi] = std::minmax_element(jsq_med.begin(), jsq_med.end());
    const double spread = *lo > 0.0 ? (*hi - *lo) / *lo : INFINITY;
    ctx.row(cfg.n_grid.back(), "JSQ", "median_sup_q2_spread", spread, spread < cfg.tolerance("baseline"));
}

void run_batch_fluid(Context& ctx) {
    const auto& cfg = ctx.cfg;
    for (int n : cfg.n_grid) {
        const double lam = normalized_lambda(cfg, n);
        const int ell = cfg.ell_rule->integer(n);
        const int d = d_at(cfg, 0, n);
        auto sim = base_sim(cfg, n);
        sim.batch = ell;
        sim.policies = {PolicySpec::batch_jsq_d(ell, d)};
        const auto reps = run_replications(cfg, ctx.opts, sim);
        account(ctx, reps);
        emit_trajectories(ctx, reps, n, "");
        double q1_err = 0.0;
        double q2_max = 0.0;
        for (const auto& t : reps.runs) {
            const auto& sys = t.systems[0];
            for (const auto& snap : sys.snapshots) {
                const auto closed = fluid::batch_fluid_closed_form(0.0, lam, snap.t, cfg.buffer);
                q1_err = std::max(q1_err, std::abs(static_cast<double>(snap.state.q(1)) / n - closed.at(1)));
            }
            if (sys.max_tails.size() >= 2) q2_max = std::max(q2_max, static_cast<double>(sys.max_tails[1]) / n);
        }
        if (!ctx.opts.output_dir.empty() && ctx.opts.write_trajectories && !reps.runs.empty()) {
            std::ofstream out(ctx.opts.output_dir / fmt::format("trajectory_batch-closed-form_N{}.csv", n));
            out << "rep_id,policy,t";
            for (int i = 1; i <= cfg.buffer; ++i) out << ",level_" << i;
            out << ",loss\n";
            for (const auto& snap : reps.runs.front().systems[0].snapshots) {
                const auto closed = fluid::batch_fluid_closed_form(0.0, lam, snap.t, cfg.buffer);
                out << 0 << ",batch-closed-form," << format_real(snap.t);
                for (double v : closed.q) out << ',' << format_real(v);
                out << ",0\n";
            }
        }
        const auto label = sim.policies[0].label();
        ctx.row(n, label, "q1_sup_error", q1_err, q1_err <= cfg.tolerance("q1_sup"));
        ctx.row(n, label, "q2_max", q2_max, q2_max <= cfg.tolerance("q2_max"));
    }
}

}  // namespace

double estimated_events(const ExperimentConfig& cfg) {
    double total = 0.0;
    for (int n : cfg.n_grid) {
        const int ell = cfg.ell_rule ? std::max(1, cfg.ell_rule->integer(n)) : 1;
        const double rate = cfg.lambda_rule.value(n) / ell + n;
        double passes = 1.0;
        if (cfg.kind == ExperimentKind::necessity && cfg.c_rule) passes = 2.0;
        total += passes * rate * cfg.horizon * cfg.replications;
    }
    return total;
}

ComparisonReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
    cfg.validate();
    const double expected = estimated_events(cfg);
    if (expected > opts.event_budget) {
        throw ConfigError(fmt::format(
            "expected {:.3g} events exceeds the budget of {:.3g}; reduce N_grid, T or replications "
            "(events ~ replications * T * (lambda(N)/ell + N))",
            expected, opts.event_budget));
    }
    if (!opts.output_dir.empty()) std::filesystem::create_directories(opts.output_dir);

    ComparisonReport report;
    report.experiment = std::string(to_string(cfg.kind));
    Context ctx{cfg, opts, report};
    const auto start = Clock::now();
    switch (cfg.kind) {
        case ExperimentKind::fluid_universality: run_fluid_universality(ctx); break;
        case ExperimentKind::fixed_point: run_fixed_point(ctx); break;
        case ExperimentKind::stationary: run_stationary(ctx); break;
        case ExperimentKind::ordering_audit: run_ordering_audit(ctx); break;
        case ExperimentKind::delta_bound: run_delta_bound(ctx); break;
        case ExperimentKind::diffusion_universality: run_diffusion_universality(ctx); break;
        case ExperimentKind::necessity: run_necessity(ctx); break;
        case ExperimentKind::batch_fluid: run_batch_fluid(ctx); break;
    }
    report.runtime_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (!opts.output_dir.empty()) write_summary_csv(opts.output_dir / "summary.csv", report);
    return report;
}

}  // namespace lbsim
