// Command-line front end: coupled simulation, fluid ODE, diffusion SDE and
// config-driven experiments.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "lbsim/diffusion.hpp"
#include "lbsim/engine.hpp"
#include "lbsim/experiments.hpp"
#include "lbsim/fluid.hpp"

namespace {

enum Exit { kPass = 0, kTolerance = 1, kConfig = 2, kInvariant = 3 };

std::vector<double> split_numbers(const std::string& text) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto piece = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            std::size_t used = 0;
            out.push_back(std::stod(piece, &used));
            if (used != piece.size()) throw std::invalid_argument(piece);
        } catch (const std::exception&) {
            throw lbsim::ConfigError(fmt::format("bad number '{}'", piece));
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

// KIND[:a[,b]], e.g. JSQ, JSQ_D:5, MJSQ:3, JSQ_ND:5,20, PI_C:1.5,20, BATCH_JSQ_D:8,32.
lbsim::PolicySpec parse_policy(const std::string& text) {
    using lbsim::PolicyKind;
    using lbsim::PolicySpec;
    const auto colon = text.find(':');
    const auto kind = lbsim::parse_policy_kind(text.substr(0, colon));
    const auto args = colon == std::string::npos ? std::vector<double>{} : split_numbers(text.substr(colon + 1));
    auto arg = [&](std::size_t i) {
        if (i >= args.size()) throw lbsim::ConfigError(fmt::format("policy '{}': missing argument", text));
        return args[i];
    };
    auto whole = [&](std::size_t i) { return static_cast<int>(std::lround(arg(i))); };
    switch (kind) {
        case PolicyKind::jsq: return PolicySpec::jsq();
        case PolicyKind::jsq_d: return PolicySpec::jsq_d(whole(0));
        case PolicyKind::mjsq: return PolicySpec::mjsq(whole(0));
        case PolicyKind::cjsq_uniform: return PolicySpec::cjsq_uniform(whole(0));
        case PolicyKind::jsq_nd: return PolicySpec::jsq_nd(whole(0), whole(1));
        case PolicyKind::pi_c: return PolicySpec::pi_c(arg(0), whole(1));
        case PolicyKind::batch_jsq_d: return PolicySpec::batch_jsq_d(whole(0), whole(1));
    }
    return PolicySpec::jsq();
}

std::ofstream open_output(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    std::ofstream out(std::filesystem::path(dir) / name);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}/{}", dir, name));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Load-balancing simulator: coupled JSQ-family runs, fluid and diffusion limits."};
    app.require_subcommand(1);

    std::uint64_t seed = 1;
    std::string out_dir;
    int replications = 1;
    int parallel = 1;
    bool audit = false;

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "Run policies S-coupled on one event stream");
    int servers = 100;
    double load = 0.9;
    int buffer = 10;
    double horizon = 10.0;
    double snapshot_dt = 0.1;
    int batch = 1;
    std::string initial = "empty";
    std::vector<std::string> policy_texts{"JSQ"};
    sim_cmd->add_option("-N,--servers", servers, "Number of servers")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--load", load, "Normalized arrival rate lambda/N")->check(CLI::NonNegativeNumber);
    sim_cmd->add_option("-b,--buffer", buffer, "Buffer size per server")->check(CLI::PositiveNumber);
    sim_cmd->add_option("-T,--horizon", horizon, "Time horizon")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--snapshot-dt", snapshot_dt, "Snapshot spacing")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--batch", batch, "Tasks per arrival event")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--initial", initial, "empty | all_busy")->check(CLI::IsMember({"empty", "all_busy"}));
    sim_cmd->add_option("-p,--policy", policy_texts, "KIND[:args], e.g. JSQ_D:5 or JSQ_ND:5,20");
    sim_cmd->add_option("--seed", seed);
    sim_cmd->add_option("--replications", replications)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--parallel", parallel)->check(CLI::PositiveNumber);
    sim_cmd->add_option("--out", out_dir, "Output directory (stdout if omitted)");
    sim_cmd->add_flag("--audit", audit, "Per-event invariant checks");

    // fluid
    auto* fluid_cmd = app.add_subcommand("fluid", "Integrate the fluid ODE");
    double step = 1e-3;
    double output_dt = 0.1;
    std::vector<double> q0;
    fluid_cmd->add_option("--load", load, "Normalized arrival rate")->check(CLI::NonNegativeNumber);
    fluid_cmd->add_option("-b,--buffer", buffer)->check(CLI::PositiveNumber);
    fluid_cmd->add_option("-T,--horizon", horizon)->check(CLI::PositiveNumber);
    fluid_cmd->add_option("--dt", step, "RK4 step")->check(CLI::PositiveNumber);
    fluid_cmd->add_option("--output-dt", output_dt)->check(CLI::NonNegativeNumber);
    fluid_cmd->add_option("--q0", q0, "Initial q_1..q_b (default: empty)");
    fluid_cmd->add_option("--out", out_dir);

    // diffusion
    auto* diff_cmd = app.add_subcommand("diffusion", "Simulate the reflected diffusion limit");
    double beta = 1.0;
    int levels = 2;
    double q2_0 = 0.0;
    diff_cmd->add_option("--beta", beta)->check(CLI::PositiveNumber);
    diff_cmd->add_option("--levels", levels)->check(CLI::Range(2, 1 << 20));
    diff_cmd->add_option("-T,--horizon", horizon)->check(CLI::PositiveNumber);
    diff_cmd->add_option("--dt", step)->check(CLI::PositiveNumber);
    diff_cmd->add_option("--q2-0", q2_0, "Initial Qbar_2")->check(CLI::NonNegativeNumber);
    diff_cmd->add_option("--seed", seed);
    diff_cmd->add_option("--replications", replications)->check(CLI::PositiveNumber);
    diff_cmd->add_option("--out", out_dir);

    // experiment
    auto* exp_cmd = app.add_subcommand("experiment", "Run a config-driven experiment");
    std::string config_path;
    double event_budget = 5e9;
    exp_cmd->add_option("--config", config_path, "JSON config")->required();
    auto* seed_opt = exp_cmd->add_option("--seed", seed);
    auto* reps_opt = exp_cmd->add_option("--replications", replications)->check(CLI::PositiveNumber);
    exp_cmd->add_option("--out", out_dir);
    exp_cmd->add_option("--parallel", parallel)->check(CLI::PositiveNumber);
    exp_cmd->add_flag("--audit", audit);
    exp_cmd->add_option("--event-budget", event_budget, "Refuse configs expected to exceed this many events");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kConfig;
    }

    try {
        if (*sim_cmd) {
            lbsim::SimConfig cfg;
            cfg.servers = servers;
            cfg.lambda = load * servers;
            cfg.buffer = buffer;
            cfg.horizon = horizon;
            cfg.snapshot_dt = snapshot_dt;
            cfg.batch = batch;
            cfg.audit = audit;
            cfg.initial = initial == "all_busy" ? lbsim::InitialCondition::all_busy : lbsim::InitialCondition::empty;
            for (const auto& t : policy_texts) cfg.policies.push_back(parse_policy(t));
            const bool pi_c = std::any_of(cfg.policies.begin(), cfg.policies.end(),
                                          [](const auto& p) { return p.kind == lbsim::PolicyKind::pi_c; });
            cfg.validate();

            std::vector<lbsim::Trajectory> runs(static_cast<std::size_t>(replications));
            lbsim::parallel_for(replications, parallel, [&](int rep) {
                auto local = cfg;
                local.seed = lbsim::derive_seed(seed, static_cast<std::uint64_t>(rep));
                runs[static_cast<std::size_t>(rep)] = pi_c ? lbsim::run_pi_c_mode(local) : lbsim::run_coupled(local);
            });
            std::ofstream file;
            if (!out_dir.empty()) file = open_output(out_dir, "trajectory.csv");
            std::ostream& out = out_dir.empty() ? std::cout : file;
            for (std::size_t r = 0; r < runs.size(); ++r) lbsim::write_trajectory_csv(out, static_cast<int>(r), runs[r], r == 0);
            std::int64_t events = 0;
            for (const auto& r : runs) events += r.events;
            std::cerr << fmt::format("{} replication(s), {} events\n", runs.size(), events);
            return kPass;
        }
        if (*fluid_cmd) {
            lbsim::FluidState start;
            start.q = q0.empty() ? std::vector<double>(static_cast<std::size_t>(buffer), 0.0) : q0;
            if (!start.in_simplex(1e-12)) throw lbsim::ConfigError("--q0 must be nonincreasing in [0,1]");
            const auto traj = lbsim::fluid::integrate_fluid(start, load, horizon, {.step = step, .output_dt = output_dt});
            std::ofstream file;
            if (!out_dir.empty()) file = open_output(out_dir, "trajectory_fluid-ode.csv");
            std::ostream& out = out_dir.empty() ? std::cout : file;
            out << "rep_id,policy,t";
            for (std::size_t i = 1; i <= start.q.size(); ++i) out << ",level_" << i;
            out << ",loss\n";
            for (std::size_t k = 0; k < traj.times.size(); ++k) {
                out << "0,fluid-ode," << lbsim::format_real(traj.times[k]);
                for (double v : traj.states[k].q) out << ',' << lbsim::format_real(v);
                out << ",0\n";
            }
            if (traj.step_warning) {
                std::cerr << fmt::format("warning: projection corrections up to {:.3g}; consider a smaller --dt\n",
                                         traj.projection_max);
            }
            return kPass;
        }
        if (*diff_cmd) {
            lbsim::diffusion::DiffusionParams params;
            params.beta = beta;
            params.levels = levels;
            params.horizon = horizon;
            params.step = step;
            params.seed = seed;
            params.validate();
            const auto samples =
                lbsim::diffusion::simulate_sde(params, replications, lbsim::diffusion::initial_state(levels, q2_0));
            std::ofstream file;
            if (!out_dir.empty()) file = open_output(out_dir, "sde_terminal.csv");
            std::ostream& out = out_dir.empty() ? std::cout : file;
            out << "rep_id,coordinate,value\n";
            for (std::size_t r = 0; r < samples.terminal.size(); ++r) {
                for (std::size_t i = 0; i < samples.terminal[r].size(); ++i) {
                    out << r << ',' << i + 1 << ',' << lbsim::format_real(samples.terminal[r][i]) << '\n';
                }
            }
            return kPass;
        }

        auto cfg = lbsim::parse_config(config_path);
        if (*seed_opt) cfg.seed = seed;
        if (*reps_opt) cfg.replications = replications;
        cfg.validate();
        lbsim::RunOptions opts;
        opts.output_dir = out_dir;
        opts.parallel = parallel;
        opts.audit = audit;
        opts.event_budget = event_budget;
        const auto report = lbsim::run_experiment(cfg, opts);
        for (const auto& r : report.rows) {
            std::cout << fmt::format("{:<4} N={:<6} {:<28} {:<32} {}\n", r.pass ? "ok" : "FAIL", r.servers,
                                     r.policy, r.metric, lbsim::format_real(r.value));
        }
        std::cout << fmt::format("experiment {}: {} in {:.2f}s, {} events\n", report.experiment,
                                 report.passed() ? "pass" : "fail", report.runtime_seconds, report.events);
        if (report.invariant_violations > 0) return kInvariant;
        return report.passed() ? kPass : kTolerance;
    } catch (const lbsim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const lbsim::InvariantViolation& e) {
        std::cerr << "invariant violation at event " << e.event_index() << ": " << e.what() << '\n';
        return kInvariant;
    } catch (const lbsim::ContractError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
    }
}
