#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lbsim/engine.hpp"
#include "lbsim/rules.hpp"

namespace lbsim {

enum class ExperimentKind {
    fluid_universality,
    fixed_point,
    ordering_audit,
    delta_bound,
    diffusion_universality,
    necessity,
    batch_fluid,
    stationary,
};

std::string_view to_string(ExperimentKind kind) noexcept;
ExperimentKind parse_experiment_kind(std::string_view name);

/// Parsed experiment configuration. Unset optional keys take per-kind
/// defaults (see defaults_for) when the file is parsed.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::fixed_point;
    std::vector<int> n_grid;
    Rule lambda_rule;
    std::vector<Rule> d_rules;
    std::optional<Rule> n_rule;
    std::optional<Rule> c_rule;
    std::optional<Rule> ell_rule;
    int buffer = 10;
    double horizon = 10.0;
    double dt = 1e-3;  // ODE / SDE step
    double snapshot_dt = 0.1;
    int replications = 1;
    std::uint64_t seed = 1;
    double burn_in = 0.0;
    std::map<std::string, double> tolerances;

    double tolerance(const std::string& key) const;
    void validate() const;
};

/// Documented defaults for a kind; parse_config overlays the file on these.
ExperimentConfig defaults_for(ExperimentKind kind);

ExperimentConfig parse_config_text(std::string_view json_text);
ExperimentConfig parse_config(const std::filesystem::path& path);

struct ReportRow {
    std::string experiment;
    int servers = 0;
    std::string policy;
    std::string metric;
    double value = 0.0;
    bool pass = true;
};

struct ComparisonReport {
    std::string experiment;
    std::vector<ReportRow> rows;
    double runtime_seconds = 0.0;
    std::int64_t events = 0;
    std::int64_t invariant_violations = 0;

    bool passed() const noexcept;
    /// Value of the first row matching (metric, N, policy); N = 0 or an empty
    /// policy match anything.
    std::optional<double> find(std::string_view metric, int servers = 0, std::string_view policy = {}) const;
    const ReportRow* find_row(std::string_view metric, int servers = 0, std::string_view policy = {}) const;
};

struct RunOptions {
    std::filesystem::path output_dir;  // empty: no files written
    int parallel = 1;
    bool audit = false;
    /// Refuse configs whose expected event count exceeds this.
    double event_budget = 5e9;
    bool write_trajectories = true;
};

/// Expected number of simulated events for a config (all replications and N).
double estimated_events(const ExperimentConfig& cfg);

ComparisonReport run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Runs fn(rep) for rep in [0, count) on up to `threads` workers.
template <class Fn>
void parallel_for(int count, int threads, Fn&& fn);

/// Formats with 17 significant digits (round-trip exact).
std::string format_real(double v);

void write_summary_csv(const std::filesystem::path& path, const ComparisonReport& report);

/// Appends trajectory rows: rep_id, policy, t, level_1..level_b, loss.
void write_trajectory_csv(std::ostream& out, int rep_id, const Trajectory& traj, bool header);

}  // namespace lbsim

#include "lbsim/parallel.ipp"
