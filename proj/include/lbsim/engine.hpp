#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lbsim/occupancy.hpp"
#include "lbsim/policies.hpp"
#include "lbsim/rng.hpp"

namespace lbsim {

/// An audit found a coupling invariant broken. Always an engine bug.
class InvariantViolation : public std::runtime_error {
public:
    InvariantViolation(std::int64_t event_index, const std::string& what)
        : std::runtime_error(what), event_index_(event_index) {}
    std::int64_t event_index() const noexcept { return event_index_; }

private:
    std::int64_t event_index_;
};

enum class EventKind { arrival, potential_departure };

enum class InitialCondition { empty, all_busy };

/// How with-replacement samples are carried in a draw. Every policy in this
/// library reads only the minimum over a prefix of the sampled ranks, so the
/// default stores those prefix minima directly (sampled by inverse CDF, block
/// by block) instead of d_max individual ranks. The joint law is identical.
enum class SampleEncoding { prefix_minima, explicit_ranks };

/// One event's shared randomness, consumed identically by every coupled system.
struct CouplingDraw {
    double t = 0.0;
    EventKind kind = EventKind::potential_departure;
    int dep_rank = 0;
    /// With-replacement ranks (explicit encoding only).
    std::vector<int> rank_samples;
    /// (width, min of the first `width` with-replacement ranks), widths ascending.
    std::vector<std::pair<int, int>> prefix_min;
    /// Distinct ranks, in sampling order, for without-replacement policies.
    std::vector<int> distinct_samples;
    double u_aux = 0.0;
    double u_fallback = 0.0;

    /// Minimum over the first `width` sampled ranks.
    int min_rank(int width, bool with_replacement = true) const;
    /// The first `width` sampled ranks (explicit encodings only).
    std::span<const int> samples(int width, bool with_replacement) const;
};

struct SimConfig {
    int servers = 1;
    double lambda = 0.0;  // arrival rate in tasks per unit time (not normalized)
    int buffer = 10;
    double horizon = 1.0;
    std::uint64_t seed = 0;
    std::vector<PolicySpec> policies;
    double snapshot_dt = 1.0;
    int batch = 1;  // tasks per arrival event
    bool audit = false;
    InitialCondition initial = InitialCondition::empty;
    SampleEncoding encoding = SampleEncoding::prefix_minima;

    void validate() const;
};

/// Uniformized event source: total rate lambda/batch + N, arrivals with
/// probability (lambda/batch)/(lambda/batch + N), otherwise a potential
/// departure at a uniform rank. Deterministic in (config, seed).
class EventStream {
public:
    explicit EventStream(const SimConfig& cfg);
    EventStream(const SimConfig& cfg, std::uint64_t seed);

    CouplingDraw next();
    void next(CouplingDraw& out);

    double total_rate() const noexcept { return total_rate_; }
    double arrival_probability() const noexcept { return arrival_prob_; }

private:
    void fill_samples(CouplingDraw& out);

    Rng rng_;
    int servers_;
    double total_rate_;
    double arrival_prob_;
    double t_ = 0.0;
    SampleEncoding encoding_;
    std::vector<int> repl_widths_;   // distinct with-replacement widths, ascending
    int distinct_width_ = 0;         // max without-replacement width
    std::vector<std::pair<int, int>> swap_scratch_;
};

/// Per-event outcome of coupled stepping.
struct StepOutcome {
    /// Chosen rank per system for an arrival (0 = discard); empty for departures.
    /// In batch mode, `batch_ranks[s]` holds the ranks of all tasks.
    std::vector<int> ranks;
    std::vector<std::vector<int>> batch_ranks;
    /// One flag per unordered pair (i < j), see pair_index().
    std::vector<std::uint8_t> differs;
};

constexpr std::size_t pair_index(std::size_t i, std::size_t j, std::size_t systems) noexcept {
    // i < j; row-major upper triangle.
    return i * (2 * systems - i - 1) / 2 + (j - i - 1);
}
constexpr std::size_t pair_count(std::size_t systems) noexcept { return systems * (systems - 1) / 2; }

/// Applies one shared draw to every system. Departures hit the same rank in
/// all systems; arrivals are routed by each policy from the same uniforms.
void step_coupled(std::span<OccupancyState> states, std::span<const PolicySpec> policies,
                  const CouplingDraw& draw, int batch, StepOutcome& out,
                  std::span<PiCDiagnostics> diagnostics = {});

struct OrderingViolation {
    int level = 0;
    std::string inequality;
    std::string detail;
};

/// Tail-sum orderings JSQ <= member <= MJSQ at every level m, plus the
/// sandwich bounds on the member's Q_m. Returns the first violation found.
std::optional<OrderingViolation> assert_orderings(const OccupancyState& jsq,
                                                  const OccupancyState& member,
                                                  const OccupancyState& mjsq);

/// sum_i |Q_i^A - Q_i^B| <= 2 * delta. Returns a description on violation.
std::optional<std::string> l1_delta_bound_check(const OccupancyState& a, const OccupancyState& b,
                                                std::int64_t delta);

std::int64_t l1_gap(const OccupancyState& a, const OccupancyState& b);

struct Snapshot {
    double t = 0.0;
    OccupancyState state;
};

struct SystemTrajectory {
    PolicySpec policy;
    std::vector<Snapshot> snapshots;
    /// Running maximum of each Q_i over every event of the run.
    std::vector<std::int64_t> max_tails;
    PiCDiagnostics diagnostics;
    std::int64_t null_departures = 0;
};

struct Trajectory {
    std::vector<SystemTrajectory> systems;
    std::vector<double> snapshot_times;
    /// delta[pair_index(i,j)][k] = cumulative decision differences at snapshot k.
    std::vector<std::vector<std::int64_t>> delta;
    std::vector<std::int64_t> final_delta;
    std::int64_t arrivals = 0;  // arrival events up to T (batches count once)
    std::int64_t events = 0;
    std::int64_t potential_departures = 0;
    std::int64_t audited_events = 0;

    std::int64_t delta_between(std::size_t i, std::size_t j) const {
        if (i > j) std::swap(i, j);
        return final_delta[pair_index(i, j, systems.size())];
    }
};

/// Runs all configured policies S-coupled on one event stream. With
/// cfg.audit set, every event is checked against the orderings (for the
/// JSQ / CJSQ-member / MJSQ roles present) and the l1-delta bound for every
/// pair; a violation throws InvariantViolation.
Trajectory run_coupled(const SimConfig& cfg);

/// Same, for a Pi(c) configuration: b = 2, all servers busy at t = 0, and
/// departures from length-one servers immediately refilled.
Trajectory run_pi_c_mode(const SimConfig& cfg);

struct DeltaLawReport {
    double mean_delta = 0.0;
    double mean_expected = 0.0;
    double standard_error = 0.0;
    double z = 0.0;
    std::size_t samples = 0;
};

/// Compares per-run Delta(T) against A(T) * p through the paired differences
/// Delta - A p; z is their mean over its standard error.
DeltaLawReport delta_tail_check(std::span<const std::pair<std::int64_t, std::int64_t>> arrivals_and_delta,
                                double p);

}  // namespace lbsim
