#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lbsim {

/// Raised when a caller breaks a documented precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Raised for invalid user-supplied configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Exact occupancy of an N-server system with per-server buffer b.
///
/// Servers are never tracked individually. `tails[i-1]` holds Q_i, the number
/// of servers whose queue length is at least i; `overflow` counts tasks that
/// were discarded because they were routed to a full server. Rank r refers to
/// the r-th server when servers are sorted by nondecreasing queue length, so
/// rank 1 is a shortest queue and rank N a longest one.
struct OccupancyState {
    int servers = 0;
    int buffer = 0;
    std::vector<std::int64_t> tails;
    std::int64_t overflow = 0;

    static OccupancyState empty(int servers, int buffer);
    /// Q_1 = N, Q_i = 0 for i >= 2.
    static OccupancyState all_busy(int servers, int buffer);
    static OccupancyState from_tails(int servers, std::vector<std::int64_t> tails,
                                     std::int64_t overflow = 0);

    /// Q_i with the conventions Q_0 = N and Q_i = 0 for i > b.
    std::int64_t q(int i) const noexcept {
        if (i <= 0) return servers;
        if (i > buffer) return 0;
        return tails[static_cast<std::size_t>(i - 1)];
    }

    std::int64_t total_tasks() const noexcept;
    bool valid() const noexcept;
    std::string to_string() const;

    bool operator==(const OccupancyState&) const = default;
};

/// Result of routing one task to a rank.
enum class ArrivalOutcome { accepted, overflowed };

/// Queue length of the server at `rank` (1-based) in the sorted order.
int rank_queue_len(const OccupancyState& s, int rank);

/// Lowest rank whose queue length equals `length`, or 0 if there is none.
int lowest_rank_with_length(const OccupancyState& s, int length) noexcept;

/// In-place variants used by the engine hot path.
ArrivalOutcome arrive_at_rank(OccupancyState& s, int rank);
/// Returns true iff a task actually left (false for an idle rank).
bool depart_at_rank(OccupancyState& s, int rank);

/// Increments the server currently holding `length` tasks. Equivalent to
/// arriving at any rank with that length.
ArrivalOutcome arrive_at_length(OccupancyState& s, int length);

OccupancyState apply_arrival_at_rank(OccupancyState s, int rank);
OccupancyState apply_departure_at_rank(OccupancyState s, int rank);

/// sum_{i=m}^{b} Q_i + L.
std::int64_t tail_sum(const OccupancyState& s, int m);

/// Real occupancy vector q in the set S = {1 >= q_1 >= ... >= q_b >= 0}.
struct FluidState {
    std::vector<double> q;

    double at(int i) const noexcept {
        if (i <= 0) return 1.0;
        if (i > static_cast<int>(q.size())) return 0.0;
        return q[static_cast<std::size_t>(i - 1)];
    }
    int levels() const noexcept { return static_cast<int>(q.size()); }
    bool in_simplex(double tol = 0.0) const noexcept;
};

double l1_distance(const FluidState& a, const FluidState& b);

/// Centered and sqrt(N)-scaled occupancy plus the reflection term at zero.
/// qbar[0] <= 0 holds minus the scaled number of idle servers.
struct DiffusionState {
    std::vector<double> qbar;
    double reflection = 0.0;
};

FluidState fluid_scale(const OccupancyState& s);
DiffusionState diffusion_scale(const OccupancyState& s, int levels);

}  // namespace lbsim
