#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lbsim/occupancy.hpp"

namespace lbsim {

enum class PolicyKind {
    jsq,           // join the shortest queue
    jsq_d,         // shortest of d sampled servers
    mjsq,          // always the (n+1)-th ordered server
    cjsq_uniform,  // uniform over the n+1 lowest ordered servers
    jsq_nd,        // JSQ(d) choice if inside the n+1 window, else uniform in the window
    pi_c,          // length-one assignment w.p. (1-c/N)^d, else discard; idle servers refilled
    batch_jsq_d,   // batch of ell tasks to the ell shortest of d distinct samples
};

std::string_view to_string(PolicyKind kind) noexcept;
PolicyKind parse_policy_kind(std::string_view name);

struct PolicySpec {
    PolicyKind kind = PolicyKind::jsq;
    int d = 1;
    int n = 0;
    double c = 0.0;
    int ell = 1;
    bool with_replacement = true;
    /// JSQ(d) only: route through the inverse-CDF rule on the shared uniform
    /// instead of the sampled ranks (same marginal law, different coupling).
    bool use_cdf = false;

    static PolicySpec jsq() { return {}; }
    static PolicySpec jsq_d(int d, bool with_replacement = true) {
        return {.kind = PolicyKind::jsq_d, .d = d, .with_replacement = with_replacement};
    }
    static PolicySpec mjsq(int n) { return {.kind = PolicyKind::mjsq, .n = n}; }
    static PolicySpec cjsq_uniform(int n) { return {.kind = PolicyKind::cjsq_uniform, .n = n}; }
    static PolicySpec jsq_nd(int n, int d) { return {.kind = PolicyKind::jsq_nd, .d = d, .n = n}; }
    static PolicySpec pi_c(double c, int d) { return {.kind = PolicyKind::pi_c, .d = d, .c = c}; }
    static PolicySpec batch_jsq_d(int ell, int d) {
        return {.kind = PolicyKind::batch_jsq_d, .d = d, .ell = ell, .with_replacement = false};
    }

    /// Number of sampled ranks this policy reads from a coupling draw.
    int sample_width() const noexcept;
    /// Throws ConfigError if the parameters are inconsistent with N servers.
    void validate(int servers) const;
    std::string label() const;

    bool operator==(const PolicySpec&) const = default;
};

/// A rank in 1..N, or a discard (rank 0).
struct ArrivalDecision {
    int rank = 0;

    static constexpr ArrivalDecision assign(int r) noexcept { return {r}; }
    static constexpr ArrivalDecision discard() noexcept { return {0}; }
    constexpr bool is_discard() const noexcept { return rank == 0; }
    bool operator==(const ArrivalDecision&) const = default;
};

ArrivalDecision decide_jsq(const OccupancyState& s);

/// Minimum of the sampled ranks; with servers kept in sorted order this is the
/// sampled server with the shortest queue.
ArrivalDecision decide_jsq_d(const OccupancyState& s, std::span<const int> ranks);

/// Target queue length max{i >= 0 : u < (Q_i/N)^d} (Q_0 = N). Has the law of
/// JSQ(d) with replacement: P(length >= i) = (Q_i/N)^d.
int decide_jsq_d_cdf(const OccupancyState& s, int d, double u);

/// Three-interval layout for the b = 2 truncated system: the first interval
/// routes to a length-one server, the middle one to an idle server, the rest
/// to a length-two server (discarded by truncation).
int decide_jsq_d_three_interval(const OccupancyState& s, int d, double u);

ArrivalDecision decide_mjsq(const OccupancyState& s, int n);
ArrivalDecision decide_cjsq_uniform(const OccupancyState& s, int n, double u);
ArrivalDecision decide_jsq_nd(const OccupancyState& s, int n, std::span<const int> ranks, double u);
/// Same as decide_jsq_nd, given the already-reduced minimum sampled rank.
ArrivalDecision decide_jsq_nd_min(const OccupancyState& s, int n, int min_rank, double u);

struct PiCDiagnostics {
    /// Assignments requested while no server had exactly one task.
    std::int64_t missing_length_one = 0;
};

ArrivalDecision decide_pi_c(const OccupancyState& s, double c, int d, double u,
                            PiCDiagnostics* diag = nullptr);

/// The ell smallest of the d sampled ranks, in increasing order.
std::vector<int> decide_batch_jsq_d(const OccupancyState& s, int ell, std::span<const int> ranks);

/// Uniform choice among ranks 1..n+1 from u in [0,1).
int window_rank(int n, double u) noexcept;

}  // namespace lbsim
