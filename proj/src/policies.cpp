#include "lbsim/policies.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace lbsim {

namespace {

constexpr std::pair<PolicyKind, std::string_view> kKindNames[] = {
    {PolicyKind::jsq, "JSQ"},
    {PolicyKind::jsq_d, "JSQ_D"},
    {PolicyKind::mjsq, "MJSQ"},
    {PolicyKind::cjsq_uniform, "CJSQ_UNIFORM"},
    {PolicyKind::jsq_nd, "JSQ_ND"},
    {PolicyKind::pi_c, "PI_C"},
    {PolicyKind::batch_jsq_d, "BATCH_JSQ_D"},
};

double power_ratio(std::int64_t count, int servers, int d) {
    return std::pow(static_cast<double>(count) / servers, d);
}

}  // namespace

std::string_view to_string(PolicyKind kind) noexcept {
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    return "?";
}

PolicyKind parse_policy_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    throw ConfigError(fmt::format("unknown policy kind '{}'", name));
}

int PolicySpec::sample_width() const noexcept {
    switch (kind) {
        case PolicyKind::jsq_d: return use_cdf ? 0 : d;
        case PolicyKind::jsq_nd:
        case PolicyKind::batch_jsq_d: return d;
        default: return 0;
    }
}

void PolicySpec::validate(int servers) const {
    auto fail = [&](std::string_view why) {
        throw ConfigError(fmt::format("policy {} invalid for N={}: {}", label(), servers, why));
    };
    switch (kind) {
        case PolicyKind::jsq: break;
        case PolicyKind::jsq_d:
            if (d < 1 || d > servers) fail("requires 1 <= d <= N");
            if (use_cdf && !with_replacement) fail("inverse-CDF routing implies sampling with replacement");
            break;
        case PolicyKind::mjsq:
        case PolicyKind::cjsq_uniform:
            if (n < 0 || n + 1 > servers) fail("requires 0 <= n and n+1 <= N");
            break;
        case PolicyKind::jsq_nd:
            if (d < 1 || d > servers) fail("requires 1 <= d <= N");
            if (n < 0 || n + 1 > servers) fail("requires 0 <= n and n+1 <= N");
            break;
        case PolicyKind::pi_c:
            if (c < 0.0 || c > servers) fail("requires 0 <= c <= N");
            if (d < 1) fail("requires d >= 1");
            break;
        case PolicyKind::batch_jsq_d:
            if (ell < 1) fail("requires ell >= 1");
            if (d < ell) fail("requires d >= ell");
            if (d > servers) fail("requires d <= N");
            if (with_replacement) fail("batch sampling is without replacement");
            break;
    }
}

std::string PolicySpec::label() const {
    switch (kind) {
        case PolicyKind::jsq: return "JSQ";
        case PolicyKind::jsq_d:
            return fmt::format("JSQ(d={}{}{})", d, with_replacement ? "" : ",norepl", use_cdf ? ",cdf" : "");
        case PolicyKind::mjsq: return fmt::format("MJSQ(n={})", n);
        case PolicyKind::cjsq_uniform: return fmt::format("CJSQ(n={})", n);
        case PolicyKind::jsq_nd: return fmt::format("JSQ(n={},d={})", n, d);
        case PolicyKind::pi_c: return fmt::format("PI(c={},d={})", c, d);
        case PolicyKind::batch_jsq_d: return fmt::format("BATCH(l={},d={})", ell, d);
    }
    return "?";
}

int window_rank(int n, double u) noexcept {
    const int r = static_cast<int>(std::ceil(u * (n + 1)));
    return std::clamp(r, 1, n + 1);
}

ArrivalDecision decide_jsq(const OccupancyState&) { return ArrivalDecision::assign(1); }

ArrivalDecision decide_jsq_d(const OccupancyState& s, std::span<const int> ranks) {
    if (ranks.empty()) throw ContractError("JSQ(d) needs at least one sampled rank");
    const int r = *std::min_element(ranks.begin(), ranks.end());
    if (r < 1 || r > s.servers) throw ContractError(fmt::format("sampled rank {} outside 1..{}", r, s.servers));
    return ArrivalDecision::assign(r);
}

int decide_jsq_d_cdf(const OccupancyState& s, int d, double u) {
    int len = 0;
    while (len < s.buffer && u < power_ratio(s.q(len + 1), s.servers, d)) ++len;
    return len;
}

int decide_jsq_d_three_interval(const OccupancyState& s, int d, double u) {
    if (s.buffer != 2) throw ContractError("three-interval rule is defined for b = 2 only");
    const double p1 = power_ratio(s.q(1), s.servers, d);
    const double p2 = power_ratio(s.q(2), s.servers, d);
    if (u < p1 - p2) return 1;
    if (u < 1.0 - p2) return 0;
    return 2;
}

ArrivalDecision decide_mjsq(const OccupancyState& s, int n) {
    if (n < 0 || n + 1 > s.servers) throw ContractError(fmt::format("MJSQ window n={} too large", n));
    return ArrivalDecision::assign(n + 1);
}

ArrivalDecision decide_cjsq_uniform(const OccupancyState& s, int n, double u) {
    if (n < 0 || n + 1 > s.servers) throw ContractError(fmt::format("CJSQ window n={} too large", n));
    return ArrivalDecision::assign(window_rank(n, u));
}

ArrivalDecision decide_jsq_nd_min(const OccupancyState& s, int n, int min_rank, double u) {
    if (n < 0 || n + 1 > s.servers) throw ContractError(fmt::format("JSQ(n,d) window n={} too large", n));
    if (min_rank <= n + 1) return ArrivalDecision::assign(min_rank);
    return ArrivalDecision::assign(window_rank(n, u));
}

ArrivalDecision decide_jsq_nd(const OccupancyState& s, int n, std::span<const int> ranks, double u) {
    return decide_jsq_nd_min(s, n, decide_jsq_d(s, ranks).rank, u);
}

ArrivalDecision decide_pi_c(const OccupancyState& s, double c, int d, double u, PiCDiagnostics* diag) {
    const double accept = std::pow(1.0 - c / s.servers, d);
    if (!(u < accept)) return ArrivalDecision::discard();
    if (const int r = lowest_rank_with_length(s, 1); r != 0) return ArrivalDecision::assign(r);
    if (diag) ++diag->missing_length_one;
    // Lowest busy rank, or rank 1 if every server is idle.
    const auto busy = s.q(1);
    return ArrivalDecision::assign(busy > 0 ? static_cast<int>(s.servers - busy + 1) : 1);
}

std::vector<int> decide_batch_jsq_d(const OccupancyState& s, int ell, std::span<const int> ranks) {
    if (ell < 1 || static_cast<int>(ranks.size()) < ell) {
        throw ConfigError(fmt::format("batch of {} needs at least as many samples, got {}", ell, ranks.size()));
    }
    std::vector<int> sorted(ranks.begin(), ranks.end());
    std::partial_sort(sorted.begin(), sorted.begin() + ell, sorted.end());
    sorted.resize(static_cast<std::size_t>(ell));
    for (int r : sorted) {
        if (r < 1 || r > s.servers) throw ContractError(fmt::format("sampled rank {} outside 1..{}", r, s.servers));
    }
    return sorted;
}

}  // namespace lbsim
