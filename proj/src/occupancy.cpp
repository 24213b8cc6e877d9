#include "lbsim/occupancy.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace lbsim {

OccupancyState OccupancyState::empty(int servers, int buffer) {
    if (servers < 1) throw ConfigError(fmt::format("server count must be positive, got {}", servers));
    if (buffer < 1) throw ConfigError(fmt::format("buffer must be positive, got {}", buffer));
    OccupancyState s;
    s.servers = servers;
    s.buffer = buffer;
    s.tails.assign(static_cast<std::size_t>(buffer), 0);
    return s;
}

OccupancyState OccupancyState::all_busy(int servers, int buffer) {
    auto s = empty(servers, buffer);
    s.tails[0] = servers;
    return s;
}

OccupancyState OccupancyState::from_tails(int servers, std::vector<std::int64_t> tails,
                                          std::int64_t overflow) {
    OccupancyState s;
    s.servers = servers;
    s.buffer = static_cast<int>(tails.size());
    s.tails = std::move(tails);
    s.overflow = overflow;
    if (!s.valid()) throw ContractError("invalid occupancy state " + s.to_string());
    return s;
}

std::int64_t OccupancyState::total_tasks() const noexcept {
    return std::accumulate(tails.begin(), tails.end(), std::int64_t{0});
}

bool OccupancyState::valid() const noexcept {
    if (servers < 1 || buffer < 1 || static_cast<int>(tails.size()) != buffer) return false;
    if (overflow < 0) return false;
    std::int64_t prev = servers;
    for (auto v : tails) {
        if (v > prev || v < 0) return false;
        prev = v;
    }
    return true;
}

std::string OccupancyState::to_string() const {
    return fmt::format("N={} b={} Q=({}) L={}", servers, buffer, fmt::join(tails, ","), overflow);
}

int rank_queue_len(const OccupancyState& s, int rank) {
    if (rank < 1 || rank > s.servers) {
        throw ContractError(fmt::format("rank {} outside 1..{}", rank, s.servers));
    }
    // Rank r holds at least i tasks iff Q_i >= N - r + 1.
    const std::int64_t threshold = s.servers - rank + 1;
    int len = 0;
    while (len < s.buffer && s.tails[static_cast<std::size_t>(len)] >= threshold) ++len;
    return len;
}

int lowest_rank_with_length(const OccupancyState& s, int length) noexcept {
    if (length < 0 || length > s.buffer) return 0;
    const auto at_least = s.q(length);
    const auto above = s.q(length + 1);
    if (at_least == above) return 0;
    return static_cast<int>(s.servers - at_least + 1);
}

ArrivalOutcome arrive_at_length(OccupancyState& s, int length) {
    if (length >= s.buffer) {
        ++s.overflow;
        return ArrivalOutcome::overflowed;
    }
    ++s.tails[static_cast<std::size_t>(length)];
    return ArrivalOutcome::accepted;
}

ArrivalOutcome arrive_at_rank(OccupancyState& s, int rank) {
    return arrive_at_length(s, rank_queue_len(s, rank));
}

bool depart_at_rank(OccupancyState& s, int rank) {
    const int len = rank_queue_len(s, rank);
    if (len == 0) return false;
    --s.tails[static_cast<std::size_t>(len - 1)];
    return true;
}

OccupancyState apply_arrival_at_rank(OccupancyState s, int rank) {
    arrive_at_rank(s, rank);
    return s;
}

OccupancyState apply_departure_at_rank(OccupancyState s, int rank) {
    depart_at_rank(s, rank);
    return s;
}

std::int64_t tail_sum(const OccupancyState& s, int m) {
    if (m < 1 || m > s.buffer + 1) {
        throw ContractError(fmt::format("tail index {} outside 1..{}", m, s.buffer + 1));
    }
    std::int64_t sum = s.overflow;
    for (int i = m; i <= s.buffer; ++i) sum += s.tails[static_cast<std::size_t>(i - 1)];
    return sum;
}

bool FluidState::in_simplex(double tol) const noexcept {
    double prev = 1.0;
    for (double v : q) {
        if (!(v <= prev + tol) || v < -tol) return false;
        prev = v;
    }
    return true;
}

double l1_distance(const FluidState& a, const FluidState& b) {
    const int n = std::max(a.levels(), b.levels());
    double d = 0.0;
    for (int i = 1; i <= n; ++i) d += std::abs(a.at(i) - b.at(i));
    return d;
}

FluidState fluid_scale(const OccupancyState& s) {
    FluidState f;
    f.q.reserve(s.tails.size());
    const double n = s.servers;
    for (auto v : s.tails) f.q.push_back(static_cast<double>(v) / n);
    return f;
}

DiffusionState diffusion_scale(const OccupancyState& s, int levels) {
    if (levels < 1 || levels > s.buffer) {
        throw ContractError(fmt::format("diffusion levels {} outside 1..{}", levels, s.buffer));
    }
    const double root = std::sqrt(static_cast<double>(s.servers));
    DiffusionState d;
    d.qbar.resize(static_cast<std::size_t>(levels));
    d.qbar[0] = -static_cast<double>(s.servers - s.tails[0]) / root;
    for (int i = 2; i <= levels; ++i) {
        d.qbar[static_cast<std::size_t>(i - 1)] = static_cast<double>(s.tails[static_cast<std::size_t>(i - 1)]) / root;
    }
    return d;
}

}  // namespace lbsim
