#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lbsim/diffusion.hpp"
#include "lbsim/occupancy.hpp"
#include "lbsim/policies.hpp"

namespace oracle {

/// Sorted queue lengths of a state, rebuilt from its tail counts.
inline std::vector<int> sorted_lengths(const lbsim::OccupancyState& s) {
    std::vector<int> len(static_cast<std::size_t>(s.servers), 0);
    for (int i = 1; i <= s.buffer; ++i) {
        for (std::int64_t k = 0; k < s.q(i); ++k) len[static_cast<std::size_t>(s.servers - 1 - k)] = i;
    }
    return len;
}

/// Tail counts of an arbitrary multiset of queue lengths.
inline lbsim::OccupancyState from_lengths(std::vector<int> len, int buffer, std::int64_t overflow = 0) {
    std::vector<std::int64_t> tails(static_cast<std::size_t>(buffer), 0);
    for (int l : len) {
        for (int i = 1; i <= l; ++i) ++tails[static_cast<std::size_t>(i - 1)];
    }
    return lbsim::OccupancyState::from_tails(static_cast<int>(len.size()), std::move(tails), overflow);
}

/// Every state with N servers and buffer b (all nondecreasing length vectors).
inline std::vector<lbsim::OccupancyState> all_states(int n, int b) {
    std::vector<lbsim::OccupancyState> out;
    std::vector<int> len(static_cast<std::size_t>(n), 0);
    std::function<void(int, int)> rec = [&](int pos, int lo) {
        if (pos == n) {
            out.push_back(from_lengths(len, b));
            return;
        }
        for (int v = lo; v <= b; ++v) {
            len[static_cast<std::size_t>(pos)] = v;
            rec(pos + 1, v);
        }
    };
    rec(0, 0);
    return out;
}

/// Calls fn(tuple) for every vector in {1..n}^d.
template <class Fn>
void for_each_tuple(int n, int d, bool distinct, Fn&& fn) {
    std::vector<int> t(static_cast<std::size_t>(d), 1);
    std::function<void(int)> rec = [&](int pos) {
        if (pos == d) {
            fn(t);
            return;
        }
        for (int r = 1; r <= n; ++r) {
            if (distinct && std::find(t.begin(), t.begin() + pos, r) != t.begin() + pos) continue;
            t[static_cast<std::size_t>(pos)] = r;
            rec(pos + 1);
        }
    };
    rec(0);
}

inline std::int64_t ipow(std::int64_t x, int e) {
    std::int64_t r = 1;
    while (e-- > 0) r *= x;
    return r;
}

/// Counts of target length 0..b when the JSQ(d) decision is applied to every
/// rank tuple. The denominator is the number of tuples.
struct Law {
    std::vector<std::int64_t> count;
    std::int64_t total = 0;
};

inline Law sampled_law(const lbsim::OccupancyState& s, int d, bool distinct) {
    Law law{std::vector<std::int64_t>(static_cast<std::size_t>(s.buffer + 1), 0), 0};
    for_each_tuple(s.servers, d, distinct, [&](const std::vector<int>& t) {
        const auto r = lbsim::decide_jsq_d(s, t).rank;
        ++law.count[static_cast<std::size_t>(lbsim::rank_queue_len(s, r))];
        ++law.total;
    });
    return law;
}

/// Law of the inverse-CDF rule. Its value is piecewise constant in u with
/// breakpoints (Q_i/N)^d = Q_i^d / N^d; we evaluate it just inside each piece
/// and read off the piece lengths as exact integers over N^d.
inline std::optional<Law> cdf_law(const lbsim::OccupancyState& s, int d) {
    const std::int64_t denom = ipow(s.servers, d);
    Law law{std::vector<std::int64_t>(static_cast<std::size_t>(s.buffer + 1), 0), denom};
    for (int i = 0; i <= s.buffer; ++i) {
        const std::int64_t hi = ipow(s.q(i), d);
        const std::int64_t lo = ipow(s.q(i + 1), d);
        if (hi == lo) continue;
        // Piece [lo, hi) / denom must map to length i near both ends and in the
        // middle; the probes stay 1e-9 of the piece inside, clear of rounding.
        const double a = static_cast<double>(lo) / denom;
        const double w = static_cast<double>(hi - lo) / denom;
        for (double u : {a + 1e-9 * w, a + 0.5 * w, a + (1 - 1e-9) * w}) {
            if (lbsim::decide_jsq_d_cdf(s, d, u) != i) return std::nullopt;
        }
        law.count[static_cast<std::size_t>(i)] = hi - lo;
    }
    return law;
}

/// a == b as rationals.
inline bool same_law(const Law& a, const Law& b) {
    if (a.count.size() != b.count.size()) return false;
    for (std::size_t i = 0; i < a.count.size(); ++i) {
        if (a.count[i] * b.total != b.count[i] * a.total) return false;
    }
    return true;
}

/// P_a(L >= i) <= P_b(L >= i) for every i, as rationals.
inline bool dominated_by(const Law& a, const Law& b) {
    std::int64_t ta = 0, tb = 0;
    for (std::size_t i = a.count.size(); i-- > 0;) {
        ta += a.count[i];
        tb += b.count[i];
        if (ta * b.total > tb * a.total) return false;
    }
    return true;
}

/// Exhaustive comparison of the sampled and inverse-CDF laws. Returns an
/// empty string on success, else a description of the first mismatch.
inline std::string jsq_d_law_mismatch(int max_n, int max_b, int max_d, long* checked = nullptr) {
    long cases = 0;
    for (int n = 1; n <= max_n; ++n) {
        for (int b = 1; b <= max_b; ++b) {
            for (const auto& s : all_states(n, b)) {
                for (int d = 1; d <= max_d; ++d) {
                    const auto sampled = sampled_law(s, d, false);
                    const auto cdf = cdf_law(s, d);
                    ++cases;
                    if (!cdf || !same_law(sampled, *cdf)) {
                        return "state " + s.to_string() + " d=" + std::to_string(d);
                    }
                }
            }
        }
    }
    if (checked) *checked = cases;
    return {};
}

/// Zero-noise two-level solution from (x0, y0) while x stays below zero:
/// y = y0 e^{-t}, x = -beta + (x0 + beta + y0 t) e^{-t}.
inline std::pair<double, double> linear_skeleton(double beta, double x0, double y0, double t) {
    const double e = std::exp(-t);
    return {-beta + (x0 + beta + y0 * t) * e, y0 * e};
}

/// Zero-noise path of the stepper on [0, T] from (x0, y0), k = 2.
inline std::vector<std::pair<double, double>> skeleton_path(double beta, double x0, double y0, double horizon,
                                                            double h) {
    lbsim::diffusion::DiffusionParams p;
    p.beta = beta;
    p.levels = 2;
    p.horizon = horizon;
    p.step = h;
    p.noise_scale = 0.0;
    lbsim::DiffusionState s{{x0, y0}, 0.0};
    const auto steps = static_cast<long>(std::llround(horizon / h));
    std::vector<std::pair<double, double>> out{{x0, y0}};
    for (long k = 0; k < steps; ++k) {
        lbsim::diffusion::sde_step(s, p, 0.0);
        out.emplace_back(s.qbar[0], s.qbar[1]);
    }
    return out;
}

/// sup over the coarse grid of |path_h - path_{h/2}| (fine path subsampled).
inline double halving_gap(double beta, double x0, double y0, double horizon, double h) {
    const auto coarse = skeleton_path(beta, x0, y0, horizon, h);
    const auto fine = skeleton_path(beta, x0, y0, horizon, h / 2);
    double gap = 0.0;
    for (std::size_t k = 0; k < coarse.size(); ++k) {
        gap = std::max({gap, std::abs(coarse[k].first - fine[2 * k].first),
                        std::abs(coarse[k].second - fine[2 * k].second)});
    }
    return gap;
}

}  // namespace oracle
