#include "lbsim/engine.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace lbsim {

namespace {

/// Minimum of `count` iid uniform ranks on 1..N by inverse CDF:
/// P(min <= r) = 1 - (1 - r/N)^count.
int block_minimum(Rng& rng, int servers, int count) {
    const double v = rng.uniform_pos();
    const double x = -std::expm1(std::log(v) / count);
    const auto r = static_cast<std::int64_t>(std::ceil(x * servers));
    return static_cast<int>(std::clamp<std::int64_t>(r, 1, servers));
}

bool is_batch_capable(PolicyKind k) { return k == PolicyKind::jsq || k == PolicyKind::batch_jsq_d; }

}  // namespace

int CouplingDraw::min_rank(int width, bool with_replacement) const {
    if (width < 1) throw ContractError("sample width must be positive");
    if (!with_replacement) {
        if (static_cast<int>(distinct_samples.size()) < width) {
            throw ContractError(fmt::format("draw carries {} distinct samples, {} requested",
                                            distinct_samples.size(), width));
        }
        return *std::min_element(distinct_samples.begin(), distinct_samples.begin() + width);
    }
    if (!rank_samples.empty()) {
        if (static_cast<int>(rank_samples.size()) < width) {
            throw ContractError(fmt::format("draw carries {} samples, {} requested", rank_samples.size(), width));
        }
        return *std::min_element(rank_samples.begin(), rank_samples.begin() + width);
    }
    for (const auto& [w, m] : prefix_min) {
        if (w == width) return m;
    }
    throw ContractError(fmt::format("no prefix minimum recorded for width {}", width));
}

std::span<const int> CouplingDraw::samples(int width, bool with_replacement) const {
    const auto& src = with_replacement ? rank_samples : distinct_samples;
    if (static_cast<int>(src.size()) < width) {
        throw ContractError(fmt::format("draw carries {} explicit samples, {} requested", src.size(), width));
    }
    return {src.data(), static_cast<std::size_t>(width)};
}

void SimConfig::validate() const {
    if (servers < 1) throw ConfigError(fmt::format("N must be positive, got {}", servers));
    if (buffer < 1) throw ConfigError(fmt::format("b must be positive, got {}", buffer));
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and nonnegative");
    if (!(horizon > 0.0)) throw ConfigError("T must be positive");
    if (!(snapshot_dt > 0.0)) throw ConfigError("snapshot_dt must be positive");
    if (batch < 1) throw ConfigError("batch size must be positive");
    if (policies.empty()) throw ConfigError("at least one policy is required");
    for (const auto& p : policies) {
        p.validate(servers);
        if (batch > 1 && !is_batch_capable(p.kind)) {
            throw ConfigError(fmt::format("policy {} cannot run with batch arrivals", p.label()));
        }
        if (p.kind == PolicyKind::batch_jsq_d && p.ell != batch) {
            throw ConfigError(fmt::format("policy {} expects batch size {}, config has {}", p.label(), p.ell, batch));
        }
    }
}

EventStream::EventStream(const SimConfig& cfg) : EventStream(cfg, cfg.seed) {}

EventStream::EventStream(const SimConfig& cfg, std::uint64_t seed)
    : rng_(seed), servers_(cfg.servers), encoding_(cfg.encoding) {
    const double arrival_rate = cfg.lambda / cfg.batch;
    total_rate_ = arrival_rate + cfg.servers;
    arrival_prob_ = arrival_rate / total_rate_;
    for (const auto& p : cfg.policies) {
        const int w = p.sample_width();
        if (w == 0) continue;
        if (p.with_replacement) {
            repl_widths_.push_back(w);
        } else {
            distinct_width_ = std::max(distinct_width_, w);
        }
    }
    std::sort(repl_widths_.begin(), repl_widths_.end());
    repl_widths_.erase(std::unique(repl_widths_.begin(), repl_widths_.end()), repl_widths_.end());
}

CouplingDraw EventStream::next() {
    CouplingDraw d;
    next(d);
    return d;
}

void EventStream::next(CouplingDraw& out) {
    t_ += rng_.exponential(total_rate_);
    out.t = t_;
    out.rank_samples.clear();
    out.prefix_min.clear();
    out.distinct_samples.clear();
    if (rng_.uniform() < arrival_prob_) {
        out.kind = EventKind::arrival;
        out.dep_rank = 0;
        fill_samples(out);
        out.u_aux = rng_.uniform();
        out.u_fallback = rng_.uniform();
    } else {
        out.kind = EventKind::potential_departure;
        out.dep_rank = static_cast<int>(rng_.rank(servers_));
        out.u_aux = out.u_fallback = 0.0;
    }
}

void EventStream::fill_samples(CouplingDraw& out) {
    if (!repl_widths_.empty()) {
        if (encoding_ == SampleEncoding::explicit_ranks) {
            out.rank_samples.resize(static_cast<std::size_t>(repl_widths_.back()));
            for (auto& r : out.rank_samples) r = static_cast<int>(rng_.rank(servers_));
        } else {
            int prev = 0;
            int running = INT_MAX;
            for (int w : repl_widths_) {
                running = std::min(running, block_minimum(rng_, servers_, w - prev));
                out.prefix_min.emplace_back(w, running);
                prev = w;
            }
        }
    }
    if (distinct_width_ > 0) {
        // Partial Fisher-Yates over the implicit identity permutation of 1..N,
        // recording displaced entries sparsely.
        swap_scratch_.clear();
        auto value_at = [&](int pos) {
            for (const auto& [p, v] : swap_scratch_) {
                if (p == pos) return v;
            }
            return pos + 1;
        };
        auto set_at = [&](int pos, int v) {
            for (auto& [p, old] : swap_scratch_) {
                if (p == pos) {
                    old = v;
                    return;
                }
            }
            swap_scratch_.emplace_back(pos, v);
        };
        out.distinct_samples.resize(static_cast<std::size_t>(distinct_width_));
        for (int k = 0; k < distinct_width_; ++k) {
            const int j = k + static_cast<int>(rng_.rank(servers_ - k)) - 1;
            const int vj = value_at(j);
            const int vk = value_at(k);
            set_at(j, vk);
            set_at(k, vj);
            out.distinct_samples[static_cast<std::size_t>(k)] = vj;
        }
    }
}

namespace {

int route_single(const OccupancyState& s, const PolicySpec& p, const CouplingDraw& draw, PiCDiagnostics* diag) {
    switch (p.kind) {
        case PolicyKind::jsq: return decide_jsq(s).rank;
        case PolicyKind::jsq_d: {
            if (p.use_cdf) {
                const int len = s.buffer == 2 ? decide_jsq_d_three_interval(s, p.d, draw.u_aux)
                                              : decide_jsq_d_cdf(s, p.d, draw.u_aux);
                // Lowest rank holding that length; ranks share their length so any works.
                const int r = lowest_rank_with_length(s, len);
                return r != 0 ? r : s.servers;
            }
            return draw.min_rank(p.d, p.with_replacement);
        }
        case PolicyKind::mjsq: return decide_mjsq(s, p.n).rank;
        case PolicyKind::cjsq_uniform: return decide_cjsq_uniform(s, p.n, draw.u_aux).rank;
        case PolicyKind::jsq_nd: return decide_jsq_nd_min(s, p.n, draw.min_rank(p.d, true), draw.u_fallback).rank;
        case PolicyKind::pi_c: return decide_pi_c(s, p.c, p.d, draw.u_aux, diag).rank;
        case PolicyKind::batch_jsq_d:
            return decide_batch_jsq_d(s, 1, draw.samples(p.d, false)).front();
    }
    return 1;
}

}  // namespace

void step_coupled(std::span<OccupancyState> states, std::span<const PolicySpec> policies,
                  const CouplingDraw& draw, int batch, StepOutcome& out,
                  std::span<PiCDiagnostics> diagnostics) {
    const std::size_t n = states.size();
    if (policies.size() != n) throw ConfigError("one policy per coupled system is required");
    for (std::size_t i = 1; i < n; ++i) {
        if (states[i].servers != states[0].servers || states[i].buffer != states[0].buffer) {
            throw ConfigError("coupled systems must share N and b");
        }
    }
    out.differs.assign(pair_count(n), 0);
    out.ranks.clear();
    out.batch_ranks.clear();

    if (draw.kind == EventKind::potential_departure) {
        out.ranks.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = states[i];
            if (policies[i].kind == PolicyKind::pi_c && rank_queue_len(s, draw.dep_rank) == 1) {
                // Dummy arrival keeps the server busy.
                out.ranks[i] = draw.dep_rank;
                continue;
            }
            out.ranks[i] = depart_at_rank(s, draw.dep_rank) ? draw.dep_rank : 0;
        }
        return;
    }

    if (batch == 1) {
        out.ranks.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            PiCDiagnostics* diag = diagnostics.empty() ? nullptr : &diagnostics[i];
            const int r = route_single(states[i], policies[i], draw, diag);
            out.ranks[i] = r;
            if (r == 0) {
                ++states[i].overflow;
            } else {
                arrive_at_rank(states[i], r);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                out.differs[pair_index(i, j, n)] = out.ranks[i] != out.ranks[j];
            }
        }
        return;
    }

    out.batch_ranks.resize(n);
    std::vector<int> lengths;
    for (std::size_t i = 0; i < n; ++i) {
        auto& s = states[i];
        auto& ranks = out.batch_ranks[i];
        if (policies[i].kind == PolicyKind::batch_jsq_d) {
            ranks = decide_batch_jsq_d(s, batch, draw.samples(policies[i].d, false));
            // Simultaneous assignment: lengths are read before any increment.
            lengths.clear();
            for (int r : ranks) lengths.push_back(rank_queue_len(s, r));
            for (int len : lengths) arrive_at_length(s, len);
        } else {
            ranks.assign(static_cast<std::size_t>(batch), 1);
            for (int k = 0; k < batch; ++k) arrive_at_rank(s, 1);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            out.differs[pair_index(i, j, n)] = out.batch_ranks[i] != out.batch_ranks[j];
        }
    }
}

std::optional<OrderingViolation> assert_orderings(const OccupancyState& jsq, const OccupancyState& member,
                                                  const OccupancyState& mjsq) {
    const int b = jsq.buffer;
    for (int m = 1; m <= b; ++m) {
        const auto tj = tail_sum(jsq, m);
        const auto tc = tail_sum(member, m);
        const auto tm = tail_sum(mjsq, m);
        if (tj > tc) {
            return OrderingViolation{m, "tail_sum(JSQ) <= tail_sum(CJSQ)", fmt::format("{} > {}", tj, tc)};
        }
        if (tc > tm) {
            return OrderingViolation{m, "tail_sum(CJSQ) <= tail_sum(MJSQ)", fmt::format("{} > {}", tc, tm)};
        }
        const auto qm = member.q(m);
        const auto lower = tj - tail_sum(mjsq, m + 1);
        const auto upper = tm - tail_sum(jsq, m + 1);
        if (qm < lower) {
            return OrderingViolation{m, "Q_m(CJSQ) >= lower sandwich", fmt::format("{} < {}", qm, lower)};
        }
        if (qm > upper) {
            return OrderingViolation{m, "Q_m(CJSQ) <= upper sandwich", fmt::format("{} > {}", qm, upper)};
        }
    }
    return std::nullopt;
}

std::int64_t l1_gap(const OccupancyState& a, const OccupancyState& b) {
    const int levels = std::max(a.buffer, b.buffer);
    std::int64_t gap = 0;
    for (int i = 1; i <= levels; ++i) gap += std::abs(a.q(i) - b.q(i));
    return gap;
}

std::optional<std::string> l1_delta_bound_check(const OccupancyState& a, const OccupancyState& b,
                                                std::int64_t delta) {
    const auto gap = l1_gap(a, b);
    if (gap > 2 * delta) return fmt::format("l1 gap {} exceeds 2*delta = {}", gap, 2 * delta);
    return std::nullopt;
}

namespace {

struct AuditRoles {
    std::optional<std::size_t> jsq;
    std::optional<std::size_t> mjsq;
    std::vector<std::size_t> members;
    std::vector<std::pair<std::size_t, std::size_t>> l1_pairs;
};

AuditRoles find_roles(const SimConfig& cfg) {
    AuditRoles roles;
    const auto& ps = cfg.policies;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i].kind == PolicyKind::jsq && !roles.jsq) roles.jsq = i;
        if (ps[i].kind == PolicyKind::mjsq && (!roles.mjsq || ps[i].n > ps[*roles.mjsq].n)) roles.mjsq = i;
    }
    if (roles.jsq && roles.mjsq) {
        const int window = ps[*roles.mjsq].n;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto k = ps[i].kind;
            const bool member = (k == PolicyKind::cjsq_uniform || k == PolicyKind::jsq_nd || k == PolicyKind::mjsq ||
                                 k == PolicyKind::jsq) &&
                                ps[i].n <= window;
            if (member) roles.members.push_back(i);
        }
    }
    if (cfg.batch == 1) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            for (std::size_t j = i + 1; j < ps.size(); ++j) {
                if (ps[i].kind != PolicyKind::pi_c && ps[j].kind != PolicyKind::pi_c) roles.l1_pairs.emplace_back(i, j);
            }
        }
    }
    return roles;
}

std::string dump_states(const std::vector<OccupancyState>& states, const SimConfig& cfg) {
    std::string out;
    for (std::size_t i = 0; i < states.size(); ++i) {
        out += fmt::format("\n  [{}] {}: {}", i, cfg.policies[i].label(), states[i].to_string());
    }
    return out;
}

}  // namespace

Trajectory run_coupled(const SimConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.policies.size();
    const auto init = cfg.initial == InitialCondition::all_busy ? OccupancyState::all_busy(cfg.servers, cfg.buffer)
                                                                : OccupancyState::empty(cfg.servers, cfg.buffer);
    std::vector<OccupancyState> states(n, init);
    std::vector<PiCDiagnostics> diags(n);
    std::vector<std::int64_t> delta(pair_count(n), 0);

    Trajectory traj;
    traj.systems.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        traj.systems[i].policy = cfg.policies[i];
        traj.systems[i].max_tails = init.tails;
    }
    traj.delta.resize(pair_count(n));

    const auto grid_points = static_cast<std::int64_t>(std::floor(cfg.horizon / cfg.snapshot_dt + 1e-9));
    std::int64_t next_snap = 0;
    auto record = [&] {
        const double t = static_cast<double>(next_snap) * cfg.snapshot_dt;
        traj.snapshot_times.push_back(t);
        for (std::size_t i = 0; i < n; ++i) traj.systems[i].snapshots.push_back({t, states[i]});
        for (std::size_t p = 0; p < delta.size(); ++p) traj.delta[p].push_back(delta[p]);
        ++next_snap;
    };

    const auto roles = cfg.audit ? find_roles(cfg) : AuditRoles{};
    EventStream stream(cfg);
    CouplingDraw draw;
    StepOutcome outcome;
    for (;;) {
        stream.next(draw);
        while (next_snap <= grid_points && static_cast<double>(next_snap) * cfg.snapshot_dt < draw.t) record();
        if (draw.t > cfg.horizon) break;

        step_coupled(states, cfg.policies, draw, cfg.batch, outcome, diags);
        ++traj.events;
        if (draw.kind == EventKind::arrival) {
            ++traj.arrivals;
            for (std::size_t p = 0; p < delta.size(); ++p) delta[p] += outcome.differs[p];
        } else {
            ++traj.potential_departures;
            for (std::size_t i = 0; i < n; ++i) {
                if (outcome.ranks[i] == 0) ++traj.systems[i].null_departures;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto& mx = traj.systems[i].max_tails;
            for (std::size_t k = 0; k < mx.size(); ++k) mx[k] = std::max(mx[k], states[i].tails[k]);
        }

        if (cfg.audit) {
            for (std::size_t i = 0; i < n; ++i) {
                if (!states[i].valid()) {
                    throw InvariantViolation(traj.events, fmt::format("event {}: invalid state{}", traj.events,
                                                                      dump_states(states, cfg)));
                }
            }
            if (roles.jsq && roles.mjsq) {
                for (auto m : roles.members) {
                    if (auto v = assert_orderings(states[*roles.jsq], states[m], states[*roles.mjsq])) {
                        throw InvariantViolation(
                            traj.events, fmt::format("event {}: ordering violated at m={} ({}: {}){}", traj.events,
                                                     v->level, v->inequality, v->detail, dump_states(states, cfg)));
                    }
                }
            }
            for (const auto& [i, j] : roles.l1_pairs) {
                if (auto v = l1_delta_bound_check(states[i], states[j], delta[pair_index(i, j, n)])) {
                    throw InvariantViolation(traj.events, fmt::format("event {}: {} between {} and {}{}", traj.events,
                                                                      *v, cfg.policies[i].label(),
                                                                      cfg.policies[j].label(), dump_states(states, cfg)));
                }
            }
            ++traj.audited_events;
        }
    }
    while (next_snap <= grid_points) record();
    traj.final_delta = delta;
    for (std::size_t i = 0; i < n; ++i) traj.systems[i].diagnostics = diags[i];
    return traj;
}

Trajectory run_pi_c_mode(const SimConfig& cfg) {
    if (cfg.buffer != 2) throw ConfigError("Pi(c) mode runs on the b = 2 truncated system");
    if (cfg.initial != InitialCondition::all_busy) throw ConfigError("Pi(c) mode starts with every server busy");
    const bool has_pi = std::any_of(cfg.policies.begin(), cfg.policies.end(),
                                    [](const PolicySpec& p) { return p.kind == PolicyKind::pi_c; });
    if (!has_pi) throw ConfigError("Pi(c) mode needs a PI_C policy");
    return run_coupled(cfg);
}

DeltaLawReport delta_tail_check(std::span<const std::pair<std::int64_t, std::int64_t>> arrivals_and_delta,
                                double p) {
    DeltaLawReport r;
    r.samples = arrivals_and_delta.size();
    if (r.samples == 0) return r;
    const double k = static_cast<double>(r.samples);
    double sum_diff = 0.0;
    for (const auto& [a, d] : arrivals_and_delta) {
        r.mean_delta += static_cast<double>(d);
        r.mean_expected += static_cast<double>(a) * p;
        sum_diff += static_cast<double>(d) - static_cast<double>(a) * p;
    }
    r.mean_delta /= k;
    r.mean_expected /= k;
    const double mean_diff = sum_diff / k;
    double ss = 0.0;
    for (const auto& [a, d] : arrivals_and_delta) {
        const double x = static_cast<double>(d) - static_cast<double>(a) * p - mean_diff;
        ss += x * x;
    }
    r.standard_error = r.samples > 1 ? std::sqrt(ss / (k - 1.0) / k) : 0.0;
    r.z = r.standard_error > 0.0 ? mean_diff / r.standard_error : (mean_diff == 0.0 ? 0.0 : INFINITY);
    return r;
}

}  // namespace lbsim
