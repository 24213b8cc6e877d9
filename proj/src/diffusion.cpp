#include "lbsim/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "lbsim/rng.hpp"

namespace lbsim::diffusion {

void DiffusionParams::validate() const {
    if (!(beta >= 0.0)) throw ConfigError("beta must be nonnegative");
    if (levels < 2) throw ConfigError(fmt::format("need at least two levels, got {}", levels));
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (!(step > 0.0)) throw ConfigError("step must be positive");
}

double sde_step(DiffusionState& s, const DiffusionParams& params, double dw) {
    auto& x = s.qbar;
    const std::size_t k = x.size();
    const double h = params.step;
    const double next1 = k >= 3 ? x[2] : 0.0;

    const double y = x[0] + std::sqrt(2.0) * dw - params.beta * h + (-x[0] + x[1]) * h;
    double du = 0.0;
    double new0 = y;
    if (y > 0.0) {
        new0 = 0.0;
        du = y;
    }
    // Explicit scheme: every drift reads pre-step values.
    for (std::size_t i = 2; i < k; ++i) {
        const double above = i + 1 < k ? x[i + 1] : 0.0;
        x[i] -= (x[i] - above) * h;
    }
    x[1] += du - (x[1] - next1) * h;
    x[0] = new0;
    s.reflection += du;
    return du;
}

DiffusionState sde_stepped(DiffusionState s, const DiffusionParams& params, double dw) {
    sde_step(s, params, dw);
    return s;
}

std::vector<double> SdeSamples::coordinate(int i) const {
    std::vector<double> out;
    out.reserve(terminal.size());
    for (const auto& t : terminal) out.push_back(t[static_cast<std::size_t>(i - 1)]);
    return out;
}

DiffusionState initial_state(int levels, double q2_0) {
    DiffusionState s;
    s.qbar.assign(static_cast<std::size_t>(levels), 0.0);
    if (levels >= 2) s.qbar[1] = q2_0;
    return s;
}

namespace {

template <class OnStep>
DiffusionState run_path(const DiffusionParams& params, DiffusionState s, std::uint64_t rep, OnStep&& on_step) {
    if (static_cast<int>(s.qbar.size()) != params.levels) throw ContractError("initial state has wrong level count");
    if (s.qbar[0] > 0.0) throw ContractError("first coordinate must start at or below zero");
    Rng rng(derive_seed(params.seed, rep));
    const auto steps = static_cast<std::int64_t>(std::llround(params.horizon / params.step));
    const double sd = std::sqrt(params.step) * params.noise_scale;
    for (std::int64_t n = 1; n <= steps; ++n) {
        const double dw = params.noise_scale == 0.0 ? 0.0 : sd * rng.normal();
        const double du = sde_step(s, params, dw);
        on_step(n, s, du);
    }
    return s;
}

}  // namespace

DiffusionPath simulate_path(const DiffusionParams& params, const DiffusionState& start, std::uint64_t rep,
                            int record_every) {
    params.validate();
    DiffusionPath path;
    path.points.push_back({0.0, start.qbar, start.reflection, 0.0});
    const auto steps = static_cast<std::int64_t>(std::llround(params.horizon / params.step));
    double pending_du = 0.0;
    run_path(params, start, rep, [&](std::int64_t n, const DiffusionState& s, double du) {
        pending_du += du;
        if (n % record_every == 0 || n == steps) {
            path.points.push_back({static_cast<double>(n) * params.step, s.qbar, s.reflection, pending_du});
            pending_du = 0.0;
        }
    });
    return path;
}

SdeSamples simulate_sde(const DiffusionParams& params, int reps, const DiffusionState& start, bool keep_paths,
                        int record_every) {
    params.validate();
    SdeSamples out;
    out.terminal.reserve(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
        if (keep_paths) {
            auto path = simulate_path(params, start, static_cast<std::uint64_t>(r), record_every);
            const auto& last = path.points.back();
            out.terminal.push_back(last.qbar);
            out.terminal_reflection.push_back(last.reflection);
            double sup2 = start.qbar[1];
            for (const auto& p : path.points) sup2 = std::max(sup2, p.qbar[1]);
            out.sup_second.push_back(sup2);
            out.paths.push_back(std::move(path));
        } else {
            double sup2 = start.qbar[1];
            const auto end = run_path(params, start, static_cast<std::uint64_t>(r),
                                      [&](std::int64_t, const DiffusionState& s, double) {
                                          sup2 = std::max(sup2, s.qbar[1]);
                                      });
            out.terminal.push_back(end.qbar);
            out.terminal_reflection.push_back(end.reflection);
            out.sup_second.push_back(sup2);
        }
    }
    return out;
}

std::optional<std::string> complementarity_audit(const DiffusionPath& path) {
    double prev_u = path.points.empty() ? 0.0 : path.points.front().reflection;
    for (std::size_t i = 0; i < path.points.size(); ++i) {
        const auto& p = path.points[i];
        if (p.qbar.empty()) return fmt::format("point {} has no coordinates", i);
        if (p.qbar[0] > 0.0) return fmt::format("point {}: first coordinate {} above zero", i, p.qbar[0]);
        if (p.d_reflection < 0.0) return fmt::format("point {}: negative reflection increment", i);
        if (p.d_reflection > 0.0 && p.qbar[0] != 0.0) {
            return fmt::format("point {} (t={}): reflection increment {} while first coordinate is {}", i, p.t,
                               p.d_reflection, p.qbar[0]);
        }
        if (p.reflection < prev_u) return fmt::format("point {}: reflection decreased", i);
        prev_u = p.reflection;
    }
    return std::nullopt;
}

}  // namespace lbsim::diffusion
