#include "lbsim/fluid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace lbsim::fluid {

namespace {

bool is_one(double v) { return v >= 1.0 - kOneTolerance; }

}  // namespace

int m_of_q(const FluidState& q) {
    const int b = q.levels();
    int m = 0;
    while (m < b && is_one(q.at(m + 1))) ++m;
    return m;
}

std::vector<double> p_coeffs(const FluidState& q, double lambda) {
    if (!(lambda > 0.0)) throw ContractError("p_coeffs requires lambda > 0");
    const int b = q.levels();
    std::vector<double> p(static_cast<std::size_t>(std::max(b, 1)), 0.0);
    const int m = m_of_q(q);
    if (m == 0) {
        p[0] = 1.0;
        return p;
    }
    const double room = 1.0 - q.at(m + 1);
    const double lower = std::min(room / lambda, 1.0);
    if (m == b && lower < 1.0) {
        // All b levels full and arrivals exceed the drain rate; needs lambda >= 1.
        throw ContractError(fmt::format("p(q) undefined at m(q) = b = {} with lambda = {}", b, lambda));
    }
    p[static_cast<std::size_t>(m - 1)] = lower;
    if (m < b) p[static_cast<std::size_t>(m)] = 1.0 - lower;
    return p;
}

std::vector<double> fluid_rhs(const FluidState& q, double lambda) {
    const auto p = p_coeffs(q, lambda);
    const int b = q.levels();
    std::vector<double> dq(static_cast<std::size_t>(b));
    for (int i = 1; i <= b; ++i) {
        dq[static_cast<std::size_t>(i - 1)] = lambda * p[static_cast<std::size_t>(i - 1)] - (q.at(i) - q.at(i + 1));
    }
    return dq;
}

FluidState fixed_point(double lambda, int levels) {
    if (!(lambda > 0.0 && lambda < 1.0)) {
        throw std::domain_error(fmt::format("fixed point needs 0 < lambda < 1, got {}", lambda));
    }
    if (levels < 1) throw ContractError("levels must be positive");
    FluidState q;
    q.q.assign(static_cast<std::size_t>(levels), 0.0);
    q.q[0] = lambda;
    return q;
}

FluidState batch_fluid_closed_form(double q1_0, double lambda, double t, int levels) {
    if (q1_0 < 0.0 || q1_0 > lambda) throw ContractError("closed form requires 0 <= q1(0) <= lambda");
    FluidState q;
    q.q.assign(static_cast<std::size_t>(levels), 0.0);
    q.q[0] = lambda + (q1_0 - lambda) * std::exp(-t);
    return q;
}

double project_to_simplex(FluidState& q) {
    double moved = 0.0;
    double ceiling = 1.0;
    for (double& v : q.q) {
        const double w = std::min(std::clamp(v, 0.0, 1.0), ceiling);
        moved += std::abs(w - v);
        v = w;
        ceiling = w;
    }
    return moved;
}

FluidTrajectory integrate_fluid(const FluidState& q0, double lambda, double horizon, const IntegrateOptions& opts) {
    if (!(opts.step > 0.0)) throw ContractError("integration step must be positive");
    if (!q0.in_simplex(1e-12)) throw ContractError("initial fluid state must lie in S");
    const auto steps = static_cast<std::int64_t>(std::llround(horizon / opts.step));
    const std::int64_t every =
        opts.output_dt > 0.0 ? std::max<std::int64_t>(1, std::llround(opts.output_dt / opts.step)) : 1;
    const double h = opts.step;
    const std::size_t b = q0.q.size();

    FluidTrajectory out;
    FluidState q = q0;
    out.times.push_back(0.0);
    out.states.push_back(q);

    FluidState stage;
    stage.q.resize(b);
    auto eval_at = [&](const std::vector<double>& k, double scale) {
        for (std::size_t i = 0; i < b; ++i) stage.q[i] = q.q[i] + scale * k[i];
        return fluid_rhs(stage, lambda);
    };
    for (std::int64_t s = 1; s <= steps; ++s) {
        const auto k1 = fluid_rhs(q, lambda);
        const auto k2 = eval_at(k1, h / 2);
        const auto k3 = eval_at(k2, h / 2);
        const auto k4 = eval_at(k3, h);
        for (std::size_t i = 0; i < b; ++i) q.q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        const double moved = project_to_simplex(q);
        out.projection_total += moved;
        out.projection_max = std::max(out.projection_max, moved);
        if (moved > opts.projection_warn) out.step_warning = true;
        if (s % every == 0 || s == steps) {
            out.times.push_back(static_cast<double>(s) * h);
            out.states.push_back(q);
        }
    }
    return out;
}

const FluidState& state_at(const FluidTrajectory& traj, double t) {
    auto it = std::upper_bound(traj.times.begin(), traj.times.end(), t + 1e-9);
    if (it == traj.times.begin()) return traj.states.front();
    return traj.states[static_cast<std::size_t>(std::distance(traj.times.begin(), it) - 1)];
}

}  // namespace lbsim::fluid
