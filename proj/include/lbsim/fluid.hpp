#pragma once

#include <vector>

#include "lbsim/occupancy.hpp"

namespace lbsim::fluid {

/// q_i >= 1 - kOneTolerance counts as "equal to one" when locating m(q).
inline constexpr double kOneTolerance = 1e-9;

/// m(q) = min{i >= 0 : q_{i+1} < 1}, with q_{b+1} = 0.
int m_of_q(const FluidState& q);

/// Assignment fractions p_0..p_{b-1}: p_i is the share of arrivals joining a
/// queue of length exactly i. Sums to one.
std::vector<double> p_coeffs(const FluidState& q, double lambda);

/// dq_i/dt = lambda p_{i-1}(q) - (q_i - q_{i+1}).
std::vector<double> fluid_rhs(const FluidState& q, double lambda);

/// Fixed point (lambda, 0, ..., 0); requires 0 < lambda < 1.
FluidState fixed_point(double lambda, int levels);

/// Batch-arrival limit: q_1(t) = lambda + (q1_0 - lambda) e^{-t}, q_i = 0 otherwise.
FluidState batch_fluid_closed_form(double q1_0, double lambda, double t, int levels);

struct FluidTrajectory {
    std::vector<double> times;
    std::vector<FluidState> states;
    /// Sum over all steps of the l1 correction applied by projecting onto S.
    double projection_total = 0.0;
    /// Largest single-step correction.
    double projection_max = 0.0;
    bool step_warning = false;
};

struct IntegrateOptions {
    double step = 1e-3;
    /// Output spacing; rounded to a whole number of steps. Zero records every step.
    double output_dt = 0.0;
    /// Per-step projection magnitude above which step_warning is raised.
    double projection_warn = 1e-6;
};

/// Fixed-step classical RK4. Coefficients p(q) are recomputed at every stage,
/// and each step's result is projected back onto S (clamp to [0,1], then a
/// running minimum) with the correction size recorded.
FluidTrajectory integrate_fluid(const FluidState& q0, double lambda, double horizon,
                                const IntegrateOptions& opts = {});

/// Projects onto S in place; returns the l1 size of the correction.
double project_to_simplex(FluidState& q);

/// State of a trajectory at time t (the nearest recorded time at or before t).
const FluidState& state_at(const FluidTrajectory& traj, double t);

}  // namespace lbsim::fluid
