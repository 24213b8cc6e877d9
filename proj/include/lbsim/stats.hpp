#pragma once

#include <span>
#include <vector>

#include "lbsim/engine.hpp"
#include "lbsim/occupancy.hpp"

namespace lbsim {

/// Two-sample Kolmogorov-Smirnov statistic: sup_x |F_a(x) - F_b(x)|.
/// Ties across samples are handled by stepping both CDFs past a value together.
double ks_two_sample(std::span<const double> a, std::span<const double> b);

/// Time average of the fluid-scaled snapshots at or after `burn_in`.
FluidState stationary_estimate(const SystemTrajectory& traj, double burn_in);

double median(std::vector<double> values);
double mean(std::span<const double> values);

}  // namespace lbsim
