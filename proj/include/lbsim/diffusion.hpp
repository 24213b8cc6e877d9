#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lbsim/occupancy.hpp"

namespace lbsim::diffusion {

struct DiffusionParams {
    double beta = 1.0;  // Halfin-Whitt slack, (N - lambda(N)) / sqrt(N) -> beta
    int levels = 2;     // k tracked coordinates
    double horizon = 1.0;
    double step = 1e-3;
    std::uint64_t seed = 0;
    /// Multiplies the Brownian increments; 0 gives the deterministic skeleton.
    double noise_scale = 1.0;

    void validate() const;
};

/// One Euler-Maruyama step with reflection of the first coordinate at 0.
/// `dw` is the Brownian increment over the step (variance h). Returns the
/// reflection increment dU applied during the step.
double sde_step(DiffusionState& s, const DiffusionParams& params, double dw);

/// Pure variant.
DiffusionState sde_stepped(DiffusionState s, const DiffusionParams& params, double dw);

struct PathPoint {
    double t = 0.0;
    std::vector<double> qbar;
    double reflection = 0.0;
    double d_reflection = 0.0;  // dU applied in the step ending at t
};

struct DiffusionPath {
    std::vector<PathPoint> points;
};

struct SdeSamples {
    /// terminal[r] = (Qbar_1(T), ..., Qbar_k(T)) of replication r.
    std::vector<std::vector<double>> terminal;
    std::vector<double> terminal_reflection;
    /// Running sup of Qbar_2 over [0, T], per replication.
    std::vector<double> sup_second;
    std::vector<DiffusionPath> paths;  // filled only when requested

    std::vector<double> coordinate(int i) const;  // 1-based
};

/// Default initial law: point mass at (0, q2_0, 0, ..., 0).
DiffusionState initial_state(int levels, double q2_0 = 0.0);

/// One path from `start`; replication seeds are derived from params.seed.
DiffusionPath simulate_path(const DiffusionParams& params, const DiffusionState& start, std::uint64_t rep,
                            int record_every = 1);

SdeSamples simulate_sde(const DiffusionParams& params, int reps, const DiffusionState& start,
                        bool keep_paths = false, int record_every = 1);

/// dU > 0 only at points where Qbar_1 = 0 after the step; U nondecreasing.
std::optional<std::string> complementarity_audit(const DiffusionPath& path);

}  // namespace lbsim::diffusion
