#include "lbsim/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lbsim {

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ContractError("KS statistic needs two nonempty samples");
    std::vector<double> x(a.begin(), a.end());
    std::vector<double> y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double nx = static_cast<double>(x.size());
    const double ny = static_cast<double>(y.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
    }
    return d;
}

FluidState stationary_estimate(const SystemTrajectory& traj, double burn_in) {
    FluidState avg;
    std::size_t count = 0;
    for (const auto& snap : traj.snapshots) {
        if (snap.t + 1e-12 < burn_in) continue;
        const auto q = fluid_scale(snap.state);
        if (avg.q.empty()) avg.q.assign(q.q.size(), 0.0);
        for (std::size_t i = 0; i < q.q.size(); ++i) avg.q[i] += q.q[i];
        ++count;
    }
    if (count == 0) throw ContractError("no snapshots after burn-in");
    for (double& v : avg.q) v /= static_cast<double>(count);
    return avg;
}

double median(std::vector<double> values) {
    if (values.empty()) throw ContractError("median of an empty sample");
    const auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

double mean(std::span<const double> values) {
    if (values.empty()) return 0.0;
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace lbsim
