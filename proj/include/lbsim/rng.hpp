#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lbsim {

/// splitmix64 finalizer, used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed of replication `rep` under master seed `master`. Order-independent:
/// the same (master, rep) always yields the same stream.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t rep) noexcept {
    return mix64(mix64(master) ^ mix64(rep + 0xA5A5A5A5ULL));
}

/// Thin wrapper over mt19937_64 with platform-independent uniform and
/// exponential draws (the std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1].
    double uniform_pos() noexcept { return 1.0 - uniform(); }

    double exponential(double rate) noexcept { return -std::log(uniform_pos()) / rate; }

    /// Uniform integer on [1, n] (rejection sampling, unbiased).
    std::int64_t rank(std::int64_t n) noexcept {
        const auto range = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return static_cast<std::int64_t>(x % range) + 1;
    }

    double normal() noexcept { return normal_(engine_); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace lbsim
