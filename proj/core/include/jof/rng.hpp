#pragma once

#include <cstdint>
#include <random>

namespace jof {

// Deterministic RNG wrapper. Distributions are hand-mapped from the raw
// 64-bit stream so that identical seeds give identical samples on every
// standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    // Standard normal via Box-Muller; one cached spare per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.28318530717958647692 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t raw() { return engine_(); }

    // Counter-based derivation: a fresh, statistically independent stream for
    // (seed, step). Training stages draw per-step randomness through this so
    // that resuming from a checkpoint replays the identical stream.
    static Rng for_step(std::uint64_t seed, std::uint64_t step) {
        return Rng(mix(seed ^ mix(step + 0x9e3779b97f4a7c15ull)));
    }

    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace jof
