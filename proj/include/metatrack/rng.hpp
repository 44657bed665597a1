#pragma once

#include <cstdint>
#include <cmath>

namespace metatrack {

// Deterministic RNG with hand-rolled distributions so that streams are
// bit-identical across platforms and standard library versions.
// Core generator is splitmix64 (Steele et al.), good enough for simulation.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (one value per call, no cached state).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
        uint64_t span = static_cast<uint64_t>(hi_inclusive - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    // Derives an independent deterministic stream, for per-clip / per-worker use.
    Rng fork(uint64_t stream_id) const {
        Rng child(state_ ^ (0x6a09e667f3bcc909ull + stream_id * 0x9e3779b97f4a7c15ull));
        child.next_u64();
        return child;
    }

private:
    uint64_t state_;
};

} // namespace metatrack
