#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace simulseq {

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so a
// seed produces the same stream on every platform; std::*_distribution makes
// no such promise.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller; one value per call, the pair's second half is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        cached_ = r * std::sin(2.0 * M_PI * u2);
        has_cached_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Derive an independent generator, e.g. one per sample.
    Rng fork(uint64_t stream_id) {
        uint64_t s = next_u64();
        return Rng(s ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1)));
    }

private:
    std::mt19937_64 gen_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace simulseq
