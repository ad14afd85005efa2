#pragma once

#include <cstdint>
#include <cmath>

#include "ntnsync/common.hpp"

namespace ntnsync {

// Small deterministic PRNG (xoshiro256++ seeded via splitmix64). The standard
// library distributions are implementation-defined, so Monte Carlo draws go
// through this to keep campaign outputs reproducible byte-for-byte.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    // Independent per-trial stream: hashes (master, stream) so trials can be
    // generated in any order by any number of workers.
    static Rng derive(std::uint64_t master, std::uint64_t stream) {
        std::uint64_t x = master ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
        return Rng(splitmix64(x) ^ (stream << 1));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint32_t uniform_u32(std::uint32_t n) {
        return static_cast<std::uint32_t>(next_u64() % n);
    }

    // Standard normal via Box-Muller; caches the second deviate.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(kTwoPi * u2);
        have_spare_ = true;
        return r * std::cos(kTwoPi * u2);
    }

    // Circular complex Gaussian with total variance sigma2.
    cdouble cgaussian(double sigma2) {
        const double s = std::sqrt(sigma2 * 0.5);
        return {s * gaussian(), s * gaussian()};
    }

private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::uint64_t state_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace ntnsync
