#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace recon {

// Deterministic counter-free PRNG (xoshiro256++) with explicit distribution
// code so sequences are identical across platforms and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    // Derives an independent stream: child k of a parent seed.
    Rng(uint64_t seed, uint64_t stream) { reseed(splitmix(seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1)))); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9E3779B97F4A7C15ULL;
            s = splitmix(x);
        }
        has_spare_ = false;
    }

    uint64_t next_u64() {
        uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        uint64_t t = state_[1] << 17;
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

    // Uniform integer in [0, n), n > 0. Modulo bias is below 2^-32 for the
    // sizes used here.
    uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // First k entries of a Fisher-Yates shuffle over 0..n-1.
    std::vector<uint32_t> sample_indices(uint32_t n, uint32_t k) {
        std::vector<uint32_t> idx(n);
        for (uint32_t i = 0; i < n; ++i) idx[i] = i;
        if (k > n) k = n;
        for (uint32_t i = 0; i < k; ++i) {
            uint32_t j = i + static_cast<uint32_t>(uniform_index(n - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

    static uint64_t splitmix(uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace recon
