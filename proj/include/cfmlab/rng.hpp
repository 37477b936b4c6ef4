#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace cfmlab {

// SplitMix64 step. Used both as a stand-alone generator and as the mixing
// function that derives independent per-purpose streams from a master seed.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Folds (seed, a, b, c) into one well-mixed 64-bit stream seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = seed;
    uint64_t h = splitmix64(s);
    s ^= a * 0x9e3779b97f4a7c15ULL;
    h ^= splitmix64(s);
    s ^= b * 0xc2b2ae3d27d4eb4fULL;
    h ^= splitmix64(s);
    s ^= c * 0x165667b19e3779f9ULL;
    h ^= splitmix64(s);
    return h;
}

// Stream purposes. Every consumer of randomness owns a purpose id so that
// enabling or disabling one feature never shifts the draws of another.
enum class Purpose : uint64_t {
    weight_init = 1,
    train_shuffle = 2,
    data_pattern = 3,
    data_sample = 4,
    target_assign = 5,
    stratified_sample = 6,
    di_draw = 7,
    rdi_draw = 8,
    admix_perm = 9,
    vt_noise = 10,
    cfm_activation = 11,
    cfm_permutation = 12,
    cfm_alpha = 13,
    suite_job = 14,
};

// Deterministic uniform stream. All floating draws use the top bits of
// SplitMix64 so the sequence is identical on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    Rng(uint64_t seed, Purpose purpose, uint64_t index = 0, uint64_t counter = 0)
        : state_(mix_seed(seed, static_cast<uint64_t>(purpose), index, counter)) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // [0,1) with 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // [lo,hi) as float, 24 random bits of mantissa
    float uniform_float(float lo, float hi) {
        float u = static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
        return lo + u * (hi - lo);
    }

    // uniform integer in [0,n)
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Box-Muller (one value per call, no caching so the
    // stream position is easy to reason about)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // uniform permutation of {0,...,n-1}, identity included
    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(uniform_int(static_cast<uint64_t>(i) + 1));
            std::swap(p[i], p[j]);
        }
        return p;
    }

private:
    uint64_t state_;
};

}  // namespace cfmlab
