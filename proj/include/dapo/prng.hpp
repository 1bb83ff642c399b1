#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dapo {

// Repo-wide PRNG: xoshiro256++ seeded through SplitMix64. Fixed algorithm so
// that every experiment is bit-reproducible across platforms; std::random
// distributions are implementation-defined and are not used anywhere.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
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

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (two fresh uniforms per call; no cached
    // spare, so the draw sequence only depends on call order).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Dirichlet(1,...,1): normalized unit exponentials.
    std::vector<double> dirichlet(int n) {
        std::vector<double> x(static_cast<std::size_t>(n));
        double sum = 0.0;
        for (auto& xi : x) {
            double u = uniform();
            while (u <= 0.0) u = uniform();
            xi = -std::log(u);
            sum += xi;
        }
        for (auto& xi : x) xi /= sum;
        return x;
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4];
};

// Per-repetition seed stream: mix the master seed with the stream index
// through SplitMix64. Documented in the README; changing this breaks replay.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t s = master ^ (0xD1B54A32D192ED03ULL * (index + 1));
    return splitmix64(s);
}

}  // namespace dapo
