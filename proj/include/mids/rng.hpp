/**
 * Seeded RNG wrapper for deterministic simulation runs.
 *
 * All stochastic code in the library draws from an explicit Rng instance;
 * nothing touches global random state. Distributions are hand-rolled on top
 * of mt19937_64 so that a given seed produces the same stream on every
 * platform and standard library.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace mids {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    /// Standard normal via Box-Muller (cosine branch, no cached spare).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform index in [0, n). n must be positive.
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: n must be positive");
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return static_cast<std::size_t>(v % n);
    }

    /// Draw an index from an unnormalized weight vector by CDF inversion.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0))
            throw std::invalid_argument("Rng::categorical: weights must have positive mass");
        double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;  // guard against rounding at the top end
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to decorrelate derived seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derive a substream seed from a master seed and a fixed role label.
/// Distinct labels give disjoint streams for the same master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix_seed(master ^ mix_seed(h));
}

inline Rng derive_stream(std::uint64_t master, std::string_view label) {
    return Rng(derive_seed(master, label));
}

}  // namespace mids
