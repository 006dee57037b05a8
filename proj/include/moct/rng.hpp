// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "moct/errors.hpp"

namespace moct {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

// Mixes a base seed with stream tags so independent streams never collide.
inline uint64_t derive_seed(uint64_t base, uint64_t tag) { return splitmix64(base ^ splitmix64(tag)); }
inline uint64_t derive_seed(uint64_t base, std::string_view tag) { return derive_seed(base, fnv1a64(tag)); }
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t extra) {
    return derive_seed(derive_seed(base, tag), extra);
}

// Seed-partition scheme: training streams draw from even seeds, held-out
// evaluation streams from odd seeds, so the two can never replay each other.
inline uint64_t train_stream_seed(uint64_t derived) { return derived << 1; }
inline uint64_t eval_stream_seed(uint64_t derived) { return (derived << 1) | 1ULL; }

// Deterministic RNG. mt19937_64 is fully specified by the standard; all
// distribution transforms are implemented here so sampled values depend only
// on the seed, not on the standard library build.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double normal() {
        // Box-Muller; the second value of the pair is discarded.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Normal(0, std) resampled until within trunc standard deviations.
    double truncated_normal(double stddev, double trunc = 2.0) {
        double z = normal();
        while (std::abs(z) > trunc) z = normal();
        return z * stddev;
    }

    // Marsaglia-Tsang; the alpha < 1 case uses the boost identity.
    double gamma(double alpha) {
        if (alpha < 1.0) {
            const double u = uniform();
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    // Symmetric Dirichlet(alpha) over n outcomes.
    std::vector<double> dirichlet(double alpha, int n) {
        std::vector<double> out(static_cast<size_t>(n));
        double sum = 0.0;
        for (auto& v : out) {
            v = gamma(alpha);
            sum += v;
        }
        for (auto& v : out) v /= sum;
        return out;
    }

    // Index drawn proportionally to the (non-normalized) weights.
    int categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw ConfigError("categorical draw requires positive total weight");
        double r = uniform() * total;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            r -= weights[i];
            if (r < 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace moct
