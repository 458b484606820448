// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "reportrl/util.hpp"

namespace reportrl {

// Deterministic, platform-independent RNG (SplitMix64 core).
//
// Standard-library distributions are implementation-defined, so everything
// here is spelled out explicitly: the same (seed, call sequence) produces
// the same values on any conforming platform.
//
// Streams are derived from the *construction* seed, never from the current
// state, so derivation is independent of how many values were drawn. This
// is what makes sharded corpus generation and parallel rollout sampling
// schedule-independent.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed0_(seed), state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in (0, 1], safe for log().
    double uniform_pos() {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (one value per call, no caching, so
    // the draw count per call is fixed).
    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Uniform integer in [0, n). n must be > 0.
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Seed for a child stream keyed by a label; usable standalone when a
    // plain seed value is needed (e.g. split generation).
    static std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
        return mix(seed ^ fnv1a64(label));
    }

    // Child stream keyed by a label; independent of draws made so far.
    Rng derive(std::string_view label) const {
        return Rng(derive_seed(seed0_, label));
    }

    // Child stream keyed by an index.
    Rng derive(std::uint64_t index) const {
        return Rng(mix(seed0_ ^ (index * 0x9E3779B97F4A7C15ULL + 0x7F4A7C15ULL)));
    }

  private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 33)) * 0xFF51AFD7ED558CCDULL;
        z = (z ^ (z >> 33)) * 0xC4CEB9FE1A85EC53ULL;
        return z ^ (z >> 33);
    }

    std::uint64_t seed0_;
    std::uint64_t state_;
};

} // namespace reportrl
