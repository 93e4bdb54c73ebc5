#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace vllfl {

// Deterministic named random streams.
//
// Every random draw in the project comes from an RngStream. A stream is
// identified by (seed, name, a, b); the same identity always produces the
// same draw sequence on every platform:
//   - state advance: SplitMix64
//   - uniform doubles: top 53 bits of the output word
//   - normal variates: Box-Muller on two uniforms, second value cached
//
// Stream names in use: "init", "selection", "world", "scenes", "batching".
// The (a, b) pair derives substreams, e.g. ("scenes", client_id, scene_idx)
// or ("batching", client_id, round), so draws never depend on the order in
// which unrelated parts of the program consume randomness.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::string_view name,
              std::uint64_t a = 0, std::uint64_t b = 0)
        : state_(mix(mix(mix(seed ^ fnv1a(name)) ^ a) ^ b)) {}

    std::uint64_t next_u64() {
        // SplitMix64 (Steele, Lea, Flood 2014). Public-domain constants.
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit mantissa resolution.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    // Uniform integer in [0, n). n must be >= 1.
    std::uint64_t next_index(std::uint64_t n) {
        // Multiply-shift reduction; bias is < 2^-64 * n, irrelevant here
        // and still fully deterministic.
        unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    // Standard normal via Box-Muller. Consumes two uniforms per pair of
    // variates; the second variate is cached for the next call.
    double next_normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        // Guard against log(0).
        while (u1 <= 0.0) u1 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    double next_normal(double mean, double stddev) {
        return mean + stddev * next_normal();
    }

private:
    static constexpr std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : s) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace vllfl
