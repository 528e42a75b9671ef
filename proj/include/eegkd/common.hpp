#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace eegkd {

// Error taxonomy. Every throwing path in the library uses one of these so
// callers (and the CLI exit-code mapping) can tell usage problems from
// numeric ones.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape / dimension mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value (bad hyperparameter, bad mode combination).
struct ConfigError : Error {
    using Error::Error;
};

// API contract violation (e.g. backward on a non-scalar root).
struct ContractError : Error {
    using Error::Error;
};

// Non-finite value where a finite one is required.
struct NumericError : Error {
    using Error::Error;
};

// Malformed file. Carries the byte offset where parsing failed.
struct FormatError : Error {
    std::size_t offset;
    FormatError(const std::string& msg, std::size_t at)
        : Error(msg + " (at byte offset " + std::to_string(at) + ")"), offset(at) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG helpers.
//
// std::mt19937's output stream is pinned by the standard, but the standard
// distributions are not, so every transform we rely on is spelled out here.
// ---------------------------------------------------------------------------

using Rng = std::mt19937;

// Uniform in [0, 1).
inline float uniform01(Rng& rng) {
    return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
}

inline float uniform_range(Rng& rng, float lo, float hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n). n must be positive.
inline std::int64_t uniform_int(Rng& rng, std::int64_t n) {
    return static_cast<std::int64_t>(
        (static_cast<std::uint64_t>(rng()) * static_cast<std::uint64_t>(n)) >> 32);
}

// Standard normal via Box-Muller. Stateless: two raw draws per sample.
inline float normal01(Rng& rng) {
    const double u1 = (static_cast<double>(rng()) + 0.5) / 4294967296.0;
    const double u2 = (static_cast<double>(rng()) + 0.5) / 4294967296.0;
    return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                              std::cos(6.283185307179586 * u2));
}

// Normal(0, sigma) truncated to +/- 2 sigma by rejection.
inline float trunc_normal(Rng& rng, float sigma) {
    for (;;) {
        const float z = normal01(rng);
        if (z >= -2.0f && z <= 2.0f) return z * sigma;
    }
}

}  // namespace eegkd
