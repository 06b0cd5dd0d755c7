#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lpr/errors.hpp"

namespace lpr {

namespace detail {
// splitmix64 finalizer; also used to derive sub-stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
} // namespace detail

// Counter-based PRNG (splitmix64 stream). The state is (seed, counter), so the
// same seed and call sequence reproduce the same values on every platform.
// Normals come from Box-Muller with no cached spare.
class RngState {
public:
    explicit RngState(std::uint64_t seed) : seed_(seed), counter_(0) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept { return detail::mix64(seed_ + 0x9E3779B97F4A7C15ULL * counter_++); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform01() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal. Consumes exactly two uniforms per call.
    double gaussian() noexcept {
        // u1 in (0, 1] so the log is finite.
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Index into a normalized probability vector by inverse CDF.
    int categorical(const std::vector<double> &probs) {
        if (probs.empty()) throw ParamError("categorical: empty probability vector");
        const double u = uniform01();
        double acc = 0.0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            acc += probs[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(probs.size()) - 1;
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

// Deterministic sub-stream seed for a named purpose within a run.
inline std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) {
    return detail::mix64(seed ^ detail::mix64(tag));
}

} // namespace lpr
