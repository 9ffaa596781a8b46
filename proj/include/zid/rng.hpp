#pragma once

// Splittable counter-based 64-bit generator. Each draw is a pure function of
// (key, counter), so a stream derived from (seed, label, index) yields the
// same values regardless of how many other streams were consumed before it.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "zid/common.hpp"

ZID_NAMESPACE_BEGIN

namespace detail {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_label(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace detail

class Rng {
public:
    explicit constexpr Rng(std::uint64_t seed = 0) : key_(detail::mix64(seed ^ 0x5851F42D4C957F2Dull)) {}

    /// Child stream keyed by an integer index.
    [[nodiscard]] Rng split(std::uint64_t index) const {
        return Rng(key_, detail::mix64(key_ ^ detail::mix64(index + 0x632BE59BD9B4E019ull)));
    }
    /// Child stream keyed by a label (e.g. a parameter name).
    [[nodiscard]] Rng split(std::string_view label) const {
        return split(detail::hash_label(label));
    }

    std::uint64_t next_u64() {
        return detail::mix64(detail::mix64(key_ + counter_++ * 0xD1B54A32D192ED03ull) ^ key_);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [lo, hi] (inclusive), unbiased by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64());
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return lo + static_cast<std::int64_t>(r % span);
    }

    /// Standard normal via Box-Muller (one variate per pair of uniforms).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    constexpr Rng(std::uint64_t, std::uint64_t key) : key_(key) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

ZID_NAMESPACE_END
