#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>

namespace fdeepc {

/// SplitMix64 generator. Small, fast, and fully portable: the same seed
/// produces the same stream on every platform, which keeps Monte Carlo
/// outputs byte-reproducible.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and up to three tags
/// (e.g. run index, member index, purpose). Counter-based splitting: streams
/// for distinct tag tuples are decorrelated and order-independent, so worker
/// threads can draw them in any order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = base;
    for (std::uint64_t tag : {a, b, c}) {
        SplitMix64 mix(s);
        s = mix.next() ^ (tag * 0xD1B54A32D192ED03ULL);
    }
    SplitMix64 fin(s);
    return fin.next();
}

/// Deterministic standard-normal stream (Box-Muller over SplitMix64).
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : gen_(seed) {}

    double next() {
        if (spare_) {
            const double v = *spare_;
            spare_.reset();
            return v;
        }
        // u1 in (0, 1] keeps the log finite
        const double u1 = 1.0 - gen_.uniform01();
        const double u2 = gen_.uniform01();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        return radius * std::cos(angle);
    }

private:
    SplitMix64 gen_;
    std::optional<double> spare_;
};

}  // namespace fdeepc
