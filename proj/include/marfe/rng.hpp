#pragma once

#include <cstdint>
#include <limits>

namespace marfe {

/// SplitMix64 (Steele, Lea, Flood 2014). 64 bits of state, one multiply-xorshift
/// finalizer per draw. Satisfies UniformRandomBitGenerator so it plugs into
/// <random> distributions.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        state_ += kGamma;
        return mix(state_);
    }

    /// Uniform double in [0, 1) built from the top 53 bits.
    constexpr double uniform() noexcept {
        return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
    }

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
    std::uint64_t state_;
};

/// Counter-based stream derivation. The stream for (phase, agent) is seeded by
/// hashing the master seed with both counters, so any agent's randomness can be
/// reproduced without replaying the others and workers never coordinate.
class RngPlan {
public:
    constexpr RngPlan() noexcept = default;
    explicit constexpr RngPlan(std::uint64_t master_seed) noexcept : master_seed_(master_seed) {}

    constexpr std::uint64_t master_seed() const noexcept { return master_seed_; }

    constexpr std::uint64_t stream_seed(std::uint64_t phase, std::uint64_t agent) const noexcept {
        std::uint64_t h = SplitMix64::mix(master_seed_ ^ 0x6a09e667f3bcc908ULL);
        h = SplitMix64::mix(h ^ (phase + 0x9e3779b97f4a7c15ULL));
        h = SplitMix64::mix(h ^ (agent + 0xbb67ae8584caa73bULL));
        return h;
    }

    constexpr SplitMix64 stream(std::uint64_t phase, std::uint64_t agent) const noexcept {
        return SplitMix64(stream_seed(phase, agent));
    }

    /// Child plan for independent trials (seeds, keys) sharing one master seed.
    constexpr RngPlan derive(std::uint64_t trial) const noexcept {
        return RngPlan(SplitMix64::mix(master_seed_ ^ SplitMix64::mix(trial + 0x3c6ef372fe94f82bULL)));
    }

private:
    std::uint64_t master_seed_ = 0;
};

} // namespace marfe
