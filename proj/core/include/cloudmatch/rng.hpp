#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>

namespace cloudmatch {

/// xoshiro256++ generator. Chosen over std::mt19937 because the full state is
/// four words, which makes checkpoint serialization and cross-platform
/// bit-reproducibility trivial.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
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

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n). Lemire's multiply-shift; slight modulo bias
    /// (< 2^-64 * n) is irrelevant at the ranges used here.
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    std::array<std::uint64_t, 4> state() const { return state_; }
    void restore(const std::array<std::uint64_t, 4>& s) { state_ = s; }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Hash-combines a seed with counters (epoch, step, ...) into a derived
    /// stream seed. Counter-based seeding keeps training resumable from a
    /// checkpoint at any step without replaying the RNG history.
    static std::uint64_t mix(std::initializer_list<std::uint64_t> parts) {
        std::uint64_t x = 0x243f6a8885a308d3ull;
        for (std::uint64_t p : parts) {
            x ^= p;
            (void)splitmix64(x);
            x ^= x >> 29;
        }
        std::uint64_t y = x;
        return splitmix64(y);
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
};

} // namespace cloudmatch
