#pragma once

// Counter-based pseudo-random generation. Every random draw in the project
// flows through a named stream derived from (root seed, label, indices), so
// identical configs replay bit-identically regardless of evaluation order.

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace s2v {

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Philox4x32-10 block function (Salmon et al. counter-based RNG).
struct Philox4x32 {
    static constexpr uint32_t M0 = 0xD2511F53u;
    static constexpr uint32_t M1 = 0xCD9E8D57u;
    static constexpr uint32_t W0 = 0x9E3779B9u;
    static constexpr uint32_t W1 = 0xBB67AE85u;

    static std::array<uint32_t, 4> block(uint64_t key, std::array<uint32_t, 4> ctr) {
        uint32_t k0 = static_cast<uint32_t>(key);
        uint32_t k1 = static_cast<uint32_t>(key >> 32);
        for (int round = 0; round < 10; ++round) {
            uint64_t p0 = static_cast<uint64_t>(M0) * ctr[0];
            uint64_t p1 = static_cast<uint64_t>(M1) * ctr[2];
            uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
            uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
            k0 += W0;
            k1 += W1;
        }
        return ctr;
    }
};

} // namespace detail

// One logical stream of random values. Cheap to construct; state is a
// 64-bit key plus a block counter.
class RngStream {
public:
    explicit RngStream(uint64_t key) : key_(key) {}

    uint32_t next_u32() {
        if (idx_ == 4) {
            refill();
        }
        return buf_[idx_++];
    }

    uint64_t next_u64() {
        uint64_t lo = next_u32();
        uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer on [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    // Standard normal via Box-Muller; deterministic pair caching.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    void fill_normal(float* dst, size_t n) {
        for (size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(normal());
    }
    void fill_normal(double* dst, size_t n) {
        for (size_t i = 0; i < n; ++i) dst[i] = normal();
    }

private:
    void refill() {
        std::array<uint32_t, 4> c = {static_cast<uint32_t>(ctr_), static_cast<uint32_t>(ctr_ >> 32), 0, 0};
        buf_ = detail::Philox4x32::block(key_, c);
        ++ctr_;
        idx_ = 0;
    }

    uint64_t key_;
    uint64_t ctr_ = 0;
    std::array<uint32_t, 4> buf_{};
    int idx_ = 4;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Root generator: derives named substreams from a single config seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    uint64_t seed() const { return seed_; }

    RngStream stream(std::string_view label) const {
        return RngStream(mix(detail::fnv1a64(label)));
    }
    RngStream stream(std::string_view label, uint64_t a) const {
        return RngStream(mix(detail::splitmix64(detail::fnv1a64(label) ^ detail::splitmix64(a))));
    }
    RngStream stream(std::string_view label, uint64_t a, uint64_t b) const {
        uint64_t h = detail::fnv1a64(label);
        h = detail::splitmix64(h ^ detail::splitmix64(a));
        h = detail::splitmix64(h ^ detail::splitmix64(b ^ 0x7f4a7c15ULL));
        return RngStream(mix(h));
    }

private:
    uint64_t mix(uint64_t h) const { return detail::splitmix64(seed_ ^ detail::splitmix64(h)); }

    uint64_t seed_;
};

} // namespace s2v
