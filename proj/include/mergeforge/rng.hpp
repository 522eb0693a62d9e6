// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace mergeforge::rng {

// FNV-1a 64-bit hash, used to derive per-tensor RNG streams from tensor names.
constexpr uint64_t fnv1a64(std::string_view data) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : data) {
        h ^= (uint8_t)c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// SplitMix64 (Steele, Lea, Flood). Stateless step + a tiny stream wrapper.
struct SplitMix64 {
    uint64_t state;

    explicit constexpr SplitMix64(uint64_t seed) : state(seed) {}

    constexpr uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
};

// xoshiro256** 1.0 (Blackman, Vigna). Seeded the canonical way: the four
// state words are consecutive SplitMix64 outputs, so the stream is a pure
// function of the 64-bit seed.
class Xoshiro256ss {
public:
    explicit Xoshiro256ss(uint64_t seed) {
        SplitMix64 sm(seed);
        for (auto& w : s_) w = sm.next();
    }

    // Direct state init, for tests against published vectors.
    Xoshiro256ss(uint64_t s0, uint64_t s1, uint64_t s2, uint64_t s3)
        : s_{s0, s1, s2, s3} {}

    uint64_t next_u64() {
        uint64_t result = rotl(s_[1] * 5, 7) * 9;
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53 significant bits.
    double next_double() {
        return (double)(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound). bound > 0. Uses the modulo reduction;
    // the (negligible) bias is acceptable, reproducibility is the contract.
    uint64_t next_below(uint64_t bound) {
        return next_u64() % bound;
    }

private:
    static constexpr uint64_t rotl(uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    uint64_t s_[4];
};

// Per-tensor stream seed for DARE: splitmix64(fnv1a64(name) XOR recipe_seed),
// which then seeds a Xoshiro256ss. With several experts, expert t takes the
// t-th output of the same SplitMix64 stream as its seed, so expert streams
// are distinct and stable under any scheduling.
inline uint64_t tensor_stream_seed(std::string_view tensor_name, uint64_t recipe_seed,
                                   size_t expert_index) {
    SplitMix64 sm(fnv1a64(tensor_name) ^ recipe_seed);
    uint64_t seed = sm.next();
    for (size_t i = 0; i < expert_index; ++i) seed = sm.next();
    return seed;
}

} // namespace mergeforge::rng
