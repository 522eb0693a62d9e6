// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mergeforge/tensor.hpp"

namespace mergeforge {

// Symmetric per-tensor INT8 image: q in [-127, 127], scale = absmax / 127.
struct QuantizedTensor {
    std::vector<int8_t> q;
    float scale = 0.0f;

    bool operator==(const QuantizedTensor&) const = default;
};

// scale = max|t| / 127; q_i = clamp(round-half-away-from-zero(t_i / scale)).
// Throws Errc::zero_scale for an all-zero tensor.
QuantizedTensor quantize_symmetric_int8(const Tensor& t);

struct WatermarkKey {
    uint64_t key = 0;
    // Intra-bin offset magnitude, in fractions of one quantization bin.
    // Strictly below 0.5 so the INT8 image provably cannot move.
    double delta = 0.25;
};

struct Payload {
    std::vector<uint8_t> bits; // each 0 or 1

    size_t size() const { return bits.size(); }
    bool operator==(const Payload&) const = default;
};

// Writes payload bits into the quantization gap: at key-selected non-saturated
// positions the value becomes (q_i +/- delta) * scale, which re-quantizes to
// exactly the same (q, scale). Throws Errc::capacity when the payload exceeds
// the number of non-saturated positions.
Tensor embed_payload(const Tensor& t, const WatermarkKey& key, const Payload& payload);

// Recomputes the key's position sequence and reads each bit from the sign of
// the fractional offset t_i/reference_scale - round(t_i/reference_scale).
// The verifier supplies the embed-time scale; saturation skipping is
// re-derived from the suspect values, which reproduces the embed-time walk
// exactly on an unmodified tensor.
Payload extract_payload(const Tensor& t, const WatermarkKey& key, size_t nbits,
                        float reference_scale);

// Hamming distance / length. Throws Errc::length_mismatch on unequal sizes.
double bit_error_rate(const Payload& a, const Payload& b);

// Payload files are raw bytes, bits MSB-first within each byte.
Payload payload_from_bytes(const std::vector<uint8_t>& bytes, size_t nbits);
std::vector<uint8_t> payload_to_bytes(const Payload& payload);
Payload load_payload_file(const std::string& path);

} // namespace mergeforge
