// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/watermark.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "mergeforge/error.hpp"
#include "mergeforge/rng.hpp"

namespace mergeforge {

QuantizedTensor quantize_symmetric_int8(const Tensor& t) {
    float absmax = 0.0f;
    for (float v : t.values)
        absmax = std::max(absmax, std::fabs(v));
    if (absmax == 0.0f)
        raise(Errc::zero_scale, "cannot quantize an all-zero tensor");

    QuantizedTensor out;
    out.scale = absmax / 127.0f;
    out.q.resize(t.values.size());
    for (size_t i = 0; i < t.values.size(); ++i) {
        const float r = std::round(t.values[i] / out.scale); // half away from zero
        out.q[i] = (int8_t)std::clamp(r, -127.0f, 127.0f);
    }
    return out;
}

static void check_key(const WatermarkKey& key) {
    if (!(key.delta > 0.0 && key.delta < 0.5))
        raise(Errc::recipe, "watermark delta must be in (0, 0.5)");
}

// Position sequence: a Fisher-Yates shuffle of all flat indices, a pure
// function of the key and the tensor size. Saturated bins own only half a
// bin and anchor the scale, so the walk skips them.
static std::vector<uint64_t> key_permutation(uint64_t key, uint64_t n) {
    std::vector<uint64_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0ull);
    rng::Xoshiro256ss gen(key);
    for (uint64_t i = 0; i + 1 < n; ++i) {
        const uint64_t j = i + gen.next_below(n - i);
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

Tensor embed_payload(const Tensor& t, const WatermarkKey& key, const Payload& payload) {
    check_key(key);
    if (payload.bits.empty())
        raise(Errc::empty_input, "payload is empty");

    const QuantizedTensor quant = quantize_symmetric_int8(t);
    const std::vector<uint64_t> perm = key_permutation(key.key, t.values.size());

    Tensor out = t;
    const float delta = (float)key.delta;
    size_t written = 0;
    for (uint64_t idx : perm) {
        if (written == payload.bits.size()) break;
        if (quant.q[idx] == 127 || quant.q[idx] == -127) continue;
        const float offset = payload.bits[written] ? delta : -delta;
        out.values[idx] = ((float)quant.q[idx] + offset) * quant.scale;
        ++written;
    }
    if (written < payload.bits.size())
        raise(Errc::capacity, "payload of " + std::to_string(payload.bits.size()) +
                                  " bits exceeds the " + std::to_string(written) +
                                  " non-saturated positions");
    return out;
}

Payload extract_payload(const Tensor& t, const WatermarkKey& key, size_t nbits,
                        float reference_scale) {
    check_key(key);
    if (!(reference_scale > 0.0f))
        raise(Errc::zero_scale, "reference scale must be positive");
    if (nbits == 0)
        raise(Errc::empty_input, "nbits must be positive");

    const std::vector<uint64_t> perm = key_permutation(key.key, t.values.size());

    Payload out;
    out.bits.reserve(nbits);
    for (uint64_t idx : perm) {
        if (out.bits.size() == nbits) break;
        const float scaled = t.values[idx] / reference_scale;
        const float q = std::round(scaled);
        if (q >= 127.0f || q <= -127.0f) continue; // saturated under the reference scale
        const float r = scaled - q;
        out.bits.push_back(r >= 0.0f ? 1 : 0);
    }
    if (out.bits.size() < nbits)
        raise(Errc::capacity, "requested " + std::to_string(nbits) + " bits but only " +
                                  std::to_string(out.bits.size()) +
                                  " non-saturated positions exist");
    return out;
}

double bit_error_rate(const Payload& a, const Payload& b) {
    if (a.bits.empty() || b.bits.empty())
        raise(Errc::empty_input, "payloads must be non-empty");
    if (a.bits.size() != b.bits.size())
        raise(Errc::length_mismatch, "payload lengths differ: " + std::to_string(a.bits.size()) +
                                         " vs " + std::to_string(b.bits.size()));
    size_t errors = 0;
    for (size_t i = 0; i < a.bits.size(); ++i)
        errors += a.bits[i] != b.bits[i];
    return (double)errors / (double)a.bits.size();
}

Payload payload_from_bytes(const std::vector<uint8_t>& bytes, size_t nbits) {
    if (nbits > bytes.size() * 8)
        raise(Errc::capacity, "nbits exceeds the payload file size");
    Payload out;
    out.bits.resize(nbits);
    for (size_t i = 0; i < nbits; ++i)
        out.bits[i] = (bytes[i / 8] >> (7 - i % 8)) & 1;
    return out;
}

std::vector<uint8_t> payload_to_bytes(const Payload& payload) {
    std::vector<uint8_t> bytes((payload.bits.size() + 7) / 8, 0);
    for (size_t i = 0; i < payload.bits.size(); ++i)
        if (payload.bits[i])
            bytes[i / 8] |= (uint8_t)(1u << (7 - i % 8));
    return bytes;
}

Payload load_payload_file(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file)
        raise(Errc::io, "cannot open payload \"" + path + "\"");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                               std::istreambuf_iterator<char>());
    if (bytes.empty())
        raise(Errc::empty_input, "payload file \"" + path + "\" is empty");
    return payload_from_bytes(bytes, bytes.size() * 8);
}

} // namespace mergeforge
