// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/dtype.hpp"

#include <cmath>
#include <cstring>

#include "mergeforge/error.hpp"

namespace mergeforge {

size_t dtype_size(DType d) {
    switch (d) {
        case DType::F32: return 4;
        case DType::F16: return 2;
        case DType::BF16: return 2;
        case DType::I8: return 1;
    }
    return 0;
}

std::string_view dtype_name(DType d) {
    switch (d) {
        case DType::F32: return "F32";
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
        case DType::I8: return "I8";
    }
    return "?";
}

DType dtype_from_name(std::string_view name) {
    if (name == "F32") return DType::F32;
    if (name == "F16") return DType::F16;
    if (name == "BF16") return DType::BF16;
    if (name == "I8") return DType::I8;
    raise(Errc::dtype, "unsupported dtype \"" + std::string(name) + "\"");
}

static uint32_t f32_bits(float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    return u;
}

static float f32_from_bits(uint32_t u) {
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

float f16_to_f32(uint16_t h) {
    uint32_t sign = (uint32_t)(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1Fu;
    uint32_t man = h & 0x3FFu;
    if (exp == 0) {
        if (man == 0) return f32_from_bits(sign); // signed zero
        // subnormal: renormalize; value = man * 2^-24
        int shift = 0;
        while (!(man & 0x400u)) {
            man <<= 1;
            ++shift;
        }
        man &= 0x3FFu;
        uint32_t e = 127 - 14 - (uint32_t)shift; // implicit bit now at 2^(-14-shift)
        return f32_from_bits(sign | (e << 23) | (man << 13));
    }
    if (exp == 31) // inf / nan, payload carried over
        return f32_from_bits(sign | 0x7F800000u | (man << 13));
    return f32_from_bits(sign | ((exp - 15 + 127) << 23) | (man << 13));
}

uint16_t f32_to_f16(float f) {
    uint32_t u = f32_bits(f);
    uint32_t sign = (u >> 16) & 0x8000u;
    int32_t exp = (int32_t)((u >> 23) & 0xFFu) - 127 + 15;
    uint32_t man = u & 0x7FFFFFu;

    if (((u >> 23) & 0xFFu) == 0xFFu) { // inf / nan
        if (man == 0) return (uint16_t)(sign | 0x7C00u);
        uint16_t payload = (uint16_t)(man >> 13);
        return (uint16_t)(sign | 0x7C00u | payload | (payload == 0 ? 0x200u : 0));
    }
    if (exp >= 31) // overflow to infinity
        return (uint16_t)(sign | 0x7C00u);
    if (exp <= 0) {
        // subnormal or zero; shift mantissa (with implicit bit) into place
        if (exp < -10) return (uint16_t)sign;
        man |= 0x800000u;
        uint32_t shift = (uint32_t)(14 - exp); // bits dropped below the 2^-24 lsb
        uint32_t half = 1u << (shift - 1);
        uint32_t rest = man & ((1u << shift) - 1);
        uint32_t out = man >> shift;
        if (rest > half || (rest == half && (out & 1u)))
            ++out; // may carry into exponent, which is exactly right
        return (uint16_t)(sign | out);
    }
    // normal: drop 13 mantissa bits, round to nearest even
    uint32_t rest = man & 0x1FFFu;
    uint32_t out = ((uint32_t)exp << 10) | (man >> 13);
    if (rest > 0x1000u || (rest == 0x1000u && (out & 1u)))
        ++out; // carry propagates into exponent correctly, incl. to infinity
    return (uint16_t)(sign | out);
}

float bf16_to_f32(uint16_t b) {
    return f32_from_bits((uint32_t)b << 16);
}

uint16_t f32_to_bf16(float f) {
    uint32_t u = f32_bits(f);
    if (((u >> 23) & 0xFFu) == 0xFFu && (u & 0x7FFFFFu) != 0)
        return (uint16_t)((u >> 16) | 0x40u); // quiet nan, keep sign
    uint32_t rounded = u + 0x7FFFu + ((u >> 16) & 1u);
    return (uint16_t)(rounded >> 16);
}

int8_t f32_to_i8(float f) {
    if (std::isnan(f)) return 0;
    float r = std::nearbyintf(f); // nearest-even in the default rounding mode
    if (r <= -128.0f) return -128;
    if (r >= 127.0f) return 127;
    return (int8_t)r;
}

void widen_to_f32(DType src_dtype, const uint8_t* src, size_t count, float* dst) {
    switch (src_dtype) {
        case DType::F32:
            std::memcpy(dst, src, count * 4);
            break;
        case DType::F16:
            for (size_t i = 0; i < count; ++i) {
                uint16_t h;
                std::memcpy(&h, src + 2 * i, 2);
                dst[i] = f16_to_f32(h);
            }
            break;
        case DType::BF16:
            for (size_t i = 0; i < count; ++i) {
                uint16_t b;
                std::memcpy(&b, src + 2 * i, 2);
                dst[i] = bf16_to_f32(b);
            }
            break;
        case DType::I8:
            for (size_t i = 0; i < count; ++i)
                dst[i] = (float)(int8_t)src[i];
            break;
    }
}

void narrow_from_f32(DType dst_dtype, const float* src, size_t count, uint8_t* dst) {
    switch (dst_dtype) {
        case DType::F32:
            std::memcpy(dst, src, count * 4);
            break;
        case DType::F16:
            for (size_t i = 0; i < count; ++i) {
                uint16_t h = f32_to_f16(src[i]);
                std::memcpy(dst + 2 * i, &h, 2);
            }
            break;
        case DType::BF16:
            for (size_t i = 0; i < count; ++i) {
                uint16_t b = f32_to_bf16(src[i]);
                std::memcpy(dst + 2 * i, &b, 2);
            }
            break;
        case DType::I8:
            for (size_t i = 0; i < count; ++i)
                dst[i] = (uint8_t)f32_to_i8(src[i]);
            break;
    }
}

} // namespace mergeforge
