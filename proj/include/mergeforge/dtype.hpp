// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace mergeforge {

// Storage dtypes of the container format. All arithmetic happens in 32-bit
// float; lossy dtypes are widened on read and narrowed (round-to-nearest-even)
// on write.
enum class DType : uint8_t { F32, F16, BF16, I8 };

size_t dtype_size(DType d);
std::string_view dtype_name(DType d);

// Throws Errc::dtype for anything outside {F32, F16, BF16, I8}.
DType dtype_from_name(std::string_view name);

// Scalar conversions. The fp16/bf16 codecs are bit-level: widening is exact,
// narrowing rounds to nearest-even with overflow to infinity.
float f16_to_f32(uint16_t h);
uint16_t f32_to_f16(float f);
float bf16_to_f32(uint16_t b);
uint16_t f32_to_bf16(float f);

// I8 narrowing rounds to nearest-even and clamps to [-128, 127]; NaN maps to 0.
int8_t f32_to_i8(float f);

// Bulk widen `count` elements of raw little-endian `src` bytes into `dst`.
void widen_to_f32(DType src_dtype, const uint8_t* src, size_t count, float* dst);

// Bulk narrow `count` floats into raw bytes (dst must hold count*dtype_size).
void narrow_from_f32(DType dst_dtype, const float* src, size_t count, uint8_t* dst);

} // namespace mergeforge
