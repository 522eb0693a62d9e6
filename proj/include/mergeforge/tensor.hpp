// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mergeforge/error.hpp"

namespace mergeforge {

// A named, shaped, row-major array of 32-bit floats. The single numeric
// domain for all merge and watermark arithmetic.
struct Tensor {
    std::string name;
    std::vector<uint64_t> shape;
    std::vector<float> values;

    uint64_t numel() const {
        uint64_t n = 1;
        for (uint64_t d : shape) n *= d;
        return n;
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        raise(Errc::shape, "shape mismatch between \"" + a.name + "\" and \"" + b.name + "\"");
}

} // namespace mergeforge
