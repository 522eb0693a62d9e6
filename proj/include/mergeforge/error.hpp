// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mergeforge {

// One code per failure class so callers (and tests) can dispatch without
// string-matching messages.
enum class Errc {
    io,
    parse,
    oversized_header,
    layout,
    dtype,
    duplicate,
    ambiguity,
    not_found,
    shape,
    recipe,
    coverage,
    capacity,
    zero_scale,
    empty_input,
    length_mismatch,
    missing_gold,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& message) {
    throw Error(code, message);
}

} // namespace mergeforge
