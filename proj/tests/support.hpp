// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent reference implementations ("oracles") for
// the test suites. Everything here is deliberately written against the plain
// textbook description of each operation, not against the library code.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mergeforge/tensor.hpp"

namespace testsup {

// Self-deleting temp directory under the system temp root.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const { return path_ + "/" + name; }

private:
    std::string path_;
};

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
void write_file_text(const std::string& path, const std::string& text);

// Test-side randomness is std::mt19937_64, independent of the library RNG.
mergeforge::Tensor random_tensor(std::mt19937_64& rng, const std::string& name,
                                 const std::vector<uint64_t>& shape, float lo = -2.0f,
                                 float hi = 2.0f);

// Values on the 2^-10 grid in [-2, 2]: sums and differences of a few such
// values are exact in f32, which makes algebraic-identity tests bit-exact.
mergeforge::Tensor grid_tensor(std::mt19937_64& rng, const std::string& name,
                               const std::vector<uint64_t>& shape);

// Writes tensors as an F32 single-file model and returns the path.
std::string build_model(const std::string& path, const std::vector<mergeforge::Tensor>& tensors);

namespace oracle {

// Reference widening: arithmetic reconstruction via ldexp, not bit surgery.
float f16_widen(uint16_t h);
float bf16_widen(uint16_t b);

// Reference TIES steps: full stable sort, scalar loops, materialized
// intermediates.
std::vector<float> trim(const std::vector<float>& tv, double k);
std::vector<int> elect(const std::vector<std::vector<float>>& tvs,
                       const std::vector<double>& alphas);
std::vector<float> disjoint_merge(const std::vector<std::vector<float>>& tvs,
                                  const std::vector<int>& signs);

// Whole-pipeline reference: base + disjoint(elect(trim(expert - base, k))).
std::vector<float> ties_merge(const std::vector<float>& base,
                              const std::vector<std::vector<float>>& experts,
                              const std::vector<double>& alphas, double k);

// DARE given an externally supplied drop mask (true = dropped).
std::vector<float> dare(const std::vector<float>& tv, double p,
                        const std::vector<bool>& dropped);

} // namespace oracle

} // namespace testsup
