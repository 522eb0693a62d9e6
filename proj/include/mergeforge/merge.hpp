// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mergeforge/container.hpp"
#include "mergeforge/dtype.hpp"
#include "mergeforge/tensor.hpp"

namespace mergeforge {

// Elementwise sign with sign(0) = 0; entries are -1, 0 or +1.
struct SignTensor {
    std::string name;
    std::vector<uint64_t> shape;
    std::vector<int8_t> signs;
};

// tau = expert - base, the capability delta of one expert.
Tensor task_vector(const Tensor& expert, const Tensor& base);

// Linear combination sum_t alpha_t * M_t, accumulated in f32 in list order.
Tensor soups_combine(std::span<const Tensor> tensors, std::span<const double> alphas);

// base + sum_t alpha_t * tau_t.
Tensor task_arithmetic_combine(const Tensor& base, std::span<const Tensor> task_vectors,
                               std::span<const double> alphas);

// Keeps the ceil(k * numel) largest-magnitude entries, zeroes the rest.
// Ties at the threshold magnitude keep the smallest flat index first.
Tensor ties_trim(const Tensor& tv, double k);

// Elected sign vector: sign(sum_t alpha_t * tau_t) per element.
SignTensor ties_elect(std::span<const Tensor> trimmed, std::span<const double> alphas);

// Mean of the values whose own sign matches the elected sign; 0 when the
// elected sign is 0 or nothing matches. Zero values never match.
Tensor ties_disjoint_merge(std::span<const Tensor> trimmed, const SignTensor& signs);

// Alpha-weighted variant of the mean, selected by a recipe flag.
Tensor ties_disjoint_merge_weighted(std::span<const Tensor> trimmed,
                                    std::span<const double> alphas, const SignTensor& signs);

// Drop entries with probability p, rescale survivors by 1/(1-p). One uniform
// draw per flat index, in index order, from the keyed generator. p = 0 is the
// identity.
Tensor dare_sparsify(const Tensor& tv, double p, uint64_t tensor_seed);

// Seam for the deterministic-draw tests: uniforms come from the callable.
Tensor dare_sparsify_with(const Tensor& tv, double p,
                          const std::function<double()>& next_uniform);

enum class MergeMethod { soups, task_arithmetic, ties, dare_task, dare_ties };

std::string_view merge_method_name(MergeMethod m);

struct ExpertRef {
    std::string path;
    double alpha = 1.0;
};

// One declarative merge job. Parsed from a strict JSON document whose field
// names match the members; unknown fields are rejected.
struct MergeRecipe {
    MergeMethod method = MergeMethod::soups;
    std::string base_model; // required for every method except soups
    std::vector<ExpertRef> experts;
    double ties_k = 0.40;
    double dare_p = 0.40;
    uint64_t seed = 0;
    DType output_dtype = DType::F32;
    bool allow_missing = false;
    bool weighted_disjoint_mean = false;

    // Throws Errc::recipe with a field-level message on any violation.
    void validate() const;

    static MergeRecipe from_json(const std::string& text);
    static MergeRecipe from_file(const std::string& path);
};

// Per-tensor merge kernel: everything execute_recipe does between load and
// write. `expert_present[t]` marks experts that actually had the tensor;
// absent ones contribute a zero task vector. Exposed for the oracle tests.
std::vector<float> merge_tensor_values(const MergeRecipe& recipe, const std::string& name,
                                       const Tensor* base, std::span<const Tensor> experts,
                                       std::span<const uint8_t> expert_present);

struct MergeStats {
    size_t tensors_written = 0;
};

// Runs the recipe streaming tensor-by-tensor and writes the merged model to
// `out_path` with provenance metadata. Output bytes are identical for a fixed
// recipe regardless of `threads`.
MergeStats execute_recipe(const MergeRecipe& recipe, const std::string& out_path,
                          int threads = 1);

} // namespace mergeforge
