// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/merge.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"

#include "mergeforge/error.hpp"
#include "mergeforge/rng.hpp"

namespace mergeforge {

static void require_equal_shapes(std::span<const Tensor> tensors) {
    for (size_t i = 1; i < tensors.size(); ++i)
        require_same_shape(tensors[0], tensors[i]);
}

Tensor task_vector(const Tensor& expert, const Tensor& base) {
    require_same_shape(expert, base);
    Tensor out;
    out.name = expert.name;
    out.shape = expert.shape;
    out.values.resize(expert.values.size());
    for (size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = expert.values[i] - base.values[i];
    return out;
}

Tensor soups_combine(std::span<const Tensor> tensors, std::span<const double> alphas) {
    if (tensors.empty())
        raise(Errc::empty_input, "soups_combine needs at least one tensor");
    if (tensors.size() != alphas.size())
        raise(Errc::shape, "soups_combine: tensor and alpha counts differ");
    require_equal_shapes(tensors);

    Tensor out;
    out.name = tensors[0].name;
    out.shape = tensors[0].shape;
    out.values.assign(tensors[0].values.size(), 0.0f);
    for (size_t t = 0; t < tensors.size(); ++t) {
        const float a = (float)alphas[t];
        const auto& v = tensors[t].values;
        for (size_t i = 0; i < v.size(); ++i)
            out.values[i] += a * v[i];
    }
    return out;
}

Tensor task_arithmetic_combine(const Tensor& base, std::span<const Tensor> task_vectors,
                               std::span<const double> alphas) {
    if (task_vectors.size() != alphas.size())
        raise(Errc::shape, "task_arithmetic_combine: tensor and alpha counts differ");
    Tensor out;
    out.name = base.name;
    out.shape = base.shape;
    out.values = base.values;
    for (size_t t = 0; t < task_vectors.size(); ++t) {
        require_same_shape(base, task_vectors[t]);
        const float a = (float)alphas[t];
        const auto& v = task_vectors[t].values;
        for (size_t i = 0; i < v.size(); ++i)
            out.values[i] += a * v[i];
    }
    return out;
}

Tensor ties_trim(const Tensor& tv, double k) {
    if (!(k > 0.0 && k <= 1.0))
        raise(Errc::recipe, "ties_k must be in (0,1]");
    const size_t n = tv.values.size();
    Tensor out;
    out.name = tv.name;
    out.shape = tv.shape;
    if (n == 0) return out;

    const size_t keep = std::min<size_t>(n, (size_t)std::ceil(k * (double)n));
    out.values.assign(n, 0.0f);
    if (keep == n) {
        out.values = tv.values;
        return out;
    }

    // Largest magnitude first; threshold ties keep the smallest flat index.
    std::vector<uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0u);
    std::nth_element(idx.begin(), idx.begin() + (std::ptrdiff_t)keep, idx.end(),
                     [&](uint32_t a, uint32_t b) {
                         const float ma = std::fabs(tv.values[a]);
                         const float mb = std::fabs(tv.values[b]);
                         if (ma != mb) return ma > mb;
                         return a < b;
                     });
    for (size_t j = 0; j < keep; ++j)
        out.values[idx[j]] = tv.values[idx[j]];
    return out;
}

static int8_t sign_of(float v) {
    if (v > 0.0f) return 1;
    if (v < 0.0f) return -1;
    return 0;
}

SignTensor ties_elect(std::span<const Tensor> trimmed, std::span<const double> alphas) {
    if (trimmed.empty())
        raise(Errc::empty_input, "ties_elect needs at least one tensor");
    if (trimmed.size() != alphas.size())
        raise(Errc::shape, "ties_elect: tensor and alpha counts differ");
    require_equal_shapes(trimmed);

    SignTensor out;
    out.name = trimmed[0].name;
    out.shape = trimmed[0].shape;
    const size_t n = trimmed[0].values.size();
    out.signs.resize(n);
    for (size_t i = 0; i < n; ++i) {
        float acc = 0.0f;
        for (size_t t = 0; t < trimmed.size(); ++t)
            acc += (float)alphas[t] * trimmed[t].values[i];
        out.signs[i] = sign_of(acc);
    }
    return out;
}

Tensor ties_disjoint_merge(std::span<const Tensor> trimmed, const SignTensor& signs) {
    if (trimmed.empty())
        raise(Errc::empty_input, "ties_disjoint_merge needs at least one tensor");
    require_equal_shapes(trimmed);
    if (trimmed[0].shape != signs.shape)
        raise(Errc::shape, "ties_disjoint_merge: sign tensor shape mismatch");

    Tensor out;
    out.name = trimmed[0].name;
    out.shape = trimmed[0].shape;
    const size_t n = trimmed[0].values.size();
    out.values.assign(n, 0.0f);
    for (size_t i = 0; i < n; ++i) {
        const int8_t s = signs.signs[i];
        if (s == 0) continue;
        float sum = 0.0f;
        uint32_t count = 0;
        for (const auto& t : trimmed) {
            const float v = t.values[i];
            if (sign_of(v) == s) {
                sum += v;
                ++count;
            }
        }
        if (count > 0)
            out.values[i] = sum / (float)count;
    }
    return out;
}

Tensor ties_disjoint_merge_weighted(std::span<const Tensor> trimmed,
                                    std::span<const double> alphas, const SignTensor& signs) {
    if (trimmed.empty())
        raise(Errc::empty_input, "ties_disjoint_merge_weighted needs at least one tensor");
    if (trimmed.size() != alphas.size())
        raise(Errc::shape, "ties_disjoint_merge_weighted: tensor and alpha counts differ");
    require_equal_shapes(trimmed);
    if (trimmed[0].shape != signs.shape)
        raise(Errc::shape, "ties_disjoint_merge_weighted: sign tensor shape mismatch");

    Tensor out;
    out.name = trimmed[0].name;
    out.shape = trimmed[0].shape;
    const size_t n = trimmed[0].values.size();
    out.values.assign(n, 0.0f);
    for (size_t i = 0; i < n; ++i) {
        const int8_t s = signs.signs[i];
        if (s == 0) continue;
        float sum = 0.0f;
        float wsum = 0.0f;
        for (size_t t = 0; t < trimmed.size(); ++t) {
            const float v = trimmed[t].values[i];
            if (sign_of(v) == s) {
                sum += (float)alphas[t] * v;
                wsum += (float)alphas[t];
            }
        }
        if (wsum != 0.0f)
            out.values[i] = sum / wsum;
    }
    return out;
}

Tensor dare_sparsify_with(const Tensor& tv, double p,
                          const std::function<double()>& next_uniform) {
    if (!(p >= 0.0 && p < 1.0))
        raise(Errc::recipe, "dare_p must be in [0,1)");
    Tensor out;
    out.name = tv.name;
    out.shape = tv.shape;
    out.values.resize(tv.values.size());
    const float rescale = 1.0f / (1.0f - (float)p);
    for (size_t i = 0; i < tv.values.size(); ++i) {
        const double u = next_uniform();
        out.values[i] = u < p ? 0.0f : tv.values[i] * rescale;
    }
    return out;
}

Tensor dare_sparsify(const Tensor& tv, double p, uint64_t tensor_seed) {
    rng::Xoshiro256ss gen(tensor_seed);
    return dare_sparsify_with(tv, p, [&gen] { return gen.next_double(); });
}

std::string_view merge_method_name(MergeMethod m) {
    switch (m) {
        case MergeMethod::soups: return "soups";
        case MergeMethod::task_arithmetic: return "task_arithmetic";
        case MergeMethod::ties: return "ties";
        case MergeMethod::dare_task: return "dare_task";
        case MergeMethod::dare_ties: return "dare_ties";
    }
    return "?";
}

static MergeMethod merge_method_from_name(const std::string& s) {
    if (s == "soups") return MergeMethod::soups;
    if (s == "task_arithmetic") return MergeMethod::task_arithmetic;
    if (s == "ties") return MergeMethod::ties;
    if (s == "dare_task") return MergeMethod::dare_task;
    if (s == "dare_ties") return MergeMethod::dare_ties;
    raise(Errc::recipe, "method must be one of soups, task_arithmetic, ties, dare_task, "
                        "dare_ties (got \"" + s + "\")");
}

void MergeRecipe::validate() const {
    if (experts.empty())
        raise(Errc::recipe, "experts must be non-empty");
    for (const auto& e : experts) {
        if (e.path.empty())
            raise(Errc::recipe, "experts: path must be non-empty");
        if (!std::isfinite(e.alpha))
            raise(Errc::recipe, "experts: alpha must be finite");
    }
    if (!(dare_p >= 0.0 && dare_p < 1.0))
        raise(Errc::recipe, "dare_p must be in [0,1)");
    if (!(ties_k > 0.0 && ties_k <= 1.0))
        raise(Errc::recipe, "ties_k must be in (0,1]");
    if (method != MergeMethod::soups && base_model.empty())
        raise(Errc::recipe, "base_model is required for method \"" +
                                std::string(merge_method_name(method)) + "\"");
    if (output_dtype == DType::I8)
        raise(Errc::recipe, "output_dtype must be F32, F16 or BF16");
}

MergeRecipe MergeRecipe::from_json(const std::string& text) {
    nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        raise(Errc::recipe, "recipe is not a valid JSON object");

    MergeRecipe r;
    bool have_method = false;
    bool have_experts = false;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string& key = it.key();
        const auto& v = it.value();
        if (key == "method") {
            if (!v.is_string()) raise(Errc::recipe, "method must be a string");
            r.method = merge_method_from_name(v.get<std::string>());
            have_method = true;
        } else if (key == "base_model") {
            if (!v.is_string()) raise(Errc::recipe, "base_model must be a string");
            r.base_model = v.get<std::string>();
        } else if (key == "experts") {
            if (!v.is_array()) raise(Errc::recipe, "experts must be an array");
            for (const auto& e : v) {
                if (!e.is_object() || !e.contains("path") || !e.contains("alpha") ||
                    e.size() != 2 || !e["path"].is_string() || !e["alpha"].is_number())
                    raise(Errc::recipe, "experts entries must be {\"path\": ..., \"alpha\": ...}");
                r.experts.push_back({e["path"].get<std::string>(), e["alpha"].get<double>()});
            }
            have_experts = true;
        } else if (key == "ties_k") {
            if (!v.is_number()) raise(Errc::recipe, "ties_k must be a number");
            r.ties_k = v.get<double>();
        } else if (key == "dare_p") {
            if (!v.is_number()) raise(Errc::recipe, "dare_p must be a number");
            r.dare_p = v.get<double>();
        } else if (key == "seed") {
            if (!v.is_number_unsigned())
                raise(Errc::recipe, "seed must be an unsigned 64-bit integer");
            r.seed = v.get<uint64_t>();
        } else if (key == "output_dtype") {
            if (!v.is_string()) raise(Errc::recipe, "output_dtype must be a string");
            const std::string s = v.get<std::string>();
            if (s != "F32" && s != "F16" && s != "BF16")
                raise(Errc::recipe, "output_dtype must be F32, F16 or BF16");
            r.output_dtype = dtype_from_name(s);
        } else if (key == "allow_missing") {
            if (!v.is_boolean()) raise(Errc::recipe, "allow_missing must be a boolean");
            r.allow_missing = v.get<bool>();
        } else if (key == "weighted_disjoint_mean") {
            if (!v.is_boolean())
                raise(Errc::recipe, "weighted_disjoint_mean must be a boolean");
            r.weighted_disjoint_mean = v.get<bool>();
        } else {
            raise(Errc::recipe, "unknown recipe field \"" + key + "\"");
        }
    }
    if (!have_method) raise(Errc::recipe, "method is required");
    if (!have_experts) raise(Errc::recipe, "experts is required");
    r.validate();
    return r;
}

MergeRecipe MergeRecipe::from_file(const std::string& path) {
    std::ifstream file(path);
    if (!file)
        raise(Errc::io, "cannot open recipe \"" + path + "\"");
    std::string text((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
    return from_json(text);
}

std::vector<float> merge_tensor_values(const MergeRecipe& recipe, const std::string& name,
                                       const Tensor* base, std::span<const Tensor> experts,
                                       std::span<const uint8_t> expert_present) {
    const size_t nexp = recipe.experts.size();
    std::vector<double> alphas(nexp);
    for (size_t t = 0; t < nexp; ++t) alphas[t] = recipe.experts[t].alpha;

    if (recipe.method == MergeMethod::soups)
        return soups_combine(experts, alphas).values;

    const size_t n = base->values.size();
    std::vector<Tensor> taus(nexp);
    for (size_t t = 0; t < nexp; ++t) {
        taus[t].name = name;
        taus[t].shape = base->shape;
        if (expert_present[t]) {
            taus[t] = task_vector(experts[t], *base);
        } else {
            taus[t].values.assign(n, 0.0f); // absent expert: zero task vector
        }
    }

    switch (recipe.method) {
        case MergeMethod::task_arithmetic:
            return task_arithmetic_combine(*base, taus, alphas).values;

        case MergeMethod::dare_task: {
            for (size_t t = 0; t < nexp; ++t)
                if (expert_present[t])
                    taus[t] = dare_sparsify(taus[t], recipe.dare_p,
                                            rng::tensor_stream_seed(name, recipe.seed, t));
            return task_arithmetic_combine(*base, taus, alphas).values;
        }

        case MergeMethod::ties:
        case MergeMethod::dare_ties: {
            if (recipe.method == MergeMethod::ties) {
                for (size_t t = 0; t < nexp; ++t)
                    taus[t] = ties_trim(taus[t], recipe.ties_k);
            } else {
                // DARE already sparsifies, so the trim step is skipped.
                for (size_t t = 0; t < nexp; ++t)
                    if (expert_present[t])
                        taus[t] = dare_sparsify(taus[t], recipe.dare_p,
                                                rng::tensor_stream_seed(name, recipe.seed, t));
            }
            const SignTensor elected = ties_elect(taus, alphas);
            const Tensor tie = recipe.weighted_disjoint_mean
                                   ? ties_disjoint_merge_weighted(taus, alphas, elected)
                                   : ties_disjoint_merge(taus, elected);
            std::vector<float> out = base->values;
            for (size_t i = 0; i < n; ++i)
                out[i] += tie.values[i];
            return out;
        }

        case MergeMethod::soups:
            break; // handled above
    }
    raise(Errc::recipe, "unhandled merge method");
}

static std::string fmt_number(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

static std::map<std::string, std::string> provenance_metadata(const MergeRecipe& recipe) {
    std::map<std::string, std::string> meta;
    meta["mergeforge.method"] = std::string(merge_method_name(recipe.method));
    std::string alphas;
    for (size_t t = 0; t < recipe.experts.size(); ++t) {
        if (t) alphas += ",";
        alphas += fmt_number(recipe.experts[t].alpha);
    }
    meta["mergeforge.alphas"] = alphas;
    meta["mergeforge.dare_p"] = fmt_number(recipe.dare_p);
    meta["mergeforge.ties_k"] = fmt_number(recipe.ties_k);
    meta["mergeforge.seed"] = std::to_string(recipe.seed);
    return meta;
}

namespace {

// Inputs for one output tensor; loading happens inside the worker.
struct MergeJob {
    const MergeRecipe* recipe;
    const ModelHandle* base;
    const std::vector<ModelHandle>* experts;
    std::string name;
};

std::vector<float> run_job(const MergeJob& job) {
    const MergeRecipe& r = *job.recipe;
    const size_t nexp = r.experts.size();

    Tensor base_tensor;
    if (r.method != MergeMethod::soups)
        base_tensor = job.base->load_tensor(job.name);

    std::vector<Tensor> experts(nexp);
    std::vector<uint8_t> present(nexp, 0);
    for (size_t t = 0; t < nexp; ++t) {
        const ModelHandle& h = (*job.experts)[t];
        if (h.contains(job.name)) {
            experts[t] = h.load_tensor(job.name);
            if (r.method != MergeMethod::soups)
                require_same_shape(experts[t], base_tensor);
            present[t] = 1;
        }
    }
    if (r.method == MergeMethod::soups) {
        for (size_t t = 1; t < nexp; ++t)
            require_same_shape(experts[0], experts[t]);
    }

    return merge_tensor_values(r, job.name,
                               r.method == MergeMethod::soups ? nullptr : &base_tensor,
                               experts, present);
}

} // namespace

MergeStats execute_recipe(const MergeRecipe& recipe, const std::string& out_path, int threads) {
    recipe.validate();

    ModelHandle base;
    std::vector<ModelHandle> experts;
    experts.reserve(recipe.experts.size());
    for (const auto& e : recipe.experts)
        experts.push_back(open_model(e.path));
    if (recipe.method != MergeMethod::soups)
        base = open_model(recipe.base_model);

    // Output tensor set and coverage checks.
    std::vector<std::string> names;
    if (recipe.method == MergeMethod::soups) {
        names = experts[0].tensor_names();
        for (size_t t = 1; t < experts.size(); ++t)
            if (experts[t].tensor_names() != names)
                raise(Errc::coverage, "expert \"" + recipe.experts[t].path +
                                          "\" does not share the tensor names of \"" +
                                          recipe.experts[0].path + "\"");
    } else {
        names = base.tensor_names();
        for (size_t t = 0; t < experts.size(); ++t) {
            if (!recipe.allow_missing) {
                for (const auto& name : names)
                    if (!experts[t].contains(name))
                        raise(Errc::coverage, "expert \"" + recipe.experts[t].path +
                                                  "\" is missing tensor \"" + name + "\"");
                for (const auto& name : experts[t].tensor_names())
                    if (!base.contains(name))
                        raise(Errc::coverage, "expert \"" + recipe.experts[t].path +
                                                  "\" has tensor \"" + name +
                                                  "\" absent from the base model");
            }
        }
    }

    const ModelHandle& shape_source = recipe.method == MergeMethod::soups ? experts[0] : base;
    ModelWriter writer(out_path, provenance_metadata(recipe));
    for (const auto& name : names)
        writer.add_entry(name, recipe.output_dtype, shape_source.entry(name).shape);
    writer.finalize_header();

    std::vector<MergeJob> jobs;
    jobs.reserve(names.size());
    for (const auto& name : names)
        jobs.push_back({&recipe, &base, &experts, name});

    if (threads <= 1 || jobs.size() <= 1) {
        for (const auto& job : jobs) {
            const std::vector<float> values = run_job(job);
            writer.write_values(job.name, values.data(), values.size());
        }
    } else {
        // Workers compute tensors out of order; the writer consumes strictly
        // in name order, so output bytes never depend on the worker count.
        const size_t max_ready = (size_t)threads * 2;
        std::mutex mu;
        std::condition_variable cv_ready, cv_space;
        std::map<size_t, std::vector<float>> ready;
        std::atomic<size_t> next_job{0};
        size_t write_index = 0;
        std::exception_ptr failure;
        bool aborted = false;

        auto worker = [&] {
            for (;;) {
                const size_t i = next_job.fetch_add(1);
                if (i >= jobs.size()) return;
                try {
                    std::vector<float> values = run_job(jobs[i]);
                    std::unique_lock lock(mu);
                    cv_space.wait(lock, [&] {
                        return aborted || ready.size() < max_ready || i == write_index;
                    });
                    if (aborted) return;
                    ready.emplace(i, std::move(values));
                    cv_ready.notify_all();
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                    aborted = true;
                    cv_ready.notify_all();
                    cv_space.notify_all();
                    return;
                }
            }
        };

        std::vector<std::thread> pool;
        const size_t nworkers = std::min<size_t>((size_t)threads, jobs.size());
        pool.reserve(nworkers);
        for (size_t w = 0; w < nworkers; ++w) pool.emplace_back(worker);

        try {
            for (; write_index < jobs.size(); ) {
                std::vector<float> values;
                {
                    std::unique_lock lock(mu);
                    cv_ready.wait(lock, [&] { return aborted || ready.count(write_index); });
                    if (aborted) break;
                    values = std::move(ready.at(write_index));
                    ready.erase(write_index);
                }
                writer.write_values(jobs[write_index].name, values.data(), values.size());
                {
                    std::lock_guard lock(mu);
                    ++write_index;
                    cv_space.notify_all();
                }
            }
        } catch (...) {
            std::lock_guard lock(mu);
            if (!failure) failure = std::current_exception();
            aborted = true;
            cv_ready.notify_all();
            cv_space.notify_all();
        }
        for (auto& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    writer.finish();
    return {names.size()};
}

} // namespace mergeforge
