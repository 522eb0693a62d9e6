// SPDX-License-Identifier: Apache-2.0
//
// mergeforge: merge tensor checkpoints, embed/extract quantization-gap
// watermarks, and score response logs. One binary, subcommand style; all
// state is explicit in flags and recipe files.

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mergeforge/container.hpp"
#include "mergeforge/error.hpp"
#include "mergeforge/merge.hpp"
#include "mergeforge/verify.hpp"
#include "mergeforge/watermark.hpp"

namespace mf = mergeforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

std::string shortest_float(float v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string shape_string(const std::vector<uint64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

int run_merge(const std::string& recipe_path, const std::string& out_path, int threads) {
    mf::MergeRecipe recipe = mf::MergeRecipe::from_file(recipe_path);
    mf::MergeStats stats = mf::execute_recipe(recipe, out_path, threads);
    std::printf("wrote %s (%zu tensors)\n", out_path.c_str(), stats.tensors_written);
    return kExitOk;
}

int run_inspect(const std::string& model_path) {
    mf::ModelHandle handle = mf::open_model(model_path);
    for (const auto& name : handle.tensor_names()) {
        const size_t s = handle.shard_of(name);
        const mf::TensorEntry& e = handle.entry(name);
        std::printf("%s  %s  %s  [%" PRIu64 ",%" PRIu64 ")", name.c_str(),
                    std::string(mf::dtype_name(e.dtype)).c_str(), shape_string(e.shape).c_str(),
                    e.begin, e.end);
        if (handle.sharded())
            std::printf("  shard=%s", handle.shards()[s].path.c_str());
        std::printf("\n");
    }
    for (const auto& shard : handle.shards())
        for (const auto& [key, value] : shard.manifest.metadata)
            std::printf("meta %s=%s\n", key.c_str(), value.c_str());
    return kExitOk;
}

// Streams every tensor of `in` to `out`, preserving dtypes and metadata,
// with `replacement` substituted under its name.
void rewrite_model(const mf::ModelHandle& in, const mf::Tensor& replacement,
                   const std::string& out_path) {
    std::map<std::string, std::string> metadata;
    for (const auto& shard : in.shards())
        metadata.insert(shard.manifest.metadata.begin(), shard.manifest.metadata.end());

    mf::ModelWriter writer(out_path, std::move(metadata));
    const auto names = in.tensor_names();
    for (const auto& name : names)
        writer.add_entry(name, in.entry(name).dtype, in.entry(name).shape);
    writer.finalize_header();
    for (const auto& name : names) {
        if (name == replacement.name) {
            writer.write_values(name, replacement.values.data(), replacement.values.size());
        } else {
            const mf::Tensor t = in.load_tensor(name);
            writer.write_values(name, t.values.data(), t.values.size());
        }
    }
    writer.finish();
}

int run_wm_embed(const std::string& model_path, const std::string& tensor_name, uint64_t key,
                 const std::string& payload_path, const std::string& out_path) {
    mf::ModelHandle handle = mf::open_model(model_path);
    if (handle.entry(tensor_name).dtype != mf::DType::F32)
        mf::raise(mf::Errc::dtype, "watermark tensor \"" + tensor_name +
                                       "\" must be stored as F32; the gap offsets do not "
                                       "survive lossy storage");
    const mf::Tensor t = handle.load_tensor(tensor_name);
    const mf::Payload payload = mf::load_payload_file(payload_path);
    const mf::QuantizedTensor quant = mf::quantize_symmetric_int8(t);
    const mf::Tensor marked = mf::embed_payload(t, {key}, payload);
    rewrite_model(handle, marked, out_path);
    std::printf("scale=%s\n", shortest_float(quant.scale).c_str());
    std::printf("wrote %s (%zu bits in %s)\n", out_path.c_str(), payload.size(),
                tensor_name.c_str());
    return kExitOk;
}

int run_wm_extract(const std::string& model_path, const std::string& tensor_name, uint64_t key,
                   size_t nbits, float scale) {
    mf::ModelHandle handle = mf::open_model(model_path);
    const mf::Tensor t = handle.load_tensor(tensor_name);
    const mf::Payload payload = mf::extract_payload(t, {key}, nbits, scale);
    const std::vector<uint8_t> bytes = mf::payload_to_bytes(payload);
    std::fwrite(bytes.data(), 1, bytes.size(), stdout);
    return kExitOk;
}

int run_wm_ber(const std::string& a_path, const std::string& b_path) {
    const mf::Payload a = mf::load_payload_file(a_path);
    const mf::Payload b = mf::load_payload_file(b_path);
    std::printf("ber=%.3f\n", mf::bit_error_rate(a, b));
    return kExitOk;
}

std::vector<std::string> load_substring_file(const std::string& path) {
    std::ifstream file(path);
    if (!file)
        mf::raise(mf::Errc::io, "cannot open substrings file \"" + path + "\"");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(file, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) out.push_back(mf::normalize_apostrophes(line));
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"mergeforge: checkpoint merging and IP-verification toolkit"};
    app.require_subcommand(1);

    // merge
    auto* merge = app.add_subcommand("merge", "Run a merge recipe");
    std::string recipe_path, merge_out;
    int threads = 1;
    merge->add_option("--recipe", recipe_path, "Recipe JSON file")->required();
    merge->add_option("--out", merge_out, "Output model path")->required();
    merge->add_option("--threads", threads, "Worker threads (never changes output bytes)")
        ->check(CLI::PositiveNumber);

    // inspect
    auto* inspect = app.add_subcommand("inspect", "List tensors and metadata of a model");
    std::string inspect_model;
    inspect->add_option("--model", inspect_model, "Model path (container or shard index)")
        ->required();

    // wm
    auto* wm = app.add_subcommand("wm", "Quantization-gap watermark operations");
    wm->require_subcommand(1);
    auto* wm_embed = wm->add_subcommand("embed", "Embed a payload into one tensor");
    std::string wm_model, wm_tensor, wm_payload, wm_out;
    uint64_t wm_key = 0;
    wm_embed->add_option("--model", wm_model)->required();
    wm_embed->add_option("--tensor", wm_tensor)->required();
    wm_embed->add_option("--key", wm_key)->required();
    wm_embed->add_option("--payload", wm_payload)->required();
    wm_embed->add_option("--out", wm_out)->required();

    auto* wm_extract = wm->add_subcommand("extract", "Extract payload bits to stdout");
    std::string wx_model, wx_tensor;
    uint64_t wx_key = 0;
    size_t wx_nbits = 0;
    float wx_scale = 0.0f;
    wm_extract->add_option("--model", wx_model)->required();
    wm_extract->add_option("--tensor", wx_tensor)->required();
    wm_extract->add_option("--key", wx_key)->required();
    wm_extract->add_option("--nbits", wx_nbits)->required()->check(CLI::PositiveNumber);
    wm_extract->add_option("--scale", wx_scale, "Embed-time reference scale")->required();

    auto* wm_ber = wm->add_subcommand("ber", "Bit error rate between two payload files");
    std::string ber_a, ber_b;
    wm_ber->add_option("--a", ber_a)->required();
    wm_ber->add_option("--b", ber_b)->required();

    // verify
    auto* verify = app.add_subcommand("verify", "Score a response log");
    verify->require_subcommand(1);
    auto* v_vsr = verify->add_subcommand("vsr", "Verification success rate");
    std::string vsr_log;
    std::string vsr_marker{mf::kWatermarkMarker};
    v_vsr->add_option("--responses", vsr_log)->required();
    v_vsr->add_option("--marker", vsr_marker, "Marker substring");

    auto* v_refusal = verify->add_subcommand("refusal", "Refusal rate");
    std::string refusal_log, refusal_file;
    v_refusal->add_option("--responses", refusal_log)->required();
    v_refusal->add_option("--substrings", refusal_file, "Candidate substrings, one per line");

    auto* v_math = verify->add_subcommand("math", "Math accuracy against gold answers");
    std::string math_log, math_gold;
    v_math->add_option("--responses", math_log)->required();
    v_math->add_option("--gold", math_gold, "id<TAB>number per line")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitUsage;
    }

    try {
        if (merge->parsed())
            return run_merge(recipe_path, merge_out, threads);
        if (inspect->parsed())
            return run_inspect(inspect_model);
        if (wm->parsed()) {
            if (wm_embed->parsed())
                return run_wm_embed(wm_model, wm_tensor, wm_key, wm_payload, wm_out);
            if (wm_extract->parsed())
                return run_wm_extract(wx_model, wx_tensor, wx_key, wx_nbits, wx_scale);
            if (wm_ber->parsed())
                return run_wm_ber(ber_a, ber_b);
        }
        if (verify->parsed()) {
            if (v_vsr->parsed()) {
                const auto records = mf::load_responses(vsr_log);
                std::printf("vsr=%.3f\n",
                            mf::vsr(records, mf::normalize_apostrophes(vsr_marker)));
                return kExitOk;
            }
            if (v_refusal->parsed()) {
                const auto records = mf::load_responses(refusal_log);
                const auto substrings = refusal_file.empty()
                                            ? mf::default_refusal_substrings()
                                            : load_substring_file(refusal_file);
                std::printf("refusal_rate=%.3f\n", mf::refusal_rate(records, substrings));
                return kExitOk;
            }
            if (v_math->parsed()) {
                const auto records = mf::load_responses(math_log);
                const auto gold = mf::load_gold_file(math_gold);
                std::printf("math_accuracy=%.3f\n", mf::math_accuracy(records, gold));
                return kExitOk;
            }
        }
    } catch (const mf::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.code() == mf::Errc::recipe ? kExitUsage : kExitData;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }

    std::fprintf(stderr, "no subcommand selected\n");
    return kExitUsage;
}
