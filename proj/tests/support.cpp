// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include <unistd.h>

#include "mergeforge/container.hpp"
#include "mergeforge/error.hpp"

namespace fs = std::filesystem;

namespace testsup {

TempDir::TempDir() {
    static std::atomic<uint64_t> counter{0};
    const auto base = fs::temp_directory_path() / "mergeforge_test";
    fs::create_directories(base);
    path_ = (base / (std::to_string(::getpid()) + "_" + std::to_string(counter++))).string();
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    file.write((const char*)bytes.data(), (std::streamsize)bytes.size());
    if (!file) throw std::runtime_error("cannot write " + path);
}

void write_file_text(const std::string& path, const std::string& text) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    file << text;
    if (!file) throw std::runtime_error("cannot write " + path);
}

mergeforge::Tensor random_tensor(std::mt19937_64& rng, const std::string& name,
                                 const std::vector<uint64_t>& shape, float lo, float hi) {
    mergeforge::Tensor t;
    t.name = name;
    t.shape = shape;
    std::uniform_real_distribution<float> dist(lo, hi);
    t.values.resize(t.numel());
    for (auto& v : t.values) v = dist(rng);
    return t;
}

mergeforge::Tensor grid_tensor(std::mt19937_64& rng, const std::string& name,
                               const std::vector<uint64_t>& shape) {
    mergeforge::Tensor t;
    t.name = name;
    t.shape = shape;
    t.values.resize(t.numel());
    for (auto& v : t.values)
        v = (float)((int64_t)(rng() % 4097) - 2048) / 1024.0f;
    return t;
}

std::string build_model(const std::string& path, const std::vector<mergeforge::Tensor>& tensors) {
    std::vector<mergeforge::NamedTensor> named;
    named.reserve(tensors.size());
    for (const auto& t : tensors)
        named.push_back({t.name, &t, mergeforge::DType::F32});
    mergeforge::write_model(named, {}, path);
    return path;
}

namespace oracle {

float f16_widen(uint16_t h) {
    const int sign = (h & 0x8000) ? -1 : 1;
    const int exp = (h >> 10) & 0x1F;
    const int man = h & 0x3FF;
    if (exp == 31) {
        if (man != 0) return std::numeric_limits<float>::quiet_NaN();
        return sign > 0 ? std::numeric_limits<float>::infinity()
                        : -std::numeric_limits<float>::infinity();
    }
    const double frac = exp == 0 ? man / 1024.0 : 1.0 + man / 1024.0;
    const int scale = exp == 0 ? -14 : exp - 15;
    return (float)(sign * std::ldexp(frac, scale));
}

float bf16_widen(uint16_t b) {
    const int sign = (b & 0x8000) ? -1 : 1;
    const int exp = (b >> 7) & 0xFF;
    const int man = b & 0x7F;
    if (exp == 0xFF) {
        if (man != 0) return std::numeric_limits<float>::quiet_NaN();
        return sign > 0 ? std::numeric_limits<float>::infinity()
                        : -std::numeric_limits<float>::infinity();
    }
    const double frac = exp == 0 ? man / 128.0 : 1.0 + man / 128.0;
    const int scale = exp == 0 ? -126 : exp - 127;
    return (float)(sign * std::ldexp(frac, scale));
}

std::vector<float> trim(const std::vector<float>& tv, double k) {
    const size_t n = tv.size();
    std::vector<float> out(n, 0.0f);
    if (n == 0) return out;
    const size_t keep = std::min<size_t>(n, (size_t)std::ceil(k * (double)n));

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return std::fabs(tv[a]) > std::fabs(tv[b]);
    });
    // stable_sort keeps equal magnitudes in ascending index order already
    for (size_t j = 0; j < keep; ++j)
        out[order[j]] = tv[order[j]];
    return out;
}

std::vector<int> elect(const std::vector<std::vector<float>>& tvs,
                       const std::vector<double>& alphas) {
    const size_t n = tvs.at(0).size();
    std::vector<int> signs(n, 0);
    for (size_t i = 0; i < n; ++i) {
        float acc = 0.0f;
        for (size_t t = 0; t < tvs.size(); ++t)
            acc += (float)alphas[t] * tvs[t][i];
        signs[i] = acc > 0.0f ? 1 : (acc < 0.0f ? -1 : 0);
    }
    return signs;
}

std::vector<float> disjoint_merge(const std::vector<std::vector<float>>& tvs,
                                  const std::vector<int>& signs) {
    const size_t n = tvs.at(0).size();
    std::vector<float> out(n, 0.0f);
    for (size_t i = 0; i < n; ++i) {
        if (signs[i] == 0) continue;
        std::vector<float> matching;
        for (const auto& tv : tvs) {
            const int s = tv[i] > 0.0f ? 1 : (tv[i] < 0.0f ? -1 : 0);
            if (s == signs[i]) matching.push_back(tv[i]);
        }
        if (matching.empty()) continue;
        float sum = 0.0f;
        for (float v : matching) sum += v;
        out[i] = sum / (float)matching.size();
    }
    return out;
}

std::vector<float> ties_merge(const std::vector<float>& base,
                              const std::vector<std::vector<float>>& experts,
                              const std::vector<double>& alphas, double k) {
    std::vector<std::vector<float>> trimmed;
    for (const auto& e : experts) {
        std::vector<float> tau(base.size());
        for (size_t i = 0; i < base.size(); ++i)
            tau[i] = e[i] - base[i];
        trimmed.push_back(trim(tau, k));
    }
    const std::vector<int> signs = elect(trimmed, alphas);
    const std::vector<float> tie = disjoint_merge(trimmed, signs);
    std::vector<float> out(base.size());
    for (size_t i = 0; i < base.size(); ++i)
        out[i] = base[i] + tie[i];
    return out;
}

std::vector<float> dare(const std::vector<float>& tv, double p, const std::vector<bool>& dropped) {
    std::vector<float> out(tv.size());
    const float rescale = 1.0f / (1.0f - (float)p);
    for (size_t i = 0; i < tv.size(); ++i)
        out[i] = dropped[i] ? 0.0f : tv[i] * rescale;
    return out;
}

} // namespace oracle

} // namespace testsup
