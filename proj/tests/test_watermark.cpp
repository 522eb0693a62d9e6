// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>

#include "mergeforge/error.hpp"
#include "mergeforge/watermark.hpp"
#include "support.hpp"

using namespace mergeforge;

static Tensor vec(std::vector<float> values) {
    Tensor t;
    t.name = "t";
    t.shape = {values.size()};
    t.values = std::move(values);
    return t;
}

static Tensor gaussian_tensor(std::mt19937_64& rng, size_t n, float sigma = 0.02f) {
    Tensor t;
    t.name = "w";
    t.shape = {n};
    t.values.resize(n);
    std::normal_distribution<float> dist(0.0f, sigma);
    for (auto& v : t.values) v = dist(rng);
    return t;
}

static Payload random_payload(std::mt19937_64& rng, size_t nbits) {
    Payload p;
    p.bits.resize(nbits);
    for (auto& b : p.bits) b = (uint8_t)(rng() % 2);
    return p;
}

static Errc error_code(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return Errc::io;
}

TEST_CASE("quantize_symmetric_int8") {
    SUBCASE("absmax maps to 127") {
        const QuantizedTensor q = quantize_symmetric_int8(vec({0.0f, 1.27f}));
        CHECK(q.scale == doctest::Approx(0.01).epsilon(1e-6));
        CHECK(q.q == std::vector<int8_t>{0, 127});
    }

    SUBCASE("fixed point: t = scale * q recovers q exactly") {
        std::mt19937_64 rng(3);
        const float scale = 0.004f;
        std::vector<int8_t> q(101);
        for (auto& v : q) v = (int8_t)((int)(rng() % 255) - 127);
        q[0] = 127; // full range so absmax/127 reproduces the scale
        Tensor t;
        t.name = "t";
        t.shape = {q.size()};
        for (int8_t v : q) t.values.push_back(scale * (float)v);
        CHECK(quantize_symmetric_int8(t).q == q);
    }

    SUBCASE("scalar-loop oracle on random tensors") {
        std::mt19937_64 rng(5);
        for (int round = 0; round < 25; ++round) {
            const Tensor t = gaussian_tensor(rng, 500);
            const QuantizedTensor got = quantize_symmetric_int8(t);
            float absmax = 0.0f;
            for (float v : t.values) absmax = std::max(absmax, std::fabs(v));
            const float scale = absmax / 127.0f;
            CHECK(got.scale == scale);
            for (size_t i = 0; i < t.values.size(); ++i) {
                const float x = t.values[i] / scale;
                // round half away from zero, clamped
                float r = std::floor(std::fabs(x) + 0.5f);
                r = std::copysign(std::min(r, 127.0f), x);
                CHECK((float)got.q[i] == r);
            }
        }
    }

    SUBCASE("all-zero tensor is a zero-scale error") {
        CHECK(error_code([] { quantize_symmetric_int8(vec({0, 0, 0})); }) == Errc::zero_scale);
    }
}

TEST_CASE("embed arithmetic: bin 5 plus delta 0.25 at scale 0.01") {
    // index 1 saturates (anchors the scale), index 0 carries the bit
    const Tensor t = vec({0.05f, 1.27f});
    const QuantizedTensor before = quantize_symmetric_int8(t);
    REQUIRE(before.q == std::vector<int8_t>{5, 127});

    Payload one;
    one.bits = {1};
    const Tensor marked = embed_payload(t, {42, 0.25}, one);
    CHECK(marked.values[0] == doctest::Approx(0.0525).epsilon(1e-6));
    CHECK(marked.values[1] == t.values[1]); // saturated position untouched

    const QuantizedTensor after = quantize_symmetric_int8(marked);
    CHECK(after.q == before.q);
    CHECK(after.scale == before.scale);
}

TEST_CASE("embedding preserves the INT8 image and round-trips exactly") {
    std::mt19937_64 rng(11);
    for (int round = 0; round < 20; ++round) {
        const Tensor t = gaussian_tensor(rng, 10000);
        const Payload payload = random_payload(rng, 1024);
        const WatermarkKey key{rng()};

        const QuantizedTensor before = quantize_symmetric_int8(t);
        const Tensor marked = embed_payload(t, key, payload);
        const QuantizedTensor after = quantize_symmetric_int8(marked);
        CHECK(before.q == after.q);
        CHECK(before.scale == after.scale);

        const Payload back = extract_payload(marked, key, payload.size(), before.scale);
        CHECK(back == payload);
        CHECK(bit_error_rate(back, payload) == 0.0);
    }
}

TEST_CASE("all positions offset by +delta extract as all ones") {
    std::mt19937_64 rng(13);
    const Tensor t = gaussian_tensor(rng, 512);
    const QuantizedTensor q = quantize_symmetric_int8(t);
    Tensor shifted = t;
    for (size_t i = 0; i < t.values.size(); ++i)
        shifted.values[i] = ((float)q.q[i] + 0.25f) * q.scale;
    const Payload got = extract_payload(shifted, {999}, 64, q.scale);
    for (uint8_t b : got.bits)
        CHECK(b == 1);
}

TEST_CASE("extraction with the wrong key is ~50% errors") {
    std::mt19937_64 rng(17);
    const Tensor t = gaussian_tensor(rng, 10000);
    const Payload payload = random_payload(rng, 1024);
    const QuantizedTensor q = quantize_symmetric_int8(t);
    const Tensor marked = embed_payload(t, {1111}, payload);
    const Payload wrong = extract_payload(marked, {2222}, payload.size(), q.scale);
    const double ber = bit_error_rate(wrong, payload);
    CHECK(ber > 0.35);
    CHECK(ber < 0.65);
}

TEST_CASE("merging with a random partner at alpha 0.5 destroys the payload") {
    std::mt19937_64 rng(19);
    double total = 0.0;
    const int trials = 20;
    for (int i = 0; i < trials; ++i) {
        const Tensor t = gaussian_tensor(rng, 10000);
        const Payload payload = random_payload(rng, 1024);
        const QuantizedTensor q = quantize_symmetric_int8(t);
        const Tensor marked = embed_payload(t, {(uint64_t)i + 7}, payload);
        const Tensor partner = gaussian_tensor(rng, 10000);
        Tensor merged = marked;
        for (size_t j = 0; j < merged.values.size(); ++j)
            merged.values[j] = 0.5f * marked.values[j] + 0.5f * partner.values[j];
        const Payload got = extract_payload(merged, {(uint64_t)i + 7}, payload.size(), q.scale);
        total += bit_error_rate(got, payload);
    }
    CHECK(total / trials > 0.4);
    CHECK(total / trials < 0.6);
}

TEST_CASE("capacity errors") {
    const Tensor tiny = vec({0.5f, 1.0f, -0.25f, 0.75f});
    Payload big;
    big.bits.assign(10, 1);
    CHECK(error_code([&] { embed_payload(tiny, {5}, big); }) == Errc::capacity);
    CHECK(error_code([&] { extract_payload(tiny, {5}, 10, 1.0f / 127.0f); }) == Errc::capacity);
}

TEST_CASE("bit_error_rate") {
    Payload a, b;
    a.bits = {1, 0, 1, 1, 0, 0, 1, 0};
    b = a;
    CHECK(bit_error_rate(a, b) == 0.0);
    for (auto& bit : b.bits) bit ^= 1;
    CHECK(bit_error_rate(a, b) == 1.0);
    b = a;
    b.bits[3] ^= 1;
    CHECK(bit_error_rate(a, b) == 0.125);

    Payload c;
    c.bits = {1};
    CHECK(error_code([&] { bit_error_rate(a, c); }) == Errc::length_mismatch);
}

TEST_CASE("payload bytes round-trip MSB-first") {
    const std::vector<uint8_t> bytes = {0xA5, 0x01};
    const Payload p = payload_from_bytes(bytes, 16);
    CHECK(p.bits == std::vector<uint8_t>{1, 0, 1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1});
    CHECK(payload_to_bytes(p) == bytes);

    std::mt19937_64 rng(23);
    for (int round = 0; round < 50; ++round) {
        const Payload q = random_payload(rng, 8 * (1 + rng() % 64));
        CHECK(payload_from_bytes(payload_to_bytes(q), q.size()) == q);
    }
}

TEST_CASE("position selection is a pure function of key and size") {
    std::mt19937_64 rng(29);
    const Tensor t = gaussian_tensor(rng, 2048);
    const Payload payload = random_payload(rng, 256);
    const Tensor m1 = embed_payload(t, {77}, payload);
    const Tensor m2 = embed_payload(t, {77}, payload);
    CHECK(m1.values == m2.values);
    const Tensor m3 = embed_payload(t, {78}, payload);
    CHECK(m1.values != m3.values);
}
