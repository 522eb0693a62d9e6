// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mergeforge/rng.hpp"

using namespace mergeforge;

TEST_CASE("splitmix64 matches the reference sequence for seed 0") {
    // First outputs of the published SplitMix64 reference with state 0.
    rng::SplitMix64 sm(0);
    CHECK(sm.next() == 0xE220A8397B1DCDAFull);
    CHECK(sm.next() == 0x6E789E6AA1B965F4ull);
    CHECK(sm.next() == 0x06C45D188009454Full);
}

TEST_CASE("xoshiro256** matches known outputs for state {1,2,3,4}") {
    // Same vectors as the rand_xoshiro reference tests.
    rng::Xoshiro256ss gen(1, 2, 3, 4);
    CHECK(gen.next_u64() == 11520u);
    CHECK(gen.next_u64() == 0u);
    CHECK(gen.next_u64() == 1509978240u);
}

TEST_CASE("fnv1a64 matches published test vectors") {
    CHECK(rng::fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(rng::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(rng::fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("seeded stream is deterministic and double draws live in [0,1)") {
    rng::Xoshiro256ss a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.next_double();
        CHECK(u == b.next_double());
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("tensor stream seeds differ per expert and per name") {
    const uint64_t s00 = rng::tensor_stream_seed("layer.0.w", 7, 0);
    const uint64_t s01 = rng::tensor_stream_seed("layer.0.w", 7, 1);
    const uint64_t s10 = rng::tensor_stream_seed("layer.1.w", 7, 0);
    CHECK(s00 != s01);
    CHECK(s00 != s10);
    CHECK(s00 == rng::tensor_stream_seed("layer.0.w", 7, 0));
}
