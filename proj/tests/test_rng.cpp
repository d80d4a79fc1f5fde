#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mochi/rng.hpp"

using namespace mochi;

TEST_CASE("philox 4x32-10 matches the published test vectors", "[rng]") {
    Counter4 zero = philox4x32({0u, 0u, 0u, 0u}, {0u, 0u});
    CHECK(zero == Counter4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});

    Counter4 ones = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                               {0xffffffffu, 0xffffffffu});
    CHECK(ones == Counter4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});

    // counter = digits of pi, key = more digits of pi
    Counter4 pi_block = philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                                   {0xa4093822u, 0x299f31d0u});
    CHECK(pi_block == Counter4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("draws are pure functions of the address", "[rng]") {
    CounterRng rng(20260814);
    auto a = rng.uniform_pair(7, 123, 2);
    auto b = rng.uniform_pair(7, 123, 2);
    CHECK(a == b);

    // different addresses decorrelate
    CHECK(rng.uniform_pair(7, 123, 2) != rng.uniform_pair(7, 124, 2));
    CHECK(rng.uniform_pair(7, 123, 2) != rng.uniform_pair(8, 123, 2));
    CHECK(rng.uniform_pair(7, 123, 2) != rng.uniform_pair(7, 123, 3));

    // a different seed changes the stream
    CounterRng other(20260815);
    CHECK(rng.uniform_pair(0, 0) != other.uniform_pair(0, 0));
}

TEST_CASE("uniforms land strictly inside (0,1)", "[rng]") {
    CounterRng rng(1);
    for (std::uint64_t i = 0; i < 10000; ++i) {
        auto [u1, u2] = rng.uniform_pair(0, i);
        CHECK(u1 > 0.0);
        CHECK(u1 < 1.0);
        CHECK(u2 > 0.0);
        CHECK(u2 < 1.0);
    }
}

TEST_CASE("normals have the right first moments", "[rng]") {
    CounterRng rng(42);
    const int n = 200000;
    double s1 = 0, s2 = 0, s4 = 0;
    for (int i = 0; i < n; ++i) {
        auto z = rng.normals<2>(0, std::uint64_t(i));
        for (double v : {z[0], z[1]}) {
            s1 += v;
            s2 += v * v;
            s4 += v * v * v * v;
        }
    }
    double m = 2.0 * n;
    CHECK(std::abs(s1 / m) < 0.01);        // mean 0
    CHECK(std::abs(s2 / m - 1.0) < 0.01);  // variance 1
    CHECK(std::abs(s4 / m - 3.0) < 0.05);  // kurtosis 3
}

TEST_CASE("d=3 normals fill the odd lane from the next block", "[rng]") {
    CounterRng rng(9);
    auto z3 = rng.normals<3>(5, 17);
    auto p0 = rng.normal_pair(5, 17, 0);
    auto p1 = rng.normal_pair(5, 17, 1);
    CHECK(z3[0] == p0[0]);
    CHECK(z3[1] == p0[1]);
    CHECK(z3[2] == p1[0]);
}

TEST_CASE("seed derivation separates studies, sizes and replicas", "[rng]") {
    auto s = derive_seed(20260814, "chaos_n_sweep", 1000, 3);
    CHECK(s == derive_seed(20260814, "chaos_n_sweep", 1000, 3));
    CHECK(s != derive_seed(20260814, "chaos_n_sweep", 1000, 4));
    CHECK(s != derive_seed(20260814, "chaos_n_sweep", 2000, 3));
    CHECK(s != derive_seed(20260814, "lln_study", 1000, 3));
    CHECK(s != derive_seed(20260815, "chaos_n_sweep", 1000, 3));
}
