#pragma once

// Counter-based random streams (Philox 4x32-10). A draw is a pure function of
// (seed, step, particle, block), so replicas can run on any number of workers
// in any order and still produce bitwise-identical trajectories. No state is
// advanced; there is nothing to hand between threads.

#include <array>
#include <cmath>
#include <cstdint>

#include "mochi/common.hpp"

namespace mochi {

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    std::uint64_t p = std::uint64_t(a) * std::uint64_t(b);
    hi = std::uint32_t(p >> 32);
    lo = std::uint32_t(p);
}

}  // namespace detail

using Counter4 = std::array<std::uint32_t, 4>;
using Key2 = std::array<std::uint32_t, 2>;

// One Philox 4x32 block, 10 rounds. Matches the published test vectors.
inline Counter4 philox4x32(Counter4 ctr, Key2 key) {
    using namespace detail;
    for (int round = 0;; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        if (round == 9) return ctr;
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
}

// Stateless generator addressed by (step, particle, block).
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed)
        : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)} {}

    // Two uniforms in the open interval (0,1); 53-bit resolution.
    std::array<double, 2> uniform_pair(std::uint64_t step, std::uint64_t particle,
                                       std::uint32_t block = 0) const {
        Counter4 r = philox4x32({std::uint32_t(step), std::uint32_t(step >> 32),
                                 std::uint32_t(particle), block},
                                key_);
        return {to_unit(r[0], r[1]), to_unit(r[2], r[3])};
    }

    // Two standard normals via Box-Muller (deterministic, rejection-free).
    std::array<double, 2> normal_pair(std::uint64_t step, std::uint64_t particle,
                                      std::uint32_t block = 0) const {
        auto [u1, u2] = uniform_pair(step, particle, block);
        double r = std::sqrt(-2.0 * std::log(u1));
        return {r * std::cos(2.0 * pi * u2), r * std::sin(2.0 * pi * u2)};
    }

    // D standard normals for one (step, particle) address.
    template <int D>
    Vec<D> normals(std::uint64_t step, std::uint64_t particle) const {
        static_assert(D >= 1 && D <= 4);
        Vec<D> z;
        for (int a = 0; a < D; a += 2) {
            auto p = normal_pair(step, particle, std::uint32_t(a / 2));
            z[a] = p[0];
            if (a + 1 < D) z[a + 1] = p[1];
        }
        return z;
    }

  private:
    static double to_unit(std::uint32_t hi, std::uint32_t lo) {
        std::uint64_t x = (std::uint64_t(hi) << 32) | lo;
        return (double(x >> 11) + 0.5) * 0x1.0p-53;
    }

    Key2 key_;
};

}  // namespace mochi
