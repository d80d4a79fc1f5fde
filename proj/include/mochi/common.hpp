#pragma once

// Shared basics: fixed-dimension vectors on the torus, error types, and the
// stable 64-bit mixing used to derive child seeds. Everything here is value
// semantic and safe to use concurrently.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mochi {

inline constexpr double pi = std::numbers::pi;

template <int D>
using Vec = std::array<double, D>;

// --- error taxonomy -------------------------------------------------------

// Bad user-supplied parameters (ranges, incompatible sizes, box too small).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Numerical scheme left its validity envelope (undershoot, CFL, ceiling).
struct SchemeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite state during SDE integration; carries the offending step.
struct BlowUpError : std::runtime_error {
    long step;
    explicit BlowUpError(long step_index)
        : std::runtime_error("non-finite particle state at step " + std::to_string(step_index)),
          step(step_index) {}
};

// Density snapshot time does not match the ensemble time.
struct StalenessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Kernel evaluated where it is undefined (Coulomb kernel at the origin).
struct SingularityError : std::domain_error {
    using std::domain_error::domain_error;
};

// Requested value outside recorded data (observation-time lookups).
struct LookupError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Explicit product grids and similar blow past their documented size limit.
struct ResourceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Persisted artifact set is incomplete or fails its hash check.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Densities fed to an integral diagnostic are not normalized.
struct NormalizationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Mathematically invalid input (non-positive data in a log-log fit).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// --- torus geometry --------------------------------------------------------

// Wrap a coordinate into [0, L).
inline double wrap_coord(double x, double box) {
    double y = x - box * std::floor(x / box);
    if (y >= box) y -= box;  // floor rounding can land exactly on box
    return y;
}

template <int D>
Vec<D> wrap(Vec<D> x, double box) {
    for (int a = 0; a < D; ++a) x[a] = wrap_coord(x[a], box);
    return x;
}

// Minimum-image displacement, each component in [-L/2, L/2).
inline double min_image_coord(double dx, double box) {
    return dx - box * std::round(dx / box);
}

template <int D>
Vec<D> min_image(const Vec<D>& a, const Vec<D>& b, double box) {
    Vec<D> d;
    for (int k = 0; k < D; ++k) d[k] = min_image_coord(a[k] - b[k], box);
    return d;
}

template <int D>
double norm2(const Vec<D>& v) {
    double s = 0;
    for (int a = 0; a < D; ++a) s += v[a] * v[a];
    return s;
}

template <int D>
double norm(const Vec<D>& v) {
    return std::sqrt(norm2<D>(v));
}

// --- seed derivation -------------------------------------------------------

// splitmix64 finalizer; full-period mixing of a 64-bit state.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// FNV-1a over raw bytes; used for config/content hashing.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

// Child seed = mixed hash of (master seed, study name, N, replica).
// Stable across platforms and worker counts by construction.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view study,
                                 std::uint64_t n, std::uint64_t replica) {
    std::uint64_t h = fnv1a(study);
    h = fnv1a(&master, sizeof master, h);
    h = fnv1a(&n, sizeof n, h);
    h = fnv1a(&replica, sizeof replica, h);
    return mix64(h);
}

}  // namespace mochi
