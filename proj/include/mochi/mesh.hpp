#pragma once

// Particle-mesh transfer: deposit an empirical measure onto the grid and
// sample grid fields back at particle positions with the adjoint weights.
// Windows: order 2 (multilinear hat) and order 4 (cubic B-spline). Spectral
// users compensate the window with one of two symbols:
//   continuum  prod_a sinc^p(k_a h / 2)   (inverts the window smearing)
//   discrete   prod_a sum_j B(j) cos(k_a j h)   (inverts nodal sampling;
//              exact for particles sitting on nodes, preserves mass exactly)
// Force evaluation divides by the square (deposit pass + adjoint sample pass),
// density estimation divides once.

#include <cmath>
#include <cstddef>
#include <vector>

#include "mochi/common.hpp"
#include "mochi/fft.hpp"

namespace mochi {

enum class MeshOrder { linear = 2, cubic = 4 };
enum class MeshDeconv { discrete, continuum };

namespace detail {

inline double bspline3(double t) {
    t = std::abs(t);
    if (t >= 2.0) return 0.0;
    if (t >= 1.0) {
        double u = 2.0 - t;
        return u * u * u / 6.0;
    }
    return 2.0 / 3.0 - t * t + 0.5 * t * t * t;
}

inline double sinc(double z) { return z == 0.0 ? 1.0 : std::sin(z) / z; }

}  // namespace detail

template <int D>
class ParticleMesh {
  public:
    ParticleMesh(GridMeta<D> meta, MeshOrder order = MeshOrder::cubic)
        : meta_(meta), order_(order) {}

    const GridMeta<D>& meta() const { return meta_; }
    MeshOrder order() const { return order_; }
    int support() const { return order_ == MeshOrder::linear ? 2 : 4; }

    // Unit-mass number density: v_m = (1/(N h^D)) sum_i w_m(x_i).
    std::vector<double> deposit(const std::vector<Vec<D>>& xs) const {
        std::vector<double> field(meta_.size(), 0.0);
        if (xs.empty()) throw ConfigError("deposit needs at least one particle");
        const double scale = 1.0 / (double(xs.size()) * std::pow(meta_.h(), D));
        scatter(xs, [&](std::size_t node, double w, std::size_t) { field[node] += w * scale; });
        return field;
    }

    // Adjoint sampling of a scalar grid field at the particle positions.
    std::vector<double> sample(const std::vector<double>& field,
                               const std::vector<Vec<D>>& xs) const {
        if (field.size() != meta_.size()) throw ConfigError("field size does not match grid");
        std::vector<double> out(xs.size(), 0.0);
        scatter(xs, [&](std::size_t node, double w, std::size_t i) { out[i] += w * field[node]; });
        return out;
    }

    // Window symbol per flat spectral index.
    std::vector<double> window_hat(MeshDeconv kind) const {
        const int m = meta_.m;
        const double h = meta_.h();
        const int p = support();
        std::vector<double> axis(static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) {
            double k = meta_.k(j);
            if (kind == MeshDeconv::continuum) {
                axis[std::size_t(j)] = std::pow(detail::sinc(0.5 * k * h), p);
            } else {
                double s = 0;
                for (int o = -2; o <= 2; ++o) {
                    double w = order_ == MeshOrder::linear ? (o == 0 ? 1.0 : 0.0)
                                                           : detail::bspline3(double(o));
                    s += w * std::cos(k * o * h);
                }
                axis[std::size_t(j)] = s;
            }
        }
        std::vector<double> out(meta_.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            auto ids = detail::unflatten<D>(i, m);
            double prod = 1.0;
            for (int a = 0; a < D; ++a) prod *= axis[std::size_t(ids[a])];
            out[i] = prod;
        }
        return out;
    }

  private:
    // Enumerate (node, weight, particle) triples; visitor accumulates.
    template <typename Visit>
    void scatter(const std::vector<Vec<D>>& xs, Visit&& visit) const {
        const int m = meta_.m;
        const double h = meta_.h();
        const int sup = support();
        const int lo = order_ == MeshOrder::linear ? 0 : -1;

        std::array<std::size_t, D> stride{};
        std::size_t st = 1;
        for (int a = D - 1; a >= 0; --a) {
            stride[std::size_t(a)] = st;
            st *= std::size_t(m);
        }

        std::array<std::array<double, 4>, D> wts{};
        std::array<std::array<std::size_t, 4>, D> off{};
        int combos = 1;
        for (int a = 0; a < D; ++a) combos *= sup;

        for (std::size_t i = 0; i < xs.size(); ++i) {
            for (int a = 0; a < D; ++a) {
                double u = wrap_coord(xs[i][std::size_t(a)], meta_.box) / h;
                int i0 = int(std::floor(u));
                double frac = u - i0;
                for (int o = 0; o < sup; ++o) {
                    int node = i0 + lo + o;
                    double w = order_ == MeshOrder::linear
                                   ? (o == 0 ? 1.0 - frac : frac)
                                   : detail::bspline3(frac - double(lo + o));
                    wts[std::size_t(a)][std::size_t(o)] = w;
                    off[std::size_t(a)][std::size_t(o)] =
                        std::size_t((node % m + m) % m) * stride[std::size_t(a)];
                }
            }
            for (int c = 0; c < combos; ++c) {
                int rest = c;
                double w = 1.0;
                std::size_t node = 0;
                for (int a = D - 1; a >= 0; --a) {
                    int o = rest % sup;
                    rest /= sup;
                    w *= wts[std::size_t(a)][std::size_t(o)];
                    node += off[std::size_t(a)][std::size_t(o)];
                }
                visit(node, w, i);
            }
        }
    }

    GridMeta<D> meta_;
    MeshOrder order_;
};

// Catmull-Rom interpolation of a node field: C^1, reproduces node values
// exactly (unlike the B-spline window, which smears them).
template <int D>
double interp_catmull_rom(const GridMeta<D>& meta, const std::vector<double>& field,
                          const Vec<D>& x) {
    if (field.size() != meta.size()) throw ConfigError("field size does not match grid");
    const int m = meta.m;
    const double h = meta.h();

    std::array<std::size_t, D> stride{};
    std::size_t st = 1;
    for (int a = D - 1; a >= 0; --a) {
        stride[std::size_t(a)] = st;
        st *= std::size_t(m);
    }

    std::array<std::array<double, 4>, D> wts{};
    std::array<std::array<std::size_t, 4>, D> off{};
    for (int a = 0; a < D; ++a) {
        double u = wrap_coord(x[std::size_t(a)], meta.box) / h;
        int i0 = int(std::floor(u));
        double t = u - i0;
        double t2 = t * t, t3 = t2 * t;
        wts[std::size_t(a)] = {0.5 * (-t3 + 2.0 * t2 - t), 0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
                               0.5 * (-3.0 * t3 + 4.0 * t2 + t), 0.5 * (t3 - t2)};
        for (int o = 0; o < 4; ++o) {
            int node = i0 - 1 + o;
            off[std::size_t(a)][std::size_t(o)] =
                std::size_t((node % m + m) % m) * stride[std::size_t(a)];
        }
    }
    int combos = 1;
    for (int a = 0; a < D; ++a) combos *= 4;
    double out = 0;
    for (int c = 0; c < combos; ++c) {
        int rest = c;
        double w = 1.0;
        std::size_t node = 0;
        for (int a = D - 1; a >= 0; --a) {
            int o = rest % 4;
            rest /= 4;
            w *= wts[std::size_t(a)][std::size_t(o)];
            node += off[std::size_t(a)][std::size_t(o)];
        }
        out += w * field[node];
    }
    return out;
}

}  // namespace mochi
