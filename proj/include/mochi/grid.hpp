#pragma once

// Periodic density fields on cubic grids plus the handful of norms the
// diagnostics use. Values live at nodes j*h; integrals are torus Riemann sums
// (spectrally accurate for the smooth, rapidly decaying fields we evolve).

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mochi/common.hpp"
#include "mochi/fft.hpp"

namespace mochi {

template <int D>
struct Grid {
    GridMeta<D> meta;
    double time = 0;
    std::vector<double> v;

    Grid() = default;
    explicit Grid(GridMeta<D> m, double t = 0) : meta(m), time(t), v(m.size(), 0.0) {}

    double h() const { return meta.h(); }
    double cell() const { return std::pow(meta.h(), D); }
    std::size_t size() const { return v.size(); }

    // node position of flat index
    Vec<D> x(std::size_t idx) const {
        auto ids = detail::unflatten<D>(idx, meta.m);
        Vec<D> p;
        for (int a = 0; a < D; ++a) p[a] = ids[a] * meta.h();
        return p;
    }
};

template <int D, typename F>
Grid<D> make_grid(GridMeta<D> meta, F&& f, double time = 0) {
    Grid<D> g(meta, time);
    for (std::size_t i = 0; i < g.size(); ++i) g.v[i] = f(g.x(i));
    return g;
}

template <int D>
double mass(const Grid<D>& g) {
    double s = 0;
    for (double x : g.v) s += x;
    return s * g.cell();
}

template <int D>
double min_value(const Grid<D>& g) { return *std::min_element(g.v.begin(), g.v.end()); }

template <int D>
double max_value(const Grid<D>& g) { return *std::max_element(g.v.begin(), g.v.end()); }

template <int D>
double l1_norm(const Grid<D>& g) {
    double s = 0;
    for (double x : g.v) s += std::abs(x);
    return s * g.cell();
}

template <int D>
double l2_norm_sq(const Grid<D>& g) {
    double s = 0;
    for (double x : g.v) s += x * x;
    return s * g.cell();
}

template <int D>
double l2_norm(const Grid<D>& g) { return std::sqrt(l2_norm_sq(g)); }

template <int D>
double linf_norm(const Grid<D>& g) {
    double s = 0;
    for (double x : g.v) s = std::max(s, std::abs(x));
    return s;
}

template <int D>
Grid<D> difference(const Grid<D>& a, const Grid<D>& b) {
    if (a.meta != b.meta) throw ConfigError("grid mismatch in difference");
    Grid<D> out(a.meta, a.time);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = a.v[i] - b.v[i];
    return out;
}

template <int D>
double l1_distance_fields(const Grid<D>& a, const Grid<D>& b) {
    if (a.meta != b.meta) throw ConfigError("grid mismatch in l1 distance");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.v[i] - b.v[i]);
    return s * a.cell();
}

// Rescale to unit mass (used on initial data; solvers conserve mass after).
template <int D>
void normalize(Grid<D>& g) {
    double m = mass(g);
    if (!(m > 0)) throw ConfigError("cannot normalize grid with non-positive mass");
    for (double& x : g.v) x /= m;
}

// Isotropic Gaussian bump centered in the box, normalized to grid mass 1.
template <int D>
Grid<D> gaussian_grid(GridMeta<D> meta, double s0, double time = 0) {
    if (s0 <= 0) throw ConfigError("gaussian width must be positive");
    Vec<D> c;
    for (int a = 0; a < D; ++a) c[a] = 0.5 * meta.box;
    Grid<D> g = make_grid<D>(meta, [&](const Vec<D>& x) {
        double r2 = 0;
        for (int a = 0; a < D; ++a) {
            double d = min_image_coord(x[a] - c[a], meta.box);
            r2 += d * d;
        }
        return std::exp(-0.5 * r2 / (s0 * s0));
    }, time);
    normalize(g);
    return g;
}

// Discrete H1 seminorm squared: sum of centered-difference gradient energy.
template <int D>
double h1_seminorm_sq(const Grid<D>& g) {
    const int m = g.meta.m;
    const double inv2h = 1.0 / (2.0 * g.h());
    double s = 0;
    std::vector<std::size_t> strides(D);
    std::size_t st = 1;
    for (int a = D - 1; a >= 0; --a) {
        strides[std::size_t(a)] = st;
        st *= std::size_t(m);
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
        auto ids = detail::unflatten<D>(i, m);
        for (int a = 0; a < D; ++a) {
            long du = (ids[a] + 1) % m - ids[a];
            long dd = (ids[a] - 1 + m) % m - ids[a];
            auto up = std::size_t(long(i) + long(strides[std::size_t(a)]) * du);
            auto dn = std::size_t(long(i) + long(strides[std::size_t(a)]) * dd);
            double d = (g.v[up] - g.v[dn]) * inv2h;
            s += d * d;
        }
    }
    return s * g.cell();
}

// Discrete H1 distance: sqrt(L2^2 + |grad|^2) of the difference.
template <int D>
double h1_distance_fields(const Grid<D>& a, const Grid<D>& b) {
    Grid<D> w = difference(a, b);
    return std::sqrt(l2_norm_sq(w) + h1_seminorm_sq(w));
}

}  // namespace mochi
