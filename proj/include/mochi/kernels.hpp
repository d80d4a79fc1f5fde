#pragma once

// Mollifier family W^eta(x) = eta^-d W(x/eta) with W a centered isotropic
// Gaussian of width base_std, the interaction kernel V^eta = W^eta * W^eta,
// and the eta(N) scaling law. V^eta is again Gaussian with variance
// 2 eta^2 base_std^2 per axis, so every evaluation below is closed form; the
// assumption checks recompute mass, moments and Fourier decay by quadrature
// anyway so a broken closed form cannot hide.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mochi/common.hpp"

namespace mochi::kernels {

enum class Regime { pme, coulomb };

inline const char* regime_name(Regime r) { return r == Regime::pme ? "pme" : "coulomb"; }

// Admissible exponent window for eta = N^{-beta/d}.
inline double beta_max(Regime regime, int dim) {
    if (dim < 1) throw ConfigError("dimension must be positive");
    return regime == Regime::pme ? dim / (2.0 * (dim + 2)) : 0.25;
}

struct ScalingLaw {
    double beta;
    int dim;
    Regime regime;

    ScalingLaw(double beta_, int dim_, Regime regime_) : beta(beta_), dim(dim_), regime(regime_) {
        double bmax = beta_max(regime, dim);
        if (!(beta > 0) || !(beta < bmax))
            throw ConfigError("beta=" + std::to_string(beta) + " outside (0, " +
                              std::to_string(bmax) + ") for regime " + regime_name(regime) +
                              ", d=" + std::to_string(dim));
    }

    double eta(std::uint64_t n) const {
        if (n < 2) throw ConfigError("particle count must be at least 2");
        return std::pow(double(n), -beta / dim);
    }
};

inline double eta_from_n(std::uint64_t n, double beta, int dim, Regime regime) {
    return ScalingLaw(beta, dim, regime).eta(n);
}

enum class MollifierFamily { gaussian };

template <int D>
class Mollifier {
  public:
    static constexpr int dim = D;

    Mollifier(double eta, double base_std = 1.0, MollifierFamily family = MollifierFamily::gaussian)
        : eta_(eta), s_(base_std), family_(family) {
        if (!(eta > 0)) throw ConfigError("eta must be positive");
        if (!(base_std > 0)) throw ConfigError("base_std must be positive");
    }

    double eta() const { return eta_; }
    double base_std() const { return s_; }
    MollifierFamily family() const { return family_; }

    // std of W^eta per axis, and of V^eta = W^eta * W^eta
    double w_std() const { return eta_ * s_; }
    double v_std() const { return std::sqrt(2.0) * eta_ * s_; }

    double w(const Vec<D>& x) const { return gaussian(x, w_std()); }
    double v(const Vec<D>& x) const { return gaussian(x, v_std()); }

    Vec<D> grad_w(const Vec<D>& x) const { return gaussian_grad(x, w_std()); }
    Vec<D> grad_v(const Vec<D>& x) const { return gaussian_grad(x, v_std()); }

    // int |y|^2 V^eta(y) dy = d * v_std^2 = 2 d eta^2 base_std^2
    double second_moment_v() const { return D * v_std() * v_std(); }

    // Continuum Fourier transforms, F(f)(k) = int f(x) e^{-i k.x} dx.
    double w_hat(double k2) const { return std::exp(-0.5 * k2 * w_std() * w_std()); }
    double v_hat(double k2) const { return std::exp(-0.5 * k2 * v_std() * v_std()); }

    // Transform of the unscaled base W (used by the assumption checks).
    double base_hat(double k2) const { return std::exp(-0.5 * k2 * s_ * s_); }

  private:
    static double gaussian(const Vec<D>& x, double std) {
        double norm_c = std::pow(2.0 * pi * std * std, -0.5 * D);
        return norm_c * std::exp(-0.5 * norm2<D>(x) / (std * std));
    }

    static Vec<D> gaussian_grad(const Vec<D>& x, double std) {
        double g = gaussian(x, std) / (std * std);
        Vec<D> out;
        for (int a = 0; a < D; ++a) out[a] = -x[a] * g;
        return out;
    }

    double eta_;
    double s_;
    MollifierFamily family_;
};

// --- quadrature -------------------------------------------------------------

// Tensor trapezoid rule on [-R, R]^D, refined (doubling nodes per axis) until
// two successive levels agree to `tol`. Integrands here decay like Gaussians
// well inside R, so the rule converges spectrally.
template <int D, typename F>
double quad_box(F&& f, double R, double tol = 1e-9, int start = 64, int max_level = 8) {
    double prev = 0;
    bool have_prev = false;
    for (int level = 0, m = start; level < max_level; ++level, m *= 2) {
        double h = 2.0 * R / m;
        std::size_t total = 1;
        for (int a = 0; a < D; ++a) total *= std::size_t(m);
        double s = 0;
        for (std::size_t idx = 0; idx < total; ++idx) {
            std::size_t rest = idx;
            Vec<D> x;
            for (int a = D - 1; a >= 0; --a) {
                int j = int(rest % std::size_t(m));
                rest /= std::size_t(m);
                x[a] = -R + (j + 0.5) * h;  // midpoint flavor: no boundary duplication
            }
            s += f(x);
        }
        s *= std::pow(h, D);
        if (have_prev && std::abs(s - prev) < tol) return s;
        prev = s;
        have_prev = true;
    }
    return prev;
}

// Composite Simpson on [0, R], refined until successive levels agree to tol.
template <typename F>
double quad_radial(F&& f, double R, double tol = 1e-9, int start = 256, int max_level = 10) {
    double prev = 0;
    bool have_prev = false;
    for (int level = 0, m = start; level < max_level; ++level, m *= 2) {
        double h = R / m;
        double s = f(0.0) + f(R);
        for (int j = 1; j < m; ++j) s += (j % 2 ? 4.0 : 2.0) * f(j * h);
        s *= h / 3.0;
        if (have_prev && std::abs(s - prev) < tol) return s;
        prev = s;
        have_prev = true;
    }
    return prev;
}

inline double unit_sphere_area(int dim) {
    // S_{d-1} = 2 pi^{d/2} / Gamma(d/2)
    return 2.0 * std::pow(pi, 0.5 * dim) / std::exp(std::lgamma(0.5 * dim));
}

// --- assumption verification -------------------------------------------------

struct AssumptionReport {
    double mass_error = 0;                                // |quadrature mass - 1|
    std::vector<std::pair<int, double>> moments;          // (l, int |x|^l W dx)
    double fourier_C = 0;                                 // fitted exponential decay rate
    double fourier_prefactor = 0;                         // matching prefactor constant
    std::vector<std::pair<int, double>> deriv_constants;  // (order, fitted C(alpha))
    double closed_form_error = 0;                         // sampled |F_num - F_gauss|
    bool beta_ok = false;
    bool pass = false;
};

// Closed-form moment of |X| for X ~ N(0, s^2 I_D): s^l 2^{l/2} G((D+l)/2)/G(D/2).
inline double gaussian_abs_moment(int dim, double s, int l) {
    return std::pow(s, l) * std::pow(2.0, 0.5 * l) *
           std::exp(std::lgamma(0.5 * (dim + l)) - std::lgamma(0.5 * dim));
}

// Quadrature checks of the standing kernel assumptions: unit mass, finite
// moments l in {1,2,4}, exponential Fourier decay with polynomially grown
// derivatives (orders <= 2), and the scaling-exponent window. Throws
// ConfigError on any hard violation; soft fit constants land in the report.
template <int D>
AssumptionReport verify_assumptions(const Mollifier<D>& mol, const ScalingLaw& law,
                                    double tol = 1e-8) {
    if (mol.family() != MollifierFamily::gaussian)
        throw ConfigError("assumption checks support the gaussian family only");
    AssumptionReport rep;
    const double s = mol.base_std();
    const double R = 12.0 * s;

    auto w_base = [&](const Vec<D>& x) {
        double c = std::pow(2.0 * pi * s * s, -0.5 * D);
        return c * std::exp(-0.5 * norm2<D>(x) / (s * s));
    };

    rep.mass_error = std::abs(quad_box<D>(w_base, R) - 1.0);
    if (rep.mass_error > tol)
        throw ConfigError("mollifier mass deviates from 1 by " + std::to_string(rep.mass_error));

    // Moments reduce to radial integrals (W is isotropic); the |x|^l kink at
    // the origin defeats the tensor rule in d >= 2 but is harmless radially.
    const double area = unit_sphere_area(D);
    auto w_radial = [&](double r) {
        double c = std::pow(2.0 * pi * s * s, -0.5 * D);
        return c * std::exp(-0.5 * r * r / (s * s));
    };
    for (int l : {1, 2, 4}) {
        double val = area * quad_radial([&](double r) {
            return std::pow(r, l + D - 1) * w_radial(r);
        }, R);
        rep.moments.emplace_back(l, val);
        double closed = gaussian_abs_moment(D, s, l);
        if (std::abs(val - closed) > 1e-6 * std::max(1.0, closed))
            throw ConfigError("moment l=" + std::to_string(l) + " deviates from closed form");
    }

    // |F(W)(lambda)| along a coordinate axis (isotropy makes direction moot).
    // Real part only: W is even, so the transform is real.
    auto f_num = [&](double lam, int deriv) {
        return quad_box<D>([&](const Vec<D>& x) {
            double w = w_base(x) * std::cos(lam * x[0]);
            for (int p = 0; p < deriv; ++p) w *= x[0];
            return w;
        }, R, 1e-10, 128);
    };
    // d/dlam of int W cos(lam x0) alternates cos/sin with powers of x0;
    // magnitude is bounded by the |x0|^deriv moment transform computed above,
    // and for the Gaussian the even orders are exact. Orders checked: 1, 2.

    std::vector<double> lam_grid;
    for (double lam = 0.5; lam <= 20.0 + 1e-12; lam += 0.5) lam_grid.push_back(lam);

    double worst_closed = 0;
    double rate = 1e30;
    double prefactor = 1.0;
    double c1 = 0, c2 = 0;
    for (double lam : lam_grid) {
        double fnum = f_num(lam, 0);
        double fclosed = mol.base_hat(lam * lam);
        worst_closed = std::max(worst_closed, std::abs(fnum - fclosed));
        double mag = std::max(std::abs(fnum), 1e-300);
        if (lam >= 2.0) rate = std::min(rate, -std::log(mag) / lam);
        // first derivative: -int x0 W sin(lam x0); second: -int x0^2 W cos(lam x0)
        double d1 = std::abs(quad_box<D>([&](const Vec<D>& x) {
            return -x[0] * w_base(x) * std::sin(lam * x[0]);
        }, R, 1e-10, 128));
        double d2 = std::abs(f_num(lam, 2));
        c1 = std::max(c1, d1 / ((1.0 + lam) * mag));
        c2 = std::max(c2, d2 / ((1.0 + lam * lam) * mag));
    }
    for (double lam : lam_grid) {
        double fclosed = mol.base_hat(lam * lam);
        prefactor = std::max(prefactor, fclosed * std::exp(rate * lam));
    }
    rep.fourier_C = rate;
    rep.fourier_prefactor = prefactor;
    rep.closed_form_error = worst_closed;
    rep.deriv_constants = {{1, c1}, {2, c2}};
    if (!(rate > 0)) throw ConfigError("Fourier transform of W lacks exponential decay");
    if (worst_closed > 1e-8)
        throw ConfigError("numerical transform disagrees with the gaussian closed form");

    rep.beta_ok = law.beta > 0 && law.beta < beta_max(law.regime, law.dim);
    rep.pass = rep.beta_ok;
    return rep;
}

}  // namespace mochi::kernels
