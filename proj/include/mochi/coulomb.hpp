#pragma once

// Coulomb interaction: exact force field grad Phi(x) = x/|x|^D and its
// eta-regularization. The regularized field is x*g(|x|) with a radial factor
//   g(r) = r^-D                      for r >= eta,
//          quintic C^2 blend         for eta/2 <= r <= eta,
//          (eta/2)^-D (constant)     for r <= eta/2,
// so grad Phi^eta is C^2, vanishes at the origin, agrees with the exact field
// outside radius eta, and carries the expected sup-norm scale eta^-(D-1).
// Derivative sup-norm constants are measured once at construction.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "mochi/common.hpp"

namespace mochi::kernels {

namespace detail {

// Two-point quintic Hermite on [0,1]; derivatives prescaled by the interval.
struct Quintic {
    std::array<double, 6> c;  // value, d1, d2/2 at 0; then basis-composed

    static Quintic fit(double f0, double d0, double s0, double f1, double d1, double s1) {
        // q(t) = sum c_k t^k with q(0)=f0, q'(0)=d0, q''(0)=s0 and same at 1.
        Quintic q;
        q.c[0] = f0;
        q.c[1] = d0;
        q.c[2] = 0.5 * s0;
        double a = f1 - f0 - d0 - 0.5 * s0;
        double b = d1 - d0 - s0;
        double g = s1 - s0;
        q.c[3] = 10.0 * a - 4.0 * b + 0.5 * g;
        q.c[4] = -15.0 * a + 7.0 * b - g;
        q.c[5] = 6.0 * a - 3.0 * b + 0.5 * g;
        return q;
    }

    double value(double t) const {
        return ((((c[5] * t + c[4]) * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0];
    }
    double deriv(double t) const {
        return (((5.0 * c[5] * t + 4.0 * c[4]) * t + 3.0 * c[3]) * t + 2.0 * c[2]) * t + c[1];
    }
};

}  // namespace detail

template <int D>
class CoulombKernel {
  public:
    explicit CoulombKernel(double eta) : eta_(eta) {
        static_assert(D >= 2, "Coulomb case needs d >= 2");
        if (!(eta > 0)) throw ConfigError("coulomb eta must be positive");
        a_ = 0.5 * eta;
        b_ = eta;
        const double dd = double(D);
        // match value and first two radial derivatives of r^-D at b; flat at a
        blend_ = detail::Quintic::fit(std::pow(a_, -dd), 0.0, 0.0,
                                      std::pow(b_, -dd),
                                      -dd * std::pow(b_, -dd - 1.0) * (b_ - a_),
                                      dd * (dd + 1.0) * std::pow(b_, -dd - 2.0) * (b_ - a_) * (b_ - a_));
        measure_constants();
    }

    double eta() const { return eta_; }

    // Exact kernel; undefined at the origin.
    static Vec<D> grad_phi(const Vec<D>& x) {
        double r2 = norm2<D>(x);
        if (r2 == 0.0) throw SingularityError("coulomb kernel evaluated at the origin");
        double f = std::pow(r2, -0.5 * D);
        Vec<D> out;
        for (int k = 0; k < D; ++k) out[k] = x[k] * f;
        return out;
    }

    // Radial factor of the regularized field.
    double g(double r) const {
        if (r >= b_) return std::pow(r, -double(D));
        if (r <= a_) return std::pow(a_, -double(D));
        return blend_.value((r - a_) / (b_ - a_));
    }

    double g_prime(double r) const {
        if (r >= b_) return -double(D) * std::pow(r, -double(D) - 1.0);
        if (r <= a_) return 0.0;
        return blend_.deriv((r - a_) / (b_ - a_)) / (b_ - a_);
    }

    Vec<D> grad_phi_reg(const Vec<D>& x) const {
        double r = std::sqrt(norm2<D>(x));
        double f = g(r);
        Vec<D> out;
        for (int k = 0; k < D; ++k) out[k] = x[k] * f;
        return out;
    }

    // |grad Phi^eta| at radius r.
    double force_mag(double r) const { return r * g(r); }

    // Potential with phi(b) matched to the exact branch; inner part integrates
    // phi'(r) = r g(r) on a fixed table.
    double phi(double r) const {
        if (r >= b_) return exact_phi(r);
        if (r <= 0.0) return phi0_;
        double t = r / b_ * double(table_.size() - 1);
        std::size_t j = std::min(std::size_t(t), table_.size() - 2);
        double w = t - double(j);
        return table_[j] * (1.0 - w) + table_[j + 1] * w;
    }

    // Measured sup norms scaled by the expected eta powers, k = 0, 1, 2:
    // C_k = sup |D^k Phi^eta| * eta^{D-2+k}  (k=0 sup taken over r <= max(1, eta)).
    std::array<double, 3> derivative_constants() const { return c_; }

    double sup_grad() const { return sup_grad_; }

  private:
    static double exact_phi(double r) {
        if constexpr (D == 2) return std::log(r);
        else return -std::pow(r, 2.0 - D) / (double(D) - 2.0);
    }

    void measure_constants() {
        // Inner potential table: phi(r) = phi(b) - int_r^b s g(s) ds, built by
        // per-interval Simpson (midpoint evaluation, O(h^5) per interval).
        const std::size_t n = 4097;
        table_.assign(n, 0.0);
        double h = b_ / double(n - 1);
        table_[n - 1] = exact_phi(b_);
        auto f = [&](double r) { return r * g(r); };
        for (std::size_t j = n - 1; j >= 1; --j) {
            double r1 = j * h, r0 = (j - 1) * h;
            double seg = (h / 6.0) * (f(r0) + 4.0 * f(0.5 * (r0 + r1)) + f(r1));
            table_[j - 1] = table_[j] - seg;
        }
        phi0_ = table_[0];

        // sup norms over a fine radial sweep; fields decay beyond b analytically
        double sup1 = 0, sup2 = 0;
        const int samples = 8192;
        for (int j = 0; j <= samples; ++j) {
            double r = (j * 3.0 * b_) / samples;
            double gg = g(r), gp = g_prime(r);
            sup1 = std::max(sup1, r * gg);
            // Jacobian eigenvalues of x g(r): tangential g, radial g + r g'
            sup2 = std::max({sup2, std::abs(gg), std::abs(gg + r * gp)});
        }
        sup_grad_ = sup1;
        double sup0 = std::abs(phi0_);
        for (double r = b_; r <= std::max(1.0, b_) + 1e-12; r += b_ / 64.0)
            sup0 = std::max(sup0, std::abs(exact_phi(r)));
        c_ = {sup0 * std::pow(eta_, double(D) - 2.0),
              sup1 * std::pow(eta_, double(D) - 1.0),
              sup2 * std::pow(eta_, double(D))};
    }

    double eta_, a_, b_;
    detail::Quintic blend_;
    std::vector<double> table_;
    double phi0_ = 0;
    double sup_grad_ = 0;
    std::array<double, 3> c_{};
};

}  // namespace mochi::kernels
