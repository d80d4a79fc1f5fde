#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mochi/kernels.hpp"

using namespace mochi;
using namespace mochi::kernels;

TEST_CASE("gaussian kernel values at the origin match closed forms", "[kernels]") {
    Mollifier<1> m1(1.0);
    CHECK(m1.w(Vec<1>{0.0}) == Catch::Approx(0.3989422804014327).epsilon(1e-14));
    CHECK(m1.v(Vec<1>{0.0}) == Catch::Approx(0.28209479177387814).epsilon(1e-14));

    // V = W * W doubles the variance: v_std = sqrt(2) eta s
    Mollifier<1> m(0.3, 1.5);
    CHECK(m.w_std() == Catch::Approx(0.45).epsilon(1e-14));
    CHECK(m.v_std() == Catch::Approx(0.45 * std::sqrt(2.0)).epsilon(1e-14));
    CHECK(m.second_moment_v() == Catch::Approx(2.0 * 1 * 0.45 * 0.45).epsilon(1e-13));

    Mollifier<2> m2(0.25, 2.0);
    CHECK(m2.second_moment_v() == Catch::Approx(2.0 * 2 * 0.25 * 0.25 * 4.0).epsilon(1e-13));
}

TEST_CASE("kernel gradient matches the analytic derivative", "[kernels]") {
    Mollifier<2> m(0.5);
    Vec<2> x{0.3, -0.2};
    double s2 = m.w_std() * m.w_std();
    auto g = m.grad_w(x);
    CHECK(g[0] == Catch::Approx(-x[0] / s2 * m.w(x)).epsilon(1e-12));
    CHECK(g[1] == Catch::Approx(-x[1] / s2 * m.w(x)).epsilon(1e-12));

    auto gv = m.grad_v(x);
    double sv2 = m.v_std() * m.v_std();
    CHECK(gv[0] == Catch::Approx(-x[0] / sv2 * m.v(x)).epsilon(1e-12));
}

TEST_CASE("fourier transforms are gaussians with doubled variance for V", "[kernels]") {
    Mollifier<1> m(0.4);
    double k2 = 3.7;
    CHECK(m.v_hat(k2) == Catch::Approx(m.w_hat(k2) * m.w_hat(k2)).epsilon(1e-14));
    CHECK(m.w_hat(0.0) == 1.0);  // unit mass
}

TEST_CASE("scaling law maps particle counts to kernel widths", "[kernels]") {
    // eta = n^{-beta/d}
    CHECK(eta_from_n(100000, 0.2, 2, Regime::coulomb) ==
          Catch::Approx(0.31622776601683794).epsilon(1e-14));
    CHECK(eta_from_n(32, 0.2, 1, Regime::coulomb) == Catch::Approx(0.5).epsilon(1e-14));

    ScalingLaw law(0.15, 1, Regime::pme);
    CHECK(law.eta(1000) > law.eta(2000));  // widths shrink with n
}

TEST_CASE("scaling law rejects exponents outside the admissible open range", "[kernels]") {
    // pme: beta in (0, d/(2(d+2)))
    CHECK(beta_max(Regime::pme, 1) == Catch::Approx(1.0 / 6.0));
    CHECK(beta_max(Regime::pme, 2) == Catch::Approx(0.25));
    CHECK(beta_max(Regime::coulomb, 2) == Catch::Approx(0.25));

    CHECK_THROWS_AS(ScalingLaw(0.0, 1, Regime::pme), ConfigError);
    CHECK_THROWS_AS(ScalingLaw(1.0 / 6.0, 1, Regime::pme), ConfigError);
    CHECK_THROWS_AS(ScalingLaw(-0.1, 2, Regime::coulomb), ConfigError);
    CHECK_THROWS_AS(ScalingLaw(0.25, 2, Regime::coulomb), ConfigError);
    CHECK_NOTHROW(ScalingLaw(0.16, 1, Regime::pme));
    CHECK_NOTHROW(ScalingLaw(0.24, 2, Regime::coulomb));
}

TEST_CASE("closed-form absolute moments of the standard gaussian", "[kernels]") {
    CHECK(gaussian_abs_moment(1, 1.0, 1) == Catch::Approx(0.7978845608028654).epsilon(1e-14));
    CHECK(gaussian_abs_moment(1, 1.0, 2) == Catch::Approx(1.0).epsilon(1e-13));
    CHECK(gaussian_abs_moment(2, 1.0, 1) == Catch::Approx(1.2533141373155003).epsilon(1e-13));
    CHECK(gaussian_abs_moment(2, 1.0, 2) == Catch::Approx(2.0).epsilon(1e-13));
    CHECK(gaussian_abs_moment(2, 1.0, 4) == Catch::Approx(8.0).epsilon(1e-13));
}

TEST_CASE("quadrature helpers integrate known functions", "[kernels]") {
    // 1d gaussian mass over a wide box
    double mass = quad_box<1>(
        [](const Vec<1>& x) { return std::exp(-0.5 * x[0] * x[0]) / std::sqrt(2.0 * pi); }, 10.0);
    CHECK(mass == Catch::Approx(1.0).epsilon(1e-10));

    // int_0^R r e^{-r} dr = 1 - (R+1)e^{-R}
    double val = quad_radial([](double r) { return r * std::exp(-r); }, 30.0);
    CHECK(val == Catch::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("assumption battery passes for the gaussian family", "[kernels]") {
    ScalingLaw law(0.15, 1, Regime::pme);
    Mollifier<1> mol(0.4);
    auto rep = verify_assumptions(mol, law);
    CHECK(rep.pass);
    CHECK(rep.mass_error < 1e-10);
    CHECK(rep.closed_form_error < 1e-8);
    CHECK(rep.fourier_C > 0);
    REQUIRE(rep.moments.size() == 3);
    // moments of the base kernel against closed forms
    for (auto [l, value] : rep.moments)
        CHECK(value == Catch::Approx(gaussian_abs_moment(1, 1.0, l)).epsilon(1e-6));
    CHECK(rep.beta_ok);
}
