#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mochi/coulomb.hpp"

using namespace mochi;
using namespace mochi::kernels;

TEST_CASE("exact kernel field at unit distance", "[coulomb]") {
    auto f = CoulombKernel<2>::grad_phi(Vec<2>{1.0, 0.0});
    CHECK(f[0] == 1.0);
    CHECK(f[1] == 0.0);

    // |grad phi| = r^{1-D}
    auto g = CoulombKernel<2>::grad_phi(Vec<2>{3.0, 4.0});
    CHECK(std::hypot(g[0], g[1]) == Catch::Approx(1.0 / 5.0).epsilon(1e-13));

    auto h = CoulombKernel<3>::grad_phi(Vec<3>{2.0, 0.0, 0.0});
    CHECK(h[0] == Catch::Approx(0.25).epsilon(1e-13));

    CHECK_THROWS_AS(CoulombKernel<2>::grad_phi(Vec<2>{0.0, 0.0}), SingularityError);
}

TEST_CASE("regularized field agrees with the exact one beyond eta", "[coulomb]") {
    CoulombKernel<2> ck(0.5);
    for (double r : {0.5, 0.7, 1.0, 3.0}) {
        Vec<2> x{r * 0.6, r * 0.8};
        auto reg = ck.grad_phi_reg(x);
        auto exact = CoulombKernel<2>::grad_phi(x);
        CHECK(reg[0] == Catch::Approx(exact[0]).epsilon(1e-13));
        CHECK(reg[1] == Catch::Approx(exact[1]).epsilon(1e-13));
    }
    // no singularity inside: the field vanishes linearly at the origin
    auto zero = ck.grad_phi_reg(Vec<2>{0.0, 0.0});
    CHECK(zero[0] == 0.0);
    CHECK(zero[1] == 0.0);
    auto tiny = ck.grad_phi_reg(Vec<2>{1e-9, 0.0});
    CHECK(std::abs(tiny[0]) < 1e-6);
}

TEST_CASE("radial blend is C^1 at both seams", "[coulomb]") {
    CoulombKernel<2> ck(0.4);
    const double a = 0.2, b = 0.4, eps = 1e-7;

    CHECK(ck.g(a - eps) == Catch::Approx(ck.g(a + eps)).epsilon(1e-5));
    CHECK(ck.g(b - eps) == Catch::Approx(ck.g(b + eps)).epsilon(1e-5));
    CHECK(ck.g_prime(a - eps) == 0.0);
    CHECK(std::abs(ck.g_prime(a + eps)) < 1e-4 * std::abs(ck.g(a)));
    CHECK(ck.g_prime(b - eps) == Catch::Approx(ck.g_prime(b + eps)).epsilon(1e-4));

    // flat core and exact tail
    CHECK(ck.g(0.05) == ck.g(0.1));
    CHECK(ck.g(1.0) == Catch::Approx(1.0).epsilon(1e-13));
    CHECK(ck.g_prime(1.0) == Catch::Approx(-2.0).epsilon(1e-13));
}

TEST_CASE("potential is continuous at the matching radius and increasing", "[coulomb]") {
    CoulombKernel<2> ck(0.3);
    CHECK(ck.phi(0.3 - 1e-9) == Catch::Approx(std::log(0.3)).margin(1e-6));
    CHECK(ck.phi(1.0) == Catch::Approx(0.0).margin(1e-13));
    CHECK(ck.phi(0.01) < ck.phi(0.1));
    CHECK(ck.phi(0.1) < ck.phi(1.0));

    CoulombKernel<3> ck3(0.3);
    CHECK(ck3.phi(2.0) == Catch::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("force magnitude peaks near the core radius and scales in eta", "[coulomb]") {
    CoulombKernel<2> narrow(0.1), wide(0.2);
    // sup |grad Phi^eta| ~ c / eta in d=2
    CHECK(narrow.sup_grad() / wide.sup_grad() == Catch::Approx(2.0).epsilon(0.15));
    CHECK(narrow.sup_grad() > 0);

    // measured constants are eta-stable once rescaled by eta^{D-2+k}
    auto cn = narrow.derivative_constants();
    auto cw = wide.derivative_constants();
    for (int k = 0; k < 3; ++k) {
        CAPTURE(k);
        CHECK(cn[std::size_t(k)] > 0);
        CHECK(cn[std::size_t(k)] == Catch::Approx(cw[std::size_t(k)]).epsilon(0.3));
    }
}

TEST_CASE("invalid widths are rejected", "[coulomb]") {
    CHECK_THROWS_AS(CoulombKernel<2>(0.0), ConfigError);
    CHECK_THROWS_AS(CoulombKernel<2>(-0.1), ConfigError);
}
