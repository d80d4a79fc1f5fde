#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "mochi/pde.hpp"

using namespace mochi;
using namespace mochi::pde;

TEST_CASE("uniform density is a fixed point", "[pde]") {
    GridMeta<1> meta{6.4, 64};
    Grid<1> g(meta);
    for (double& x : g.v) x = 1.0 / meta.box;

    PdeConfig<1> pc;
    pc.meta = meta;
    pc.dt = 1e-4;
    pc.t_end = 5e-3;
    Solver<1> s(Equation::vpme, g, pc);
    s.advance_to(pc.t_end);
    double worst = 0;
    for (double x : s.state().v) worst = std::max(worst, std::abs(x - 1.0 / meta.box));
    CHECK(worst < 1e-13);
    CHECK(s.clipped_mass() == 0.0);
}

TEST_CASE("pure diffusion matches the heat propagator exactly", "[pde]") {
    GridMeta<1> meta{12.8, 256};
    double s0 = 0.5, sigma = 0.5, T = 0.18;
    PdeConfig<1> pc;
    pc.meta = meta;
    pc.dt = T;
    pc.t_end = T;
    pc.sigma = sigma;
    pc.drift_scale = 0.0;
    Solver<1> s(Equation::vpme, gaussian_grid(meta, s0), pc);
    s.step();

    auto ref = gaussian_grid(meta, std::sqrt(s0 * s0 + 2.0 * sigma * T));
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i)
        worst = std::max(worst, std::abs(s.state().v[i] - ref.v[i]));
    CHECK(worst < 1e-10);
    CHECK(mass(s.state()) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("small perturbations decay at the linearized rate", "[pde]") {
    GridMeta<1> meta{12.8, 256};
    const double L = meta.box, eps = 1e-4, T = 1.0;
    const double k = 2.0 * pi / L;
    Grid<1> g(meta);
    for (std::size_t j = 0; j < g.size(); ++j)
        g.v[j] = (1.0 + eps * std::cos(k * double(j) * meta.h())) / L;

    PdeConfig<1> pc;
    pc.meta = meta;
    pc.dt = 2.5e-4;
    pc.t_end = T;
    Solver<1> s(Equation::vpme, g, pc);

    auto project = [&](const Grid<1>& f) {
        double a = 0;
        for (std::size_t j = 0; j < f.size(); ++j)
            a += f.v[j] * std::cos(k * double(j) * meta.h());
        return a * f.h() * 2.0 / L;
    };
    double a0 = project(s.state());
    s.advance_to(T);
    double aT = project(s.state());

    // d/dt u = (sigma + rho_bar/2) Lap u around the flat state
    double rate = (0.5 + 0.5 / L) * k * k;
    CHECK(std::log(a0 / aT) / T == Catch::Approx(rate).epsilon(0.02));
}

TEST_CASE("spatial error contracts at second order under refinement", "[pde]") {
    const double L = 12.8, s0 = 0.7, T = 0.05, dt = 5e-5;
    auto solve = [&](int m) {
        GridMeta<1> meta{L, m};
        PdeConfig<1> pc;
        pc.meta = meta;
        pc.dt = dt;
        pc.t_end = T;
        pc.obs_times = {T};
        return solve_vpme<1>(gaussian_grid(meta, s0), pc);
    };
    auto fine = solve(512);
    const auto& ref = fine.at(T);
    auto err = [&](const Solution<1>& sol, int m) {
        const auto& g = sol.at(T);
        std::size_t stride = std::size_t(512 / m);
        double worst = 0;
        for (int j = 0; j < m; ++j)
            worst = std::max(worst, std::abs(g.v[std::size_t(j)] - ref.v[std::size_t(j) * stride]));
        return worst;
    };
    auto c128 = solve(128);
    auto c256 = solve(256);
    double e128 = err(c128, 128), e256 = err(c256, 256);
    CAPTURE(e128, e256);
    CHECK(e128 > 1e-9);  // errors must sit above round-off for the ratio to mean anything
    CHECK(e128 / e256 > 3.0);
    CHECK(fine.clipped_mass < 1e-9);
    CHECK(mass(ref) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("repulsive drift preserves quarter-turn symmetry", "[pde]") {
    GridMeta<2> meta{12.8, 64};
    kernels::CoulombKernel<2> ck(0.8);
    PdeConfig<2> pc;
    pc.meta = meta;
    pc.dt = 4e-3;
    pc.t_end = 0.08;
    pc.kappa = -1.0;
    Solver<2> s(Equation::coulomb_drift, gaussian_grid(meta, 0.8), pc, ck);
    s.advance_to(pc.t_end);

    const int m = meta.m;
    const auto& v = s.state().v;
    double worst = 0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
            double a = v[std::size_t(i) * std::size_t(m) + std::size_t(j)];
            double b = v[std::size_t((m - j) % m) * std::size_t(m) + std::size_t(i)];
            worst = std::max(worst, std::abs(a - b));
        }
    CHECK(worst < 1e-8);
    CHECK(mass(s.state()) == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("configuration and runtime guards", "[pde]") {
    GridMeta<1> meta{12.8, 128};
    auto g = gaussian_grid(meta, 0.7);

    PdeConfig<1> bad;
    bad.meta = meta;
    bad.dt = 1e-2;  // far above cstab h^2 / (1 + max rho)
    bad.t_end = 1e-2;
    CHECK_THROWS_AS(Solver<1>(Equation::vpme, g, bad), ConfigError);

    PdeConfig<1> pc;
    pc.meta = meta;
    pc.dt = 1e-4;
    pc.t_end = 1e-2;

    PdeConfig<1> low = pc;
    low.ceiling = 0.1;
    Solver<1> s(Equation::vpme, g, low);
    CHECK_THROWS_AS(s.step(), SchemeError);

    CHECK_THROWS_AS(Solver<1>(Equation::intermediate, g, pc), ConfigError);
    kernels::Mollifier<1> coarse(0.2);
    CHECK_THROWS_AS(Solver<1>(Equation::intermediate, g, pc, coarse), ConfigError);

    PdeConfig<1> skew = pc;
    skew.obs_times = {1.5e-4};
    CHECK_THROWS_AS(Solver<1>(Equation::vpme, g, skew), ConfigError);

    pc.obs_times = {0.0, 1e-2};
    auto sol = solve_vpme<1>(g, pc);
    CHECK(sol.snapshots.size() == 2);
    CHECK_THROWS_AS(sol.at(5e-3), LookupError);
    CHECK(sol.at(1e-2).time == Catch::Approx(1e-2));
}
