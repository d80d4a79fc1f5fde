#pragma once

// Conservative solvers for the three densities we evolve on the torus:
//   vpme           d_t rho = 1/2 Lap rho + 1/2 div(rho grad rho)
//   intermediate   d_t rho = 1/2 Lap rho + 1/2 div(rho (grad V^eta * rho))
//   coulomb_drift  d_t rho = sigma Lap rho + kappa/2 div(rho (grad Phi^eta * rho))
// All share one scheme: node velocities G from a per-axis spectral multiplier
// (vpme uses the plain spectral gradient, so it is the exact eta -> 0 limit of
// the intermediate scheme and discretization error cancels in comparisons),
// face-averaged advective flux in conservative form advanced explicitly, then
// the exact heat propagator e^{sigma dt Lap} applied spectrally. Mass is
// conserved to round-off by construction; negativity is clipped under a
// logged, bounded budget.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mochi/common.hpp"
#include "mochi/coulomb.hpp"
#include "mochi/fft.hpp"
#include "mochi/grid.hpp"
#include "mochi/kernels.hpp"

namespace mochi::pde {

enum class Equation { vpme, intermediate, coulomb_drift };

template <int D>
struct PdeConfig {
    GridMeta<D> meta;
    double dt = 0;
    double t_end = 0;
    double sigma = 0.5;        // linear diffusivity
    double drift_scale = 1.0;  // 0 degenerates to the heat equation
    double kappa = -1.0;       // coulomb sign: -1 repulsion, +1 aggregation
    double cstab = 0.2;        // explicit-flux stability constant
    double ceiling = 1e9;      // density ceiling; exceeding it aborts the run
    std::vector<double> obs_times;

    void validate() const {
        if (!(dt > 0) || !(t_end > 0)) throw ConfigError("dt and t_end must be positive");
        if (meta.m <= 0 || (meta.m & (meta.m - 1)) != 0)
            throw ConfigError("grid points per axis must be a power of two");
        if (!(meta.box > 0)) throw ConfigError("box must be positive");
        if (!(sigma >= 0)) throw ConfigError("sigma must be non-negative");
        double steps = t_end / dt;
        if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
            throw ConfigError("t_end must be an integer number of steps");
        for (double t : obs_times) {
            double k = t / dt;
            if (t < -1e-12 || t > t_end + 1e-12 ||
                std::abs(k - std::round(k)) > 1e-9 * std::max(1.0, std::abs(k)))
                throw ConfigError("observation time " + std::to_string(t) +
                                  " is not aligned with the step grid");
        }
    }
};

template <int D>
struct Solution {
    std::vector<Grid<D>> snapshots;
    double clipped_mass = 0;
    long steps = 0;

    const Grid<D>& at(double t) const {
        for (const auto& g : snapshots)
            if (std::abs(g.time - t) <= 1e-9 * std::max(1.0, std::abs(t))) return g;
        throw LookupError("no snapshot stored at t=" + std::to_string(t));
    }
};

// Time stepper exposing its state so particle systems can run in lockstep.
template <int D>
class Solver {
  public:
    // vpme (kernel-free)
    Solver(Equation eq, Grid<D> rho0, PdeConfig<D> cfg)
        : Solver(eq, std::move(rho0), std::move(cfg), nullptr, nullptr) {}

    Solver(Equation eq, Grid<D> rho0, PdeConfig<D> cfg, const kernels::Mollifier<D>& mol)
        : Solver(eq, std::move(rho0), std::move(cfg), &mol, nullptr) {}

    Solver(Equation eq, Grid<D> rho0, PdeConfig<D> cfg, const kernels::CoulombKernel<D>& ck)
        : Solver(eq, std::move(rho0), std::move(cfg), nullptr, &ck) {}

    const Grid<D>& state() const { return rho_; }
    double time() const { return rho_.time; }
    long step_index() const { return step_; }
    double clipped_mass() const { return clipped_; }
    double dt() const { return cfg_.dt; }

    // Node velocity components G_a = (multiplier_a * rho), recomputed from the
    // current state. Used for flux assembly and for intermediate SDE drifts.
    std::array<std::vector<double>, D> velocity(const Grid<D>& rho) const {
        std::array<std::vector<double>, D> g;
        auto rho_hat = conv_.forward(rho.v);
        for (int a = 0; a < D; ++a) {
            std::vector<cplx> spec(rho_hat);
            for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= vel_mult_[std::size_t(a)][i];
            g[std::size_t(a)] = conv_.inverse_real(std::move(spec));
        }
        return g;
    }

    std::array<std::vector<double>, D> velocity() const { return velocity(rho_); }

    void step() {
        check_stability();
        const double h = cfg_.meta.h();
        const int m = cfg_.meta.m;
        const double c = drift_coeff_;

        std::vector<double> next = rho_.v;
        if (c != 0.0) {
            auto g = velocity(rho_);
            // conservative divergence of face fluxes, axis by axis
            std::size_t stride = 1;
            for (int a = D - 1; a >= 0; --a) {
                const auto& ga = g[std::size_t(a)];
                for (std::size_t i = 0; i < next.size(); ++i) {
                    auto ids = detail::unflatten<D>(i, m);
                    long du = (ids[a] + 1) % m - ids[a];
                    long dd = (ids[a] - 1 + m) % m - ids[a];
                    auto up = std::size_t(long(i) + long(stride) * du);
                    auto dn = std::size_t(long(i) + long(stride) * dd);
                    double flux_up = 0.25 * (rho_.v[i] + rho_.v[up]) * (ga[i] + ga[up]);
                    double flux_dn = 0.25 * (rho_.v[dn] + rho_.v[i]) * (ga[dn] + ga[i]);
                    next[i] += cfg_.dt * c * (flux_up - flux_dn) / h;
                }
                stride *= std::size_t(m);
            }
        }
        // exact diffusion propagator
        if (cfg_.sigma > 0) {
            auto spec = conv_.forward(next);
            for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= heat_mult_[i];
            next = conv_.inverse_real(std::move(spec));
        }

        // clip policy: tolerate round-off undershoot, abort on real negativity
        double neg = 0, lowest = 0;
        for (double& x : next) {
            lowest = std::min(lowest, x);
            if (x < 0) {
                neg -= x;
                x = 0;
            }
        }
        if (lowest < -1e-10)
            throw SchemeError("negative undershoot " + std::to_string(lowest) + " at step " +
                              std::to_string(step_ + 1));
        if (neg > 0) {
            clipped_ += neg * std::pow(h, D);
            if (clipped_ > 1e-9)
                throw SchemeError("cumulative clipped mass exceeds budget");
            double s = 0;
            for (double x : next) s += x;
            double scale = mass0_ / (s * std::pow(h, D));
            for (double& x : next) x *= scale;
        }

        rho_.v = std::move(next);
        ++step_;
        rho_.time = step_ * cfg_.dt;

        double mx = *std::max_element(rho_.v.begin(), rho_.v.end());
        if (!(mx < cfg_.ceiling))
            throw SchemeError("density ceiling exceeded at t=" + std::to_string(rho_.time) +
                              " (max " + std::to_string(mx) + ")");
    }

    void advance_to(double t) {
        double k = (t - rho_.time) / cfg_.dt;
        long steps = long(std::round(k));
        if (std::abs(k - double(steps)) > 1e-6 || steps < 0)
            throw StalenessError("cannot advance solver to misaligned time " + std::to_string(t));
        for (long s = 0; s < steps; ++s) step();
    }

    Solution<D> run() {
        Solution<D> out;
        maybe_snapshot(out);
        long total = long(std::round(cfg_.t_end / cfg_.dt));
        for (long s = 0; s < total; ++s) {
            step();
            maybe_snapshot(out);
        }
        out.clipped_mass = clipped_;
        out.steps = step_;
        return out;
    }

  private:
    Solver(Equation eq, Grid<D> rho0, PdeConfig<D> cfg, const kernels::Mollifier<D>* mol,
           const kernels::CoulombKernel<D>* ck)
        : eq_(eq), cfg_(std::move(cfg)), conv_(cfg_.meta), rho_(std::move(rho0)) {
        cfg_.validate();
        if (rho_.meta != cfg_.meta) throw ConfigError("initial density not on the config grid");
        for (double x : rho_.v)
            if (!std::isfinite(x) || x < 0) throw ConfigError("initial density must be finite and non-negative");
        mass0_ = mass(rho_);
        if (!(mass0_ > 0)) throw ConfigError("initial density must have positive mass");

        const double h = cfg_.meta.h();
        switch (eq_) {
            case Equation::vpme:
                drift_coeff_ = 0.5 * cfg_.drift_scale;
                break;
            case Equation::intermediate: {
                if (!mol) throw ConfigError("intermediate equation needs a mollifier");
                if (h > mol->eta() / 4.0 + 1e-12)
                    throw ConfigError("grid does not resolve the kernel (need h <= eta/4)");
                drift_coeff_ = 0.5 * cfg_.drift_scale;
                break;
            }
            case Equation::coulomb_drift: {
                if (!ck) throw ConfigError("coulomb equation needs a coulomb kernel");
                if (h > ck->eta() / 4.0 + 1e-12)
                    throw ConfigError("grid does not resolve the kernel (need h <= eta/4)");
                drift_coeff_ = 0.5 * cfg_.kappa * cfg_.drift_scale;
                break;
            }
        }

        // per-axis velocity multipliers
        for (int a = 0; a < D; ++a) {
            if (eq_ == Equation::coulomb_drift) {
                Grid<D> samples(cfg_.meta);
                for (std::size_t i = 0; i < samples.size(); ++i) {
                    Vec<D> p = samples.x(i);
                    Vec<D> d;
                    for (int ax = 0; ax < D; ++ax) d[ax] = min_image_coord(p[ax], cfg_.meta.box);
                    samples.v[i] = ck->grad_phi_reg(d)[a];
                }
                vel_mult_[std::size_t(a)] = conv_.multiplier_from_samples(samples.v);
                // odd kernel: kill the unpaired Nyquist rows for a clean sign
                for (std::size_t i = 0; i < vel_mult_[std::size_t(a)].size(); ++i) {
                    auto ids = detail::unflatten<D>(i, cfg_.meta.m);
                    if (ids[a] == cfg_.meta.m / 2) vel_mult_[std::size_t(a)][i] = 0.0;
                }
            } else {
                const auto* m_ = mol;
                vel_mult_[std::size_t(a)] = conv_.multiplier(
                    [&](const Vec<D>& k, const std::array<int, D>& ids) -> cplx {
                        if (ids[a] == cfg_.meta.m / 2) return {0.0, 0.0};
                        double kern = eq_ == Equation::vpme ? 1.0 : m_->v_hat(norm2<D>(k));
                        return {0.0, k[a] * kern};
                    });
            }
        }
        heat_mult_ = conv_.multiplier([&](const Vec<D>& k, const std::array<int, D>&) -> cplx {
            return {std::exp(-cfg_.sigma * norm2<D>(k) * cfg_.dt), 0.0};
        });

        check_stability();  // initial CFL violation is a configuration error
        initial_check_done_ = true;
    }

    void check_stability() const {
        if (drift_coeff_ == 0.0) return;  // spectral heat step is exact at any dt
        double mx = *std::max_element(rho_.v.begin(), rho_.v.end());
        double h = cfg_.meta.h();
        double bound = cfg_.cstab * h * h / (1.0 + mx);
        if (cfg_.dt > bound) {
            std::string msg = "dt=" + std::to_string(cfg_.dt) + " violates stability bound " +
                              std::to_string(bound);
            if (initial_check_done_) throw SchemeError(msg + " at t=" + std::to_string(rho_.time));
            throw ConfigError(msg);
        }
    }

    void maybe_snapshot(Solution<D>& out) const {
        for (double t : cfg_.obs_times)
            if (std::abs(t - rho_.time) <= 1e-9 * std::max(1.0, std::abs(t))) {
                out.snapshots.push_back(rho_);
                out.snapshots.back().time = rho_.time;
                return;
            }
    }

    Equation eq_;
    PdeConfig<D> cfg_;
    Convolver<D> conv_;
    Grid<D> rho_;
    std::array<std::vector<cplx>, D> vel_mult_;
    std::vector<cplx> heat_mult_;
    double drift_coeff_ = 0;
    double mass0_ = 0;
    double clipped_ = 0;
    long step_ = 0;
    bool initial_check_done_ = false;
};

template <int D>
Solution<D> solve_vpme(const Grid<D>& rho0, const PdeConfig<D>& cfg) {
    Solver<D> s(Equation::vpme, rho0, cfg);
    return s.run();
}

template <int D>
Solution<D> solve_intermediate(const Grid<D>& rho0, const PdeConfig<D>& cfg,
                               const kernels::Mollifier<D>& mol) {
    Solver<D> s(Equation::intermediate, rho0, cfg, mol);
    return s.run();
}

template <int D>
Solution<D> solve_coulomb_drift(const Grid<D>& rho0, const PdeConfig<D>& cfg,
                                const kernels::CoulombKernel<D>& ck) {
    Solver<D> s(Equation::coulomb_drift, rho0, cfg, ck);
    return s.run();
}

// Spectral convolution of a density with the pme kernel (W or V flavor) or a
// caller-provided multiplier; shared utility for diagnostics and tests.
template <int D>
Grid<D> convolve(const Grid<D>& f, const std::vector<cplx>& mult) {
    Convolver<D> conv(f.meta);
    Grid<D> out(f.meta, f.time);
    out.v = conv.convolve(f.v, mult);
    return out;
}

}  // namespace mochi::pde
