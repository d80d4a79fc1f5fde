#pragma once

// Interacting particle systems on the torus and their couplings.
//
// Coupled system      dX_i = -(s/2N) sum_j K(X_i - X_j) dt + dB_i
// Intermediate system dXb_i = -(s/2) (K * rho_t)(Xb_i) dt + dB_i
// with K = grad V^eta (pme) or kappa grad Phi^eta (coulomb), both systems
// sharing initial positions and Brownian increments so pathwise deviations
// measure only the interaction error. Noise comes from a counter RNG keyed by
// (step, particle), so trajectories are reproducible for any worker layout:
// step 0 is reserved for the initial draw, step k >= 1 drives the k-th Euler
// step. Pair sums have an exact direct path and an FFT particle-mesh path
// (cubic window, continuum deconvolution squared) that agrees to ~1e-6.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mochi/common.hpp"
#include "mochi/coulomb.hpp"
#include "mochi/fft.hpp"
#include "mochi/grid.hpp"
#include "mochi/kernels.hpp"
#include "mochi/mesh.hpp"
#include "mochi/pde.hpp"
#include "mochi/rng.hpp"

namespace mochi::particles {

template <int D>
struct SdeConfig {
    std::uint64_t n = 0;
    double box = 0;
    double dt = 0;
    double t_end = 0;
    double s0 = 1.0;           // initial isotropic gaussian std
    std::uint64_t seed = 0;
    double drift_scale = 1.0;  // 0 = free diffusion
    double kappa = -1.0;       // coulomb sign

    void validate() const {
        if (n < 2) throw ConfigError("need at least two particles");
        if (!(box > 0) || !(dt > 0) || !(t_end > 0) || !(s0 > 0))
            throw ConfigError("box, dt, t_end, s0 must be positive");
        double steps = t_end / dt;
        if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps))
            throw ConfigError("t_end must be an integer number of steps");
        // initial law must fit in the box: mass escaping under wrapping
        double z = 0.5 * box / s0;
        double tail = 0.5 * std::erfc(z / std::sqrt(2.0));
        if (2.0 * D * tail > 1e-6)
            throw ConfigError("initial gaussian leaks mass " + std::to_string(2.0 * D * tail) +
                              " outside the box; widen the box or shrink s0");
    }

    long steps() const { return long(std::round(t_end / dt)); }
};

template <int D>
struct Ensemble {
    std::vector<Vec<D>> x;
    double time = 0;
    long step = 0;

    std::size_t size() const { return x.size(); }
};

// Standard normal increments for one Euler step, one D-vector per particle.
template <int D>
std::vector<Vec<D>> draw_normals(const CounterRng& rng, long step_index, std::size_t n) {
    std::vector<Vec<D>> z(n);
    for (std::size_t i = 0; i < n; ++i)
        z[i] = rng.template normals<D>(std::uint64_t(step_index), std::uint64_t(i));
    return z;
}

template <int D>
Ensemble<D> init_iid(const SdeConfig<D>& cfg, const CounterRng& rng) {
    cfg.validate();
    Ensemble<D> e;
    e.x.resize(cfg.n);
    auto z = draw_normals<D>(rng, 0, cfg.n);
    const double c = 0.5 * cfg.box;
    for (std::size_t i = 0; i < cfg.n; ++i)
        for (int a = 0; a < D; ++a)
            e.x[i][std::size_t(a)] = wrap_coord(c + cfg.s0 * z[i][std::size_t(a)], cfg.box);
    return e;
}

// Exact O(N^2) pair drift, pme kernel: b_i = -(s/2N) sum_{j != i} grad V(X_i - X_j).
// Antisymmetry of grad V makes the global sum vanish identically.
template <int D>
std::vector<Vec<D>> drift_pairwise(const std::vector<Vec<D>>& xs, double box,
                                   const kernels::Mollifier<D>& mol, double scale) {
    std::vector<Vec<D>> f(xs.size(), Vec<D>{});
    const double pref = -0.5 * scale / double(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = i + 1; j < xs.size(); ++j) {
            Vec<D> d;
            for (int a = 0; a < D; ++a)
                d[std::size_t(a)] = min_image_coord(
                    xs[i][std::size_t(a)] - xs[j][std::size_t(a)], box);
            Vec<D> g = mol.grad_v(d);
            for (int a = 0; a < D; ++a) {
                f[i][std::size_t(a)] += pref * g[std::size_t(a)];
                f[j][std::size_t(a)] -= pref * g[std::size_t(a)];
            }
        }
    return f;
}

// Exact O(N^2) pair drift, regularized coulomb: b_i = -(s kappa/2N) sum psi(X_i - X_j).
template <int D>
std::vector<Vec<D>> drift_pairwise(const std::vector<Vec<D>>& xs, double box,
                                   const kernels::CoulombKernel<D>& ck, double kappa,
                                   double scale) {
    std::vector<Vec<D>> f(xs.size(), Vec<D>{});
    const double pref = -0.5 * kappa * scale / double(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = i + 1; j < xs.size(); ++j) {
            Vec<D> d;
            for (int a = 0; a < D; ++a)
                d[std::size_t(a)] = min_image_coord(
                    xs[i][std::size_t(a)] - xs[j][std::size_t(a)], box);
            Vec<D> g = ck.grad_phi_reg(d);
            for (int a = 0; a < D; ++a) {
                f[i][std::size_t(a)] += pref * g[std::size_t(a)];
                f[j][std::size_t(a)] -= pref * g[std::size_t(a)];
            }
        }
    return f;
}

// FFT particle-mesh evaluation of the same pair drifts: deposit with the cubic
// window, convolve in Fourier space with the kernel symbol divided by the
// squared window symbol, sample back with the adjoint weights.
template <int D>
class MeshForce {
  public:
    // pme flavor: per-axis symbol -(s/2) ik_a Vhat(|k|^2) / window^2
    MeshForce(const GridMeta<D>& meta, const kernels::Mollifier<D>& mol, double scale)
        : meta_(meta), conv_(meta), mesh_(meta, MeshOrder::cubic) {
        if (meta.h() > mol.eta() / 4.0 + 1e-12)
            throw ConfigError("grid does not resolve the kernel (need h <= eta/4)");
        auto win = mesh_.window_hat(MeshDeconv::continuum);
        for (int a = 0; a < D; ++a)
            mult_[std::size_t(a)] = conv_.multiplier(
                [&](const Vec<D>& k, const std::array<int, D>& ids) -> cplx {
                    if (ids[a] == meta.m / 2) return {0.0, 0.0};
                    std::size_t flat = flatten(ids);
                    double w2 = win[flat] * win[flat];
                    return {0.0, -0.5 * scale * k[std::size_t(a)] *
                                     mol.v_hat(norm2<D>(k)) / w2};
                });
    }

    // coulomb flavor: symbol -(s kappa/2) DFT[psi_a samples] / window^2
    MeshForce(const GridMeta<D>& meta, const kernels::CoulombKernel<D>& ck, double kappa,
              double scale)
        : meta_(meta), conv_(meta), mesh_(meta, MeshOrder::cubic) {
        if (meta.h() > ck.eta() / 4.0 + 1e-12)
            throw ConfigError("grid does not resolve the kernel (need h <= eta/4)");
        auto win = mesh_.window_hat(MeshDeconv::continuum);
        Grid<D> samples(meta);
        for (int a = 0; a < D; ++a) {
            for (std::size_t i = 0; i < samples.size(); ++i) {
                Vec<D> p = samples.x(i);
                Vec<D> d;
                for (int ax = 0; ax < D; ++ax)
                    d[std::size_t(ax)] = min_image_coord(p[std::size_t(ax)], meta.box);
                samples.v[i] = ck.grad_phi_reg(d)[std::size_t(a)];
            }
            auto base = conv_.multiplier_from_samples(samples.v);
            for (std::size_t i = 0; i < base.size(); ++i) {
                auto ids = detail::unflatten<D>(i, meta.m);
                if (ids[a] == meta.m / 2) {
                    base[i] = 0.0;
                    continue;
                }
                double w2 = win[i] * win[i];
                base[i] *= -0.5 * kappa * scale / w2;
            }
            mult_[std::size_t(a)] = std::move(base);
        }
    }

    std::vector<Vec<D>> operator()(const std::vector<Vec<D>>& xs) const {
        auto rho = mesh_.deposit(xs);
        auto rho_hat = conv_.forward(rho);
        std::vector<Vec<D>> f(xs.size(), Vec<D>{});
        for (int a = 0; a < D; ++a) {
            std::vector<cplx> spec(rho_hat);
            for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= mult_[std::size_t(a)][i];
            auto comp = mesh_.sample(conv_.inverse_real(std::move(spec)), xs);
            for (std::size_t i = 0; i < xs.size(); ++i) f[i][std::size_t(a)] = comp[i];
        }
        return f;
    }

  private:
    std::size_t flatten(const std::array<int, D>& ids) const {
        std::size_t flat = 0;
        for (int a = 0; a < D; ++a) flat = flat * std::size_t(meta_.m) + std::size_t(ids[a]);
        return flat;
    }

    GridMeta<D> meta_;
    Convolver<D> conv_;
    ParticleMesh<D> mesh_;
    std::array<std::vector<cplx>, D> mult_;
};

// Intermediate drift: multilinear interpolation of precomputed node velocity
// components, scaled by coeff (-s/2 for pme, -s kappa/2 for coulomb).
template <int D>
std::vector<Vec<D>> drift_from_nodes(const std::vector<Vec<D>>& xs,
                                     const std::array<std::vector<double>, D>& g,
                                     const GridMeta<D>& meta, double coeff) {
    ParticleMesh<D> mesh(meta, MeshOrder::linear);
    std::vector<Vec<D>> f(xs.size(), Vec<D>{});
    for (int a = 0; a < D; ++a) {
        auto comp = mesh.sample(g[std::size_t(a)], xs);
        for (std::size_t i = 0; i < xs.size(); ++i)
            f[i][std::size_t(a)] = coeff * comp[i];
    }
    return f;
}

// One Euler-Maruyama step. Throws BlowUpError when a coordinate stops being
// finite (diagnostic for attractive blow-up, not an expected path).
template <int D>
void advance(Ensemble<D>& e, const std::vector<Vec<D>>& drift, const std::vector<Vec<D>>& z,
             double dt, double box) {
    const double sq = std::sqrt(dt);
    for (std::size_t i = 0; i < e.x.size(); ++i)
        for (int a = 0; a < D; ++a) {
            double v = e.x[i][std::size_t(a)] + dt * drift[i][std::size_t(a)] +
                       sq * z[i][std::size_t(a)];
            if (!std::isfinite(v)) throw BlowUpError(e.step + 1);
            e.x[i][std::size_t(a)] = wrap_coord(v, box);
        }
    ++e.step;
    e.time = e.step * dt;
}

// Largest and mean torus distance between paired particles.
template <int D>
std::pair<double, double> deviation(const Ensemble<D>& a, const Ensemble<D>& b, double box) {
    if (a.size() != b.size()) throw ConfigError("ensembles differ in size");
    double mx = 0, mean = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        Vec<D> d;
        for (int ax = 0; ax < D; ++ax)
            d[std::size_t(ax)] =
                min_image_coord(a.x[i][std::size_t(ax)] - b.x[i][std::size_t(ax)], box);
        double r = norm<D>(d);
        mx = std::max(mx, r);
        mean += r;
    }
    return {mx, mean / double(a.size())};
}

// Read-only view of the intermediate density's velocity field over time.
// Stored mode keeps every step (cheap in d=1); live mode advances a solver
// lazily in lockstep (d=2, where storing all steps would not fit).
template <int D>
class VelocityTimeline {
  public:
    static VelocityTimeline record(pde::Solver<D>& s, double t_end) {
        VelocityTimeline tl;
        tl.meta_ = s.state().meta;
        tl.dt_ = s.dt();
        long steps = long(std::round(t_end / s.dt()));
        tl.stored_.reserve(std::size_t(steps + 1));
        tl.stored_.push_back(s.velocity());
        for (long k = 0; k < steps; ++k) {
            s.step();
            tl.stored_.push_back(s.velocity());
        }
        return tl;
    }

    explicit VelocityTimeline(pde::Solver<D>& live) : live_(&live) {
        meta_ = live.state().meta;
        dt_ = live.dt();
    }

    const GridMeta<D>& meta() const { return meta_; }

    const std::array<std::vector<double>, D>& at(double t) {
        double k = t / dt_;
        long idx = long(std::round(k));
        if (std::abs(k - double(idx)) > 1e-6)
            throw StalenessError("velocity requested at off-step time " + std::to_string(t));
        if (!stored_.empty()) {
            if (idx < 0 || std::size_t(idx) >= stored_.size())
                throw StalenessError("velocity requested outside recorded range");
            return stored_[std::size_t(idx)];
        }
        if (idx == live_idx_) return live_cache_;
        if (idx < live_idx_)
            throw StalenessError("live timeline cannot rewind (lockstep must move forward)");
        live_->advance_to(t);
        live_cache_ = live_->velocity();
        live_idx_ = idx;
        return live_cache_;
    }

  private:
    VelocityTimeline() = default;

    GridMeta<D> meta_;
    double dt_ = 0;
    std::vector<std::array<std::vector<double>, D>> stored_;
    pde::Solver<D>* live_ = nullptr;
    std::array<std::vector<double>, D> live_cache_;
    long live_idx_ = -1;
};

template <int D>
struct CouplingRun {
    std::vector<double> obs_times;
    std::vector<double> max_dev;
    std::vector<double> mean_dev;
    std::vector<std::vector<Vec<D>>> coupled_at_obs;  // filled when requested

    double max_deviation(double t) const {
        for (std::size_t i = 0; i < obs_times.size(); ++i)
            if (std::abs(obs_times[i] - t) <= 1e-9 * std::max(1.0, std::abs(t)))
                return max_dev[i];
        throw LookupError("no deviation recorded at t=" + std::to_string(t));
    }
};

// Drive the coupled and intermediate systems with shared initials and noise.
// coupled_drift(xs) must return the already-scaled drift of the interacting
// system; the intermediate drift reads the timeline at the current step.
template <int D, typename CoupledDrift>
CouplingRun<D> run_coupling(const SdeConfig<D>& cfg, CoupledDrift&& coupled_drift,
                            VelocityTimeline<D>& timeline, double intermediate_coeff,
                            const std::vector<double>& obs_times, bool store_positions = false) {
    cfg.validate();
    if (std::abs(timeline.meta().box - cfg.box) > 1e-12)
        throw ConfigError("timeline box does not match particle box");
    CounterRng rng(cfg.seed);
    Ensemble<D> coupled = init_iid(cfg, rng);
    Ensemble<D> inter = coupled;

    CouplingRun<D> out;
    auto observe = [&](double t) {
        for (double to : obs_times)
            if (std::abs(to - t) <= 1e-9 * std::max(1.0, std::abs(to))) {
                auto [mx, mean] = deviation(coupled, inter, cfg.box);
                out.obs_times.push_back(t);
                out.max_dev.push_back(mx);
                out.mean_dev.push_back(mean);
                if (store_positions) out.coupled_at_obs.push_back(coupled.x);
                return;
            }
    };
    observe(0.0);

    const long total = cfg.steps();
    for (long k = 0; k < total; ++k) {
        double t = k * cfg.dt;
        auto z = draw_normals<D>(rng, k + 1, cfg.n);
        auto bc = coupled_drift(coupled.x);
        auto gi = drift_from_nodes<D>(inter.x, timeline.at(t), timeline.meta(),
                                      intermediate_coeff);
        advance<D>(coupled, bc, z, cfg.dt, cfg.box);
        advance<D>(inter, gi, z, cfg.dt, cfg.box);
        observe(coupled.time);
    }
    return out;
}

// Law-of-large-numbers statistic for the coulomb field: for each selected
// particle, the distance between the empirical field (1/N) sum_j psi(X_i - X_j)
// and the continuum field (psi * rho)(X_i), psi = regularized grad Phi.
template <int D>
std::vector<double> lln_statistic(const std::vector<Vec<D>>& xs,
                                  const std::vector<std::size_t>& subset,
                                  const kernels::CoulombKernel<D>& ck, const Grid<D>& density) {
    const GridMeta<D>& meta = density.meta;
    Convolver<D> conv(meta);
    auto rho_hat = conv.forward(density.v);

    // continuum term: per-axis convolution of the density with sampled psi_a
    std::array<std::vector<double>, D> field;
    Grid<D> samples(meta);
    for (int a = 0; a < D; ++a) {
        for (std::size_t i = 0; i < samples.size(); ++i) {
            Vec<D> p = samples.x(i);
            Vec<D> d;
            for (int ax = 0; ax < D; ++ax)
                d[std::size_t(ax)] = min_image_coord(p[std::size_t(ax)], meta.box);
            samples.v[i] = ck.grad_phi_reg(d)[std::size_t(a)];
        }
        auto mult = conv.multiplier_from_samples(samples.v);
        for (std::size_t i = 0; i < mult.size(); ++i) {
            auto ids = detail::unflatten<D>(i, meta.m);
            if (ids[a] == meta.m / 2) mult[i] = 0.0;
        }
        std::vector<cplx> spec(rho_hat);
        for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= mult[i];
        field[std::size_t(a)] = conv.inverse_real(std::move(spec));
    }

    std::vector<std::size_t> idx = subset;
    if (idx.empty()) {
        idx.resize(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) idx[i] = i;
    }

    std::vector<double> h(idx.size(), 0.0);
    const double invn = 1.0 / double(xs.size());
    for (std::size_t s = 0; s < idx.size(); ++s) {
        std::size_t i = idx[s];
        Vec<D> emp{};
        for (std::size_t j = 0; j < xs.size(); ++j) {
            if (j == i) continue;
            Vec<D> d;
            for (int ax = 0; ax < D; ++ax)
                d[std::size_t(ax)] =
                    min_image_coord(xs[i][std::size_t(ax)] - xs[j][std::size_t(ax)], meta.box);
            Vec<D> g = ck.grad_phi_reg(d);
            for (int ax = 0; ax < D; ++ax) emp[std::size_t(ax)] += invn * g[std::size_t(ax)];
        }
        Vec<D> diff;
        for (int ax = 0; ax < D; ++ax)
            diff[std::size_t(ax)] =
                emp[std::size_t(ax)] -
                interp_catmull_rom<D>(meta, field[std::size_t(ax)], xs[i]);
        h[s] = norm<D>(diff);
    }
    return h;
}

}  // namespace mochi::particles
