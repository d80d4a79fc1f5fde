#pragma once

// Statistics taken on grid densities and particle ensembles: mollified
// empirical measures, mollified L2 errors, modulated energy, relative entropy
// and Fisher information, L1/CKP/super-additivity property checks, pooled
// kernel density estimates, and log-log rate fits.
//
// Conventions: all integrals are Riemann sums times h^D. Entropy integrands
// floor their log arguments at 1e-12 and report how sensitive the result is
// to that floor. Expectation-valued quantities return mean and standard error
// across replicas.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mochi/common.hpp"
#include "mochi/fft.hpp"
#include "mochi/grid.hpp"
#include "mochi/kernels.hpp"
#include "mochi/mesh.hpp"

namespace mochi::diagnostics {

inline constexpr double entropy_floor = 1e-12;

// ---------------------------------------------------------------------------
// Mollified empirical measures
// ---------------------------------------------------------------------------

// W^eta * mu_N on the grid: cubic-window deposit, then one spectral division
// by the discrete window symbol (exact at nodes, mass-exact) and
// multiplication by the kernel symbol.
template <int D>
class EmpiricalMollifier {
  public:
    EmpiricalMollifier(const GridMeta<D>& meta, const kernels::Mollifier<D>& mol)
        : meta_(meta), conv_(meta), mesh_(meta, MeshOrder::cubic) {
        if (meta.h() > mol.eta() / 4.0 + 1e-12)
            throw ConfigError("grid does not resolve the kernel (need h <= eta/4)");
        auto win = mesh_.window_hat(MeshDeconv::discrete);
        mult_ = conv_.multiplier([&](const Vec<D>& k, const std::array<int, D>& ids) -> cplx {
            std::size_t flat = 0;
            for (int a = 0; a < D; ++a) flat = flat * std::size_t(meta.m) + std::size_t(ids[a]);
            return {mol.w_hat(norm2<D>(k)) / win[flat], 0.0};
        });
        // gradient variant multipliers: ik_a What / window
        for (int a = 0; a < D; ++a)
            grad_mult_[std::size_t(a)] =
                conv_.multiplier([&](const Vec<D>& k, const std::array<int, D>& ids) -> cplx {
                    if (ids[a] == meta.m / 2) return {0.0, 0.0};
                    std::size_t flat = 0;
                    for (int ax = 0; ax < D; ++ax)
                        flat = flat * std::size_t(meta.m) + std::size_t(ids[ax]);
                    return {0.0, k[std::size_t(a)] * mol.w_hat(norm2<D>(k)) / win[flat]};
                });
        // field-side multipliers (no window: reference already lives on the grid)
        field_mult_ = conv_.multiplier(
            [&](const Vec<D>& k, const std::array<int, D>&) -> cplx {
                return {mol.w_hat(norm2<D>(k)), 0.0};
            });
        for (int a = 0; a < D; ++a)
            field_grad_mult_[std::size_t(a)] =
                conv_.multiplier([&](const Vec<D>& k, const std::array<int, D>& ids) -> cplx {
                    if (ids[a] == meta.m / 2) return {0.0, 0.0};
                    return {0.0, k[std::size_t(a)] * mol.w_hat(norm2<D>(k))};
                });
    }

    const GridMeta<D>& meta() const { return meta_; }

    // W^eta * mu_N
    Grid<D> density(const std::vector<Vec<D>>& xs, double time = 0) const {
        Grid<D> out(meta_, time);
        out.v = conv_.convolve(mesh_.deposit(xs), mult_);
        return out;
    }

    // W^eta * rho for a grid reference
    Grid<D> smooth_field(const Grid<D>& rho) const {
        Grid<D> out(meta_, rho.time);
        out.v = conv_.convolve(rho.v, field_mult_);
        return out;
    }

    // || W^eta*mu_N - W^eta*rho ||_{L2}^2
    double l2_error(const std::vector<Vec<D>>& xs, const Grid<D>& rho) const {
        if (rho.meta != meta_) throw ConfigError("reference grid mismatch");
        auto part = conv_.convolve(mesh_.deposit(xs), mult_);
        auto ref = conv_.convolve(rho.v, field_mult_);
        double s = 0;
        for (std::size_t i = 0; i < part.size(); ++i) {
            double d = part[i] - ref[i];
            s += d * d;
        }
        return s * std::pow(meta_.h(), D);
    }

    // gradient variant: sum_a || d_a W^eta*(mu_N - rho) ||_{L2}^2
    double l2_gradient_error(const std::vector<Vec<D>>& xs, const Grid<D>& rho) const {
        if (rho.meta != meta_) throw ConfigError("reference grid mismatch");
        auto dep = mesh_.deposit(xs);
        double s = 0;
        for (int a = 0; a < D; ++a) {
            auto part = conv_.convolve(dep, grad_mult_[std::size_t(a)]);
            auto ref = conv_.convolve(rho.v, field_grad_mult_[std::size_t(a)]);
            for (std::size_t i = 0; i < part.size(); ++i) {
                double d = part[i] - ref[i];
                s += d * d;
            }
        }
        return s * std::pow(meta_.h(), D);
    }

  private:
    GridMeta<D> meta_;
    Convolver<D> conv_;
    ParticleMesh<D> mesh_;
    std::vector<cplx> mult_;
    std::vector<cplx> field_mult_;
    std::array<std::vector<cplx>, D> grad_mult_;
    std::array<std::vector<cplx>, D> field_grad_mult_;
};

template <int D>
Grid<D> mollified_empirical(const std::vector<Vec<D>>& xs, const kernels::Mollifier<D>& mol,
                            const GridMeta<D>& meta, double time = 0) {
    return EmpiricalMollifier<D>(meta, mol).density(xs, time);
}

// Pooled kernel density estimate over replicas; bandwidth is the mollifier's.
template <int D>
Grid<D> kde_marginal(const std::vector<std::vector<Vec<D>>>& replicas,
                     const kernels::Mollifier<D>& mol, const GridMeta<D>& meta,
                     double time = 0) {
    if (replicas.empty()) throw ConfigError("kde needs at least one replica");
    EmpiricalMollifier<D> em(meta, mol);
    Grid<D> out(meta, time);
    for (const auto& xs : replicas) {
        Grid<D> one = em.density(xs, time);
        for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += one.v[i];
    }
    double inv = 1.0 / double(replicas.size());
    for (double& v : out.v) v *= inv;
    return out;
}

template <int D>
double l2_mollified_error(const std::vector<Vec<D>>& xs, const Grid<D>& reference,
                          const kernels::Mollifier<D>& mol) {
    return EmpiricalMollifier<D>(reference.meta, mol).l2_error(xs, reference);
}

// Field-level L2^2 distance (both inputs taken as-is).
template <int D>
double l2_field_error(const Grid<D>& a, const Grid<D>& b) {
    if (a.meta != b.meta) throw ConfigError("grid mismatch in l2 field error");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.v[i] - b.v[i];
        s += d * d;
    }
    return s * a.cell();
}

struct MeanSe {
    double mean = 0;
    double se = 0;
};

// Modulated energy: half the replica mean of mollified L2 errors.
inline MeanSe modulated_energy(const std::vector<double>& replica_values) {
    if (replica_values.size() < 2) throw ConfigError("modulated energy needs >= 2 replicas");
    double m = 0;
    for (double v : replica_values) m += v;
    m /= double(replica_values.size());
    double var = 0;
    for (double v : replica_values) var += (v - m) * (v - m);
    var /= double(replica_values.size() - 1);
    double se = std::sqrt(var / double(replica_values.size()));
    return {0.5 * m, 0.5 * se};
}

// ---------------------------------------------------------------------------
// Entropy-family diagnostics
// ---------------------------------------------------------------------------

template <int D>
void check_density_pair(const Grid<D>& p, const Grid<D>& q) {
    if (p.meta != q.meta) throw ConfigError("grid mismatch in entropy diagnostic");
    double mp = mass(p), mq = mass(q);
    if (std::abs(mp - 1.0) > 1e-4 || std::abs(mq - 1.0) > 1e-4)
        throw NormalizationError("densities must have unit mass (got " + std::to_string(mp) +
                                 ", " + std::to_string(mq) + ")");
}

template <int D>
double relative_entropy_floored(const Grid<D>& p, const Grid<D>& q, double floor) {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        double pi = std::max(p.v[i], floor);
        double qi = std::max(q.v[i], floor);
        s += p.v[i] * std::log(pi / qi);
    }
    return s * p.cell();
}

struct EntropyValue {
    double value = 0;
    double floor_sensitivity = 0;
};

template <int D>
EntropyValue relative_entropy(const Grid<D>& p, const Grid<D>& q) {
    check_density_pair(p, q);
    double v = relative_entropy_floored(p, q, entropy_floor);
    double v10 = relative_entropy_floored(p, q, entropy_floor / 10.0);
    return {v, std::abs(v - v10)};
}

template <int D>
double relative_fisher(const Grid<D>& p, const Grid<D>& q) {
    check_density_pair(p, q);
    const int m = p.meta.m;
    const double inv2h = 1.0 / (2.0 * p.h());
    std::vector<double> logratio(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        logratio[i] = std::log(std::max(p.v[i], entropy_floor) / std::max(q.v[i], entropy_floor));

    std::array<std::size_t, D> strides{};
    std::size_t st = 1;
    for (int a = D - 1; a >= 0; --a) {
        strides[std::size_t(a)] = st;
        st *= std::size_t(m);
    }
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        auto ids = detail::unflatten<D>(i, m);
        double g2 = 0;
        for (int a = 0; a < D; ++a) {
            long du = (ids[a] + 1) % m - ids[a];
            long dd = (ids[a] - 1 + m) % m - ids[a];
            auto up = std::size_t(long(i) + long(strides[std::size_t(a)]) * du);
            auto dn = std::size_t(long(i) + long(strides[std::size_t(a)]) * dd);
            double g = (logratio[up] - logratio[dn]) * inv2h;
            g2 += g * g;
        }
        s += p.v[i] * g2;
    }
    return s * p.cell();
}

template <int D>
double l1_distance(const Grid<D>& p, const Grid<D>& q) {
    check_density_pair(p, q);
    return l1_distance_fields(p, q);
}

struct EntropyReport {
    double relative_entropy = 0;
    double l1_distance = 0;
    double ckp_bound = 0;
    double relative_fisher = 0;
    double floor_sensitivity = 0;
    bool ckp_holds = false;
};

// Entropy, L1, the Csiszar-Kullback-Pinsker bound l1 <= sqrt(2H), and Fisher
// information for one density pair.
template <int D>
EntropyReport ckp_check(const Grid<D>& p, const Grid<D>& q) {
    EntropyReport r;
    auto h = relative_entropy(p, q);
    r.relative_entropy = h.value;
    r.floor_sensitivity = h.floor_sensitivity;
    r.l1_distance = l1_distance(p, q);
    r.ckp_bound = std::sqrt(2.0 * std::max(h.value, 0.0));
    r.relative_fisher = relative_fisher(p, q);
    r.ckp_holds = r.l1_distance <= r.ckp_bound + 1e-8;
    return r;
}

struct SuperadditivityReport {
    int k = 0;
    double h1 = 0;
    double hk = 0;         // entropy of the k-fold product pair on the product grid
    double identity_gap = 0;  // |hk - k h1|
    bool identity_holds = false;
    bool chain_holds = false;  // (1/N) H_N >= (1/2k) H_k with H_j = j H_1
};

// Product-measure super-additivity: on explicit product grids the k-fold
// entropy must equal k * H1, and the normalized chain (1/N)H_N >= (1/2k)H_k
// reduces to H1 >= H1/2. Explicit grids are only materialized as loop nests.
template <int D>
SuperadditivityReport superadditivity_check(const Grid<D>& p, const Grid<D>& q, int k,
                                            std::uint64_t n) {
    static_assert(D == 1, "product grids are built from one-dimensional factors");
    check_density_pair(p, q);
    if (k < 2 || k > 3)
        throw ResourceError("explicit product grids are limited to k in {2,3}");
    if (n < std::uint64_t(k)) throw ConfigError("need N >= k");

    SuperadditivityReport r;
    r.k = k;
    r.h1 = relative_entropy(p, q).value;

    const std::size_t m = p.size();
    const double cell = std::pow(p.cell(), k);
    double s = 0;
    if (k == 2) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                double pp = p.v[i] * p.v[j];
                double qq = q.v[i] * q.v[j];
                s += pp * std::log(std::max(pp, entropy_floor) / std::max(qq, entropy_floor));
            }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                double pij = p.v[i] * p.v[j];
                double qij = q.v[i] * q.v[j];
                for (std::size_t l = 0; l < m; ++l) {
                    double pp = pij * p.v[l];
                    double qq = qij * q.v[l];
                    s += pp *
                         std::log(std::max(pp, entropy_floor) / std::max(qq, entropy_floor));
                }
            }
    }
    r.hk = s * cell;
    r.identity_gap = std::abs(r.hk - double(k) * r.h1);
    r.identity_holds = r.identity_gap <= 1e-8 * std::max(1.0, std::abs(r.h1) * double(k));
    // with H_j = j H_1: (1/N) N H1 = H1 >= (1/(2k)) k H1 = H1/2 whenever H1 >= 0
    double lhs = r.h1;
    double rhs = 0.5 * r.h1;
    r.chain_holds = lhs >= rhs - 1e-12;
    return r;
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

struct RateFit {
    std::vector<std::pair<double, double>> observations;
    double slope = 0;
    double intercept = 0;
    double residual_rms = 0;
};

inline RateFit rate_fit(const std::vector<std::pair<double, double>>& obs) {
    if (obs.size() < 3) throw ConfigError("rate fit needs at least 3 observations");
    for (const auto& [x, y] : obs)
        if (!(x > 0) || !(y > 0))
            throw DomainError("rate fit needs strictly positive observations");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = double(obs.size());
    for (const auto& [x, y] : obs) {
        double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    RateFit fit;
    fit.observations = obs;
    double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-14) throw DomainError("rate fit is degenerate (equal parameters)");
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    double rss = 0;
    for (const auto& [x, y] : obs) {
        double r = std::log(y) - (fit.intercept + fit.slope * std::log(x));
        rss += r * r;
    }
    fit.residual_rms = std::sqrt(rss / n);
    return fit;
}

}  // namespace mochi::diagnostics
