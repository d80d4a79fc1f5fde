// End-to-end acceptance gates. Each criterion prints one pass/FAIL line; the
// binary exits non-zero when any selected criterion fails. Criteria are
// selected by number on the command line (no arguments runs all of them).
//
// Tolerances and study configurations are pinned here and in the study
// defaults; nothing adapts to the observed values.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mochi/diagnostics.hpp"
#include "mochi/experiments.hpp"
#include "mochi/particles.hpp"
#include "mochi/pde.hpp"

using namespace mochi;
namespace fs = std::filesystem;

namespace {

using experiments::StudyResult;
using config::ExperimentConfig;
using config::Study;

fs::path fresh_dir(const std::string& leaf) {
    fs::path p = fs::temp_directory_path() / "mochi_acceptance" / leaf;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

StudyResult run_study_at(ExperimentConfig cfg, const std::string& leaf) {
    cfg.out_dir = fresh_dir(leaf).string();
    return experiments::run_study(cfg);
}

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

// Append "name=value" (marking failures) for each requested gate; true when
// every requested gate exists and passes.
bool gates_pass(const StudyResult& res, const std::vector<std::string>& names,
                std::string& note) {
    bool ok = true;
    for (const auto& nm : names) {
        const experiments::Gate* g = nullptr;
        for (const auto& c : res.gates)
            if (c.name == nm) g = &c;
        if (!g) {
            ok = false;
            note += nm + "=missing ";
            continue;
        }
        ok = ok && g->pass;
        note += nm + "=" + fmt("%.3g", g->value) + (g->pass ? " " : "(FAIL) ");
    }
    return ok;
}

bool branches_ok(const StudyResult& res) {
    return io::RunManifest::load(res.dir).all_branches_ok();
}

// The chaos study feeds two criteria; run it once.
const StudyResult& chaos_study() {
    static StudyResult res = run_study_at(ExperimentConfig::defaults(Study::chaos_n_sweep),
                                          "chaos_n_sweep");
    return res;
}

// --- criterion bodies --------------------------------------------------------

bool kernel_identities(std::string& note) {
    bool ok = true;

    {  // quadrature identities at eta = 0.2
        kernels::Mollifier<1> mol(0.2);
        auto wf = [&](const Vec<1>& x) { return mol.w(x); };
        auto vf = [&](const Vec<1>& x) { return mol.v(x); };
        double w_mass = kernels::quad_box<1>(wf, 12.0 * mol.w_std());
        double v_mass = kernels::quad_box<1>(vf, 12.0 * mol.v_std());
        ok = ok && std::abs(w_mass - 1.0) < 1e-8 && std::abs(v_mass - 1.0) < 1e-8;
        note += "w_mass=" + fmt("%.1e", std::abs(w_mass - 1.0)) +
                " v_mass=" + fmt("%.1e", std::abs(v_mass - 1.0)) + " ";

        ok = ok && mol.grad_v(Vec<1>{0.0})[0] == 0.0;
        kernels::Mollifier<2> mol2(0.2);
        auto z2 = mol2.grad_v(Vec<2>{0.0, 0.0});
        ok = ok && z2[0] == 0.0 && z2[1] == 0.0;

        // second moment of V against 2 d eta^2 base_std^2
        double m2 = kernels::unit_sphere_area(1) * kernels::quad_radial([&](double r) {
            return r * r * mol.v(Vec<1>{r});
        }, 12.0 * mol.v_std());
        double m2_err = std::abs(m2 - mol.second_moment_v());
        ok = ok && m2_err < 1e-6 && std::abs(mol.second_moment_v() - 2.0 * 0.2 * 0.2) < 1e-15;
        note += "m2_err=" + fmt("%.1e", m2_err) + " ";

        // numerical self-convolution W*W against the closed-form V
        double worst = 0;
        for (double x : {0.0, 0.07, 0.19, 0.33, 0.5}) {
            double num = kernels::quad_box<1>([&](const Vec<1>& y) {
                return mol.w(y) * mol.w(Vec<1>{x - y[0]});
            }, 12.0 * mol.w_std(), 1e-10);
            worst = std::max(worst, std::abs(num - mol.v(Vec<1>{x})));
        }
        double num2 = kernels::quad_box<2>([&](const Vec<2>& y) {
            return mol2.w(y) * mol2.w(Vec<2>{0.1 - y[0], 0.2 - y[1]});
        }, 12.0 * mol2.w_std(), 1e-10);
        worst = std::max(worst, std::abs(num2 - mol2.v(Vec<2>{0.1, 0.2})));
        ok = ok && worst < 1e-6;
        note += "selfconv=" + fmt("%.1e", worst) + " ";
    }

    // runtime assumption checks across the pinned eta list
    auto res = run_study_at(ExperimentConfig::defaults(Study::kernel_verify), "kernel_verify");
    bool g = gates_pass(res, {"assumptions_pass"}, note);
    if (!res.pass) note += "study=FAIL ";
    return ok && g && res.pass;
}

bool mollification_taylor_rate(std::string& note) {
    GridMeta<1> meta{12.8, 1024};
    Grid<1> rho = gaussian_grid(meta, 1.0);
    Convolver<1> conv(meta);
    auto rho_hat = conv.forward(rho.v);
    auto ik = conv.gradient_multiplier(0);

    std::vector<cplx> grad_hat(rho_hat);
    for (std::size_t i = 0; i < grad_hat.size(); ++i) grad_hat[i] *= ik[i];
    auto grad_rho = conv.inverse_real(std::vector<cplx>(grad_hat));

    std::vector<std::pair<double, double>> obs;
    for (double eta : {0.4, 0.2, 0.1, 0.05}) {
        kernels::Mollifier<1> mol(eta);
        auto vm = conv.multiplier([&](const Vec<1>& k, const std::array<int, 1>&) -> cplx {
            return {mol.v_hat(norm2<1>(k)), 0.0};
        });
        std::vector<cplx> spec(grad_hat);
        for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= vm[i];
        auto smoothed = conv.inverse_real(std::move(spec));
        double sup = 0;
        for (std::size_t i = 0; i < smoothed.size(); ++i)
            sup = std::max(sup, std::abs(smoothed[i] - grad_rho[i]));
        obs.emplace_back(eta, sup);
    }
    auto fit = diagnostics::rate_fit(obs);
    note += "slope=" + fmt("%.3f", fit.slope) + " sup(0.05)=" + fmt("%.2e", obs.back().second) + " ";
    return fit.slope > 1.8 && fit.slope < 2.2;
}

bool eta_rate_gates(std::string& note) {
    auto res = run_study_at(ExperimentConfig::defaults(Study::pde_eta_sweep), "pde_eta_sweep");
    bool g = gates_pass(res, {"l1_eta_rate", "entropy_eta_rate", "l1_terminal_monotone"}, note);
    if (!res.pass) note += "study=FAIL ";
    return g && res.pass && branches_ok(res);
}

bool chaos_energy_gates(std::string& note) {
    const auto& res = chaos_study();
    return gates_pass(res, {"chaos_l2_rate", "chaos_l2_doubling"}, note) && branches_ok(res);
}

bool pooled_marginal_gates(std::string& note) {
    const auto& res = chaos_study();
    return gates_pass(res, {"marginal_l1_rate", "marginal_l1_decreasing"}, note) &&
           branches_ok(res);
}

bool diagnostic_oracles(std::string& note) {
    GridMeta<1> meta{25.6, 1024};
    auto bump = [&](double s, double shift) {
        double c = 12.8 + shift;
        auto g = make_grid<1>(meta, [&](const Vec<1>& x) {
            double d = min_image_coord(x[0] - c, meta.box);
            return std::exp(-0.5 * d * d / (s * s));
        });
        normalize(g);
        return g;
    };
    auto p = bump(1.0, 0.0);
    auto q = bump(1.0, 0.2);
    auto r = diagnostics::ckp_check(p, q);

    bool ok = std::abs(r.relative_entropy - 0.02) < 1e-9;
    ok = ok && std::abs(r.relative_fisher - 0.04) < 1e-8;
    ok = ok && std::abs(r.l1_distance - 0.15931134910811600) < 1e-4;
    ok = ok && r.ckp_holds && r.floor_sensitivity < 1e-9;
    note += "kl=" + fmt("%.6f", r.relative_entropy) + " fisher=" + fmt("%.6f", r.relative_fisher) +
            " l1=" + fmt("%.6f", r.l1_distance) + " ";

    {  // CKP and Gibbs nonnegativity over 1000 seeded random density pairs
        GridMeta<1> rm{12.8, 256};
        CounterRng rng(777);
        auto random_density = [&](std::uint64_t pair_id, std::uint32_t half) {
            auto u = [&](std::uint32_t slot) {
                auto pr = rng.uniform_pair(pair_id, half, slot / 2);
                return 2.0 * pr[slot % 2] - 1.0;
            };
            double a1 = u(0), b1 = u(1), a2 = u(2), b2 = u(3);
            auto g = make_grid<1>(rm, [&](const Vec<1>& x) {
                double t = 2.0 * pi * x[0] / rm.box;
                return std::exp(a1 * std::cos(t) + b1 * std::sin(t) +
                                a2 * std::cos(2.0 * t) + b2 * std::sin(2.0 * t));
            });
            normalize(g);
            return g;
        };
        int holds = 0;
        double min_h = std::numeric_limits<double>::infinity();
        for (std::uint64_t t = 0; t < 1000; ++t) {
            auto pt = random_density(t, 0);
            auto qt = random_density(t, 1);
            auto rep = diagnostics::ckp_check(pt, qt);
            if (rep.ckp_holds) ++holds;
            min_h = std::min(min_h, rep.relative_entropy);
            if (t % 100 == 0)  // identical pair: entropy may only dip by round-off
                min_h = std::min(min_h, diagnostics::relative_entropy(pt, pt).value);
        }
        ok = ok && holds == 1000 && min_h > -1e-9;
        note += "ckp_pairs=" + std::to_string(holds) + "/1000 min_H=" + fmt("%.1e", min_h) + " ";
    }

    GridMeta<1> small{12.8, 64};
    auto small_bump = [&](double s) {
        auto g = make_grid<1>(small, [&](const Vec<1>& x) {
            double d = min_image_coord(x[0] - 6.4, small.box);
            return std::exp(-0.5 * d * d / (s * s));
        });
        normalize(g);
        return g;
    };
    auto sup = diagnostics::superadditivity_check(small_bump(0.9), small_bump(1.1), 2, 100);
    ok = ok && sup.identity_holds && sup.chain_holds;
    note += "prod_gap=" + fmt("%.1e", sup.identity_gap) + " ";

    auto fit = diagnostics::rate_fit({{10.0, 1.0}, {100.0, 0.1}, {1000.0, 0.01}});
    ok = ok && std::abs(fit.slope + 1.0) < 1e-12;

    auto me = diagnostics::modulated_energy({1.0, 2.0, 3.0});
    ok = ok && std::abs(me.mean - 1.0) < 1e-15;
    return ok;
}

bool lln_rate_gate(std::string& note) {
    auto res = run_study_at(ExperimentConfig::defaults(Study::lln_study), "lln_study");
    bool g = gates_pass(res, {"lln_rate"}, note);
    if (!res.pass) note += "study=FAIL ";
    return g && res.pass && branches_ok(res);
}

bool coulomb_deviation_gates(std::string& note) {
    auto res =
        run_study_at(ExperimentConfig::defaults(Study::coulomb_deviation), "coulomb_deviation");
    bool g = gates_pass(res,
                        {"deviation_prob_monotone", "deviation_prob_final",
                         "marginal_gap_decreasing"},
                        note);
    if (!res.pass) note += "study=FAIL ";
    return g && res.pass && branches_ok(res);
}

bool worker_determinism(std::string& note) {
    auto micro = [&](int workers, const std::string& leaf) {
        auto cfg = ExperimentConfig::defaults(Study::chaos_n_sweep);
        cfg.n_list = {500, 1000};
        cfg.replicas = 4;
        cfg.horizon = 0.05;
        cfg.obs_dt = 0.025;
        cfg.workers = workers;
        return run_study_at(cfg, leaf);
    };
    auto a = micro(1, "determinism_w1");
    auto b = micro(8, "determinism_w8");
    if (!branches_ok(a) || !branches_ok(b)) {
        note += "micro study branch failed ";
        return false;
    }
    bool ok = true;
    for (const char* f : {"diagnostics.csv", "gates.json", "rate_fits.json"}) {
        bool same = io::read_bytes(a.dir / f) == io::read_bytes(b.dir / f);
        ok = ok && same;
        note += std::string(f) + (same ? "=same " : "=DIFFERS ");
    }
    return ok;
}

bool mesh_force_agreement(std::string& note) {
    // h = 25.6/512 = 0.05 = eta/4: the coarsest spacing the mesh force accepts.
    GridMeta<1> meta{25.6, 512};
    kernels::Mollifier<1> mol(0.2);
    const std::size_t n = 1000;
    CounterRng rng(12345);
    std::vector<Vec<1>> xs(n);
    for (std::size_t i = 0; i < n; ++i)
        xs[i][0] = wrap_coord(12.8 + 0.8 * rng.normals<1>(0, i)[0], meta.box);

    auto direct = particles::drift_pairwise<1>(xs, meta.box, mol, 1.0);
    particles::MeshForce<1> mf(meta, mol, 1.0);
    auto fast = mf(xs);
    double worst = 0, sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        worst = std::max(worst, std::abs(fast[i][0] - direct[i][0]));
        sum += fast[i][0];
    }
    bool ok = worst < 1e-6 && std::abs(sum) < 1e-10;
    note += "pme_sup=" + fmt("%.2e", worst) + " pme_sum=" + fmt("%.1e", std::abs(sum)) + " ";

    // informational only: the smoothed-coulomb symbol is band-limited by the
    // mesh, so the pointwise agreement is far looser than the pme kernel's
    GridMeta<2> meta2{12.8, 128};
    kernels::CoulombKernel<2> ck(0.5);
    std::vector<Vec<2>> ys(500);
    for (std::size_t i = 0; i < ys.size(); ++i) {
        auto z = rng.normals<2>(1, i);
        ys[i][0] = wrap_coord(6.4 + 0.5 * z[0], meta2.box);
        ys[i][1] = wrap_coord(6.4 + 0.5 * z[1], meta2.box);
    }
    auto cd = particles::drift_pairwise<2>(ys, meta2.box, ck, -1.0, 1.0);
    particles::MeshForce<2> mc(meta2, ck, -1.0, 1.0);
    auto cf = mc(ys);
    double cworst = 0;
    for (std::size_t i = 0; i < ys.size(); ++i)
        for (int a = 0; a < 2; ++a)
            cworst = std::max(cworst, std::abs(cf[i][std::size_t(a)] - cd[i][std::size_t(a)]));
    note += "coulomb_sup=" + fmt("%.2e", cworst) + " (informational)";
    return ok;
}

struct Criterion {
    int id;
    const char* label;
    std::function<bool(std::string&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "smoothing kernel identities", kernel_identities},
        {2, "mollification taylor rate", mollification_taylor_rate},
        {3, "eta convergence gates", eta_rate_gates},
        {4, "chaos n-sweep energy gates", chaos_energy_gates},
        {5, "pooled marginal gates", pooled_marginal_gates},
        {6, "diagnostic oracles", diagnostic_oracles},
        {7, "field lln rate gate", lln_rate_gate},
        {8, "coulomb deviation gates", coulomb_deviation_gates},
        {9, "worker determinism", worker_determinism},
        {10, "mesh force vs direct sums", mesh_force_agreement},
    };

    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    bool all_ok = true;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        std::string note;
        bool ok = false;
        auto t0 = std::chrono::steady_clock::now();
        try {
            ok = c.run(note);
        } catch (const std::exception& e) {
            note += std::string("exception: ") + e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%2d] %-34s %s %7.1fs  %s\n", c.id, c.label, ok ? "pass" : "FAIL", secs,
                    note.c_str());
        std::fflush(stdout);
        all_ok = all_ok && ok;
    }
    return all_ok ? 0 : 1;
}
