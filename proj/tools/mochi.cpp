// Command-line driver for the study suite. Each study subcommand starts from
// the pinned defaults, optionally loads a TOML config, applies flag overrides,
// runs, and exits nonzero if any gate fails.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mochi/experiments.hpp"

using mochi::config::ExperimentConfig;
using mochi::config::Study;

namespace {

struct CommonOpts {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    int workers = 0;
    bool dry_run = false;
};

void add_common(CLI::App* sub, CommonOpts& o) {
    sub->add_option("--config", o.config, "TOML config file (defaults are built in)");
    sub->add_option("--out", o.out, "artifact directory");
    sub->add_option("--seed", o.seed, "master seed override");
    sub->add_option("--workers", o.workers, "replica worker threads");
    sub->add_flag("--dry-run", o.dry_run, "print the materialized config and exit");
}

ExperimentConfig load_config(Study st, const CommonOpts& o) {
    ExperimentConfig cfg;
    if (o.config.empty()) {
        cfg = ExperimentConfig::defaults(st);
    } else {
        std::ifstream in(o.config);
        if (!in) throw mochi::ConfigError("cannot open config file " + o.config);
        std::ostringstream text;
        text << in.rdbuf();
        cfg = ExperimentConfig::from_toml(mochi::config::parse_toml(text.str()));
        if (cfg.study != st)
            throw mochi::ConfigError(std::string("config is for study '") +
                                     mochi::config::study_name(cfg.study) +
                                     "', not for this subcommand");
    }
    if (!o.out.empty()) cfg.out_dir = o.out;
    if (o.seed != 0) cfg.master_seed = o.seed;
    if (o.workers != 0) cfg.workers = o.workers;
    return cfg;
}

int run_study_cmd(Study st, const CommonOpts& o) {
    ExperimentConfig cfg = load_config(st, o);
    cfg.materialize();
    if (o.dry_run) {
        std::fputs(cfg.to_toml().c_str(), stdout);
        return 0;
    }
    auto res = mochi::experiments::run_study(cfg);
    for (const auto& g : res.gates)
        std::printf("gate %-32s %s\n", g.name.c_str(), g.pass ? "pass" : "FAIL");
    std::printf("artifacts in %s\n", res.dir.string().c_str());
    std::printf("RESULT %s\n", res.pass ? "PASS" : "FAIL");
    return res.pass ? 0 : 1;
}

struct PdeOpts {
    std::string equation = "vpme";
    int dim = 1;
    double eta = 0.2;
    double box = 12.8;
    int m = 512;
    double s0 = 1.0;
    double t_end = 1.0;
    double dt = 0.0;
    double sigma = 0.5;
    double kappa = -1.0;
    std::string out;
};

template <int D>
int solve_pde_dim(const PdeOpts& o) {
    using namespace mochi;
    GridMeta<D> meta{o.box, o.m};
    Grid<D> rho0 = gaussian_grid(meta, o.s0);
    pde::PdeConfig<D> pc;
    pc.meta = meta;
    pc.t_end = o.t_end;
    pc.sigma = o.sigma;
    pc.kappa = o.kappa;
    double maxrho = max_value(rho0);
    pc.dt = o.dt > 0 ? o.dt : 0.18 * meta.h() * meta.h() / (1.0 + 1.5 * maxrho);
    // align so the horizon is an integer number of steps
    long steps = long(std::ceil(o.t_end / pc.dt));
    pc.dt = o.t_end / double(steps);
    pc.obs_times = {o.t_end};

    pde::Solution<D> sol;
    if (o.equation == "vpme") {
        sol = pde::solve_vpme(rho0, pc);
    } else if (o.equation == "intermediate") {
        kernels::Mollifier<D> mol(o.eta);
        sol = pde::solve_intermediate(rho0, pc, mol);
    } else if (o.equation == "coulomb") {
        if constexpr (D < 2) {
            throw ConfigError("coulomb drift needs --dim 2");
        } else {
            kernels::CoulombKernel<D> ck(o.eta);
            sol = pde::solve_coulomb_drift(rho0, pc, ck);
        }
    } else {
        throw ConfigError("unknown equation '" + o.equation +
                          "' (vpme, intermediate, coulomb)");
    }
    const Grid<D>& g = sol.at(o.t_end);
    std::printf("equation %s  dim %d  m %d  dt %.3e  steps %ld\n", o.equation.c_str(), D, o.m,
                pc.dt, sol.steps);
    std::printf("mass %.15f  min %.3e  max %.6f  clipped %.3e\n", mass(g), min_value(g),
                max_value(g), sol.clipped_mass);
    if (!o.out.empty()) {
        io::save_grid(std::filesystem::path(o.out), g);
        std::printf("saved %s (+.json)\n", o.out.c_str());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moderately interacting particle systems: studies and diagnostics"};
    app.require_subcommand(1);
    int rc = 0;

    CommonOpts kv, se, sn, cd, ll;
    auto bind = [&](const char* name, const char* desc, Study st, CommonOpts& o) {
        auto* sub = app.add_subcommand(name, desc);
        add_common(sub, o);
        sub->callback([&o, st, &rc] { rc = run_study_cmd(st, o); });
        return sub;
    };
    bind("verify-kernels", "quadrature checks of the smoothing kernel", Study::kernel_verify, kv);
    bind("sweep-eta", "limit equation vs smoothed equation, rates in eta", Study::pde_eta_sweep,
         se);
    bind("sweep-n", "coupled particle system vs its density, rates in N", Study::chaos_n_sweep,
         sn);
    bind("coulomb", "lockstep deviation study for the coulomb drift", Study::coulomb_deviation,
         cd);
    bind("lln", "empirical-field law of large numbers at the terminal time", Study::lln_study,
         ll);

    PdeOpts po;
    auto* solve = app.add_subcommand("solve-pde", "run one density equation and print summary");
    solve->add_option("--equation", po.equation, "vpme | intermediate | coulomb");
    solve->add_option("--dim", po.dim, "spatial dimension (1 or 2)")->check(CLI::Range(1, 2));
    solve->add_option("--eta", po.eta, "kernel width");
    solve->add_option("--box", po.box, "periodic box length");
    solve->add_option("--m", po.m, "grid points per axis (power of two)");
    solve->add_option("--s0", po.s0, "initial gaussian std");
    solve->add_option("--t-end", po.t_end, "horizon");
    solve->add_option("--dt", po.dt, "time step (0 = derive from stability)");
    solve->add_option("--sigma", po.sigma, "diffusivity (coulomb)");
    solve->add_option("--kappa", po.kappa, "interaction sign (coulomb)");
    solve->add_option("--out", po.out, "save terminal snapshot here (.bin)");
    solve->callback([&po, &rc] {
        rc = po.dim == 1 ? solve_pde_dim<1>(po) : solve_pde_dim<2>(po);
    });

    std::string report_dir = "out";
    auto* rep = app.add_subcommand("report", "verify artifacts and render gate table");
    rep->add_option("--dir", report_dir, "artifact directory");
    rep->callback([&report_dir, &rc] { rc = mochi::experiments::report(report_dir); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return rc;
}
