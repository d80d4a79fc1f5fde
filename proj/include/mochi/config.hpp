#pragma once

// Study configuration. Files use a small TOML subset: [section] tables,
// key = value with strings, numbers, booleans, and flat arrays, # comments.
// Parsed values go through a schema check (unknown keys rejected, types
// validated) and every derived default is materialized back into the stored
// config so results never depend on hidden values.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mochi/common.hpp"
#include "mochi/kernels.hpp"

namespace mochi::config {

// --- TOML subset -------------------------------------------------------------

struct TomlValue {
    enum class Kind { string, number, boolean, array };
    Kind kind = Kind::string;
    std::string str;
    double num = 0;
    bool bl = false;
    std::vector<TomlValue> arr;

    static TomlValue make_string(std::string s) {
        TomlValue v;
        v.kind = Kind::string;
        v.str = std::move(s);
        return v;
    }
    static TomlValue make_number(double d) {
        TomlValue v;
        v.kind = Kind::number;
        v.num = d;
        return v;
    }
    static TomlValue make_bool(bool b) {
        TomlValue v;
        v.kind = Kind::boolean;
        v.bl = b;
        return v;
    }
};

// Keys are flattened as "section.key".
using TomlTable = std::map<std::string, TomlValue>;

namespace detail {

inline std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Remove a trailing comment, respecting quoted strings.
inline std::string drop_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

inline TomlValue parse_scalar(const std::string& tok, int line) {
    if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"')
        return TomlValue::make_string(tok.substr(1, tok.size() - 2));
    if (tok == "true") return TomlValue::make_bool(true);
    if (tok == "false") return TomlValue::make_bool(false);
    char* end = nullptr;
    double d = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        throw ConfigError("config line " + std::to_string(line) + ": cannot parse value '" +
                          tok + "'");
    return TomlValue::make_number(d);
}

inline TomlValue parse_value(const std::string& raw, int line) {
    std::string v = strip(raw);
    if (v.empty()) throw ConfigError("config line " + std::to_string(line) + ": empty value");
    if (v.front() == '[') {
        if (v.back() != ']')
            throw ConfigError("config line " + std::to_string(line) + ": unterminated array");
        TomlValue out;
        out.kind = TomlValue::Kind::array;
        std::string body = v.substr(1, v.size() - 2);
        std::string tok;
        bool quoted = false;
        for (char c : body) {
            if (c == '"') quoted = !quoted;
            if (c == ',' && !quoted) {
                if (!strip(tok).empty()) out.arr.push_back(parse_scalar(strip(tok), line));
                tok.clear();
            } else {
                tok += c;
            }
        }
        if (!strip(tok).empty()) out.arr.push_back(parse_scalar(strip(tok), line));
        return out;
    }
    return parse_scalar(v, line);
}

}  // namespace detail

inline TomlTable parse_toml(const std::string& text) {
    TomlTable table;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = detail::strip(detail::drop_comment(raw));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError("config line " + std::to_string(line) +
                                  ": unterminated section header");
            section = detail::strip(s.substr(1, s.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(line) + ": empty section name");
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line) + ": expected key = value");
        std::string key = detail::strip(s.substr(0, eq));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line) + ": empty key");
        std::string full = section.empty() ? key : section + "." + key;
        if (table.count(full))
            throw ConfigError("config line " + std::to_string(line) + ": duplicate key '" +
                              full + "'");
        table[full] = detail::parse_value(s.substr(eq + 1), line);
    }
    return table;
}

// --- experiment configuration -------------------------------------------------

enum class Study { kernel_verify, pde_eta_sweep, chaos_n_sweep, coulomb_deviation, lln_study };

inline const char* study_name(Study s) {
    switch (s) {
        case Study::kernel_verify: return "kernel_verify";
        case Study::pde_eta_sweep: return "pde_eta_sweep";
        case Study::chaos_n_sweep: return "chaos_n_sweep";
        case Study::coulomb_deviation: return "coulomb_deviation";
        case Study::lln_study: return "lln_study";
    }
    throw ConfigError("unknown study");
}

inline Study study_from_name(const std::string& s) {
    for (Study st : {Study::kernel_verify, Study::pde_eta_sweep, Study::chaos_n_sweep,
                     Study::coulomb_deviation, Study::lln_study})
        if (s == study_name(st)) return st;
    throw ConfigError("unknown study '" + s + "'");
}

struct ExperimentConfig {
    Study study = Study::kernel_verify;
    int dim = 1;
    kernels::Regime regime = kernels::Regime::pme;
    double beta = 0.15;
    std::vector<std::uint64_t> n_list;
    int replicas = 2;
    double horizon = 1.0;
    double box = 25.6;
    int grid_m = 512;
    double s0 = 0.5;
    double sigma = 0.5;   // coulomb linear diffusivity
    double kappa = -1.0;  // coulomb sign
    double alpha = 0.3;   // deviation threshold exponent
    std::vector<double> eta_list;
    std::uint64_t master_seed = 20260814;
    std::string out_dir = "out";
    int workers = 1;
    // materialized derived values (0 = derive during materialize())
    double dt_particle = 0;
    double dt_pde = 0;
    double obs_dt = 0;
    int lln_subset = 32;

    double h() const { return box / grid_m; }

    double eta_of(std::uint64_t n) const {
        return kernels::eta_from_n(n, beta, dim, regime);
    }

    bool needs_particles() const {
        return study == Study::chaos_n_sweep || study == Study::coulomb_deviation ||
               study == Study::lln_study;
    }

    // Fill every derived default so the stored config is self-contained.
    void materialize() {
        if (obs_dt <= 0) obs_dt = horizon / 10.0;
        if (needs_particles()) {
            if (n_list.empty()) throw ConfigError("n_list must not be empty");
            double eta_min = eta_of(*std::max_element(n_list.begin(), n_list.end()));
            if (dt_particle <= 0)
                dt_particle = std::min(eta_min * eta_min / 4.0, 1e-3 * horizon);
            // align: obs_dt and horizon must be whole numbers of particle steps
            dt_particle = obs_dt / std::ceil(obs_dt / dt_particle - 1e-12);
        }
        if (dt_pde <= 0) {
            // explicit-flux stability at the initial peak with headroom for growth
            double peak = std::pow(2.0 * pi * s0 * s0, -0.5 * dim);
            double bound = 0.2 * h() * h() / (1.0 + 1.5 * peak);
            double base = needs_particles() ? dt_particle : obs_dt;
            dt_pde = base / std::ceil(base / bound - 1e-12);
        }
    }

    void validate() const {
        kernels::ScalingLaw law{beta, dim, regime};  // checks beta range and dim
        (void)law;
        if (grid_m <= 0 || (grid_m & (grid_m - 1)) != 0)
            throw ConfigError("grid_m must be a power of two");
        if (!(box > 0) || !(s0 > 0) || !(horizon > 0))
            throw ConfigError("box, s0, horizon must be positive");
        if (workers < 1) throw ConfigError("workers must be >= 1");
        if (study != Study::kernel_verify && dt_pde <= 0)
            throw ConfigError("config not materialized (dt_pde unset)");
        if (study == Study::pde_eta_sweep) {
            if (eta_list.size() < 3) throw ConfigError("eta sweep needs >= 3 eta values");
            for (double e : eta_list)
                if (h() > e / 4.0 + 1e-12)
                    throw ConfigError("grid does not resolve eta=" + std::to_string(e) +
                                      " (need h <= eta/4)");
        }
        if (needs_particles()) {
            if (replicas < 2) throw ConfigError("expectation studies need replicas >= 2");
            if (n_list.empty()) throw ConfigError("n_list must not be empty");
            for (auto n : n_list) {
                double e = eta_of(n);
                if (h() > e / 4.0 + 1e-12)
                    throw ConfigError("grid does not resolve eta(N=" + std::to_string(n) +
                                      ")=" + std::to_string(e));
                if (e > box / 8.0)
                    throw ConfigError("eta(N=" + std::to_string(n) + ") exceeds box/8");
            }
            double steps = obs_dt / dt_particle;
            if (std::abs(steps - std::round(steps)) > 1e-9)
                throw ConfigError("obs_dt must be a whole number of particle steps");
            double sub = dt_particle / dt_pde;
            if (std::abs(sub - std::round(sub)) > 1e-9)
                throw ConfigError("dt_particle must be a whole number of pde steps");
        }
        if (study == Study::coulomb_deviation || study == Study::lln_study) {
            if (dim < 2) throw ConfigError("coulomb studies need dim >= 2");
        }
    }

    // Pinned per-study defaults; these are the configurations the acceptance
    // gates run with.
    static ExperimentConfig defaults(Study s) {
        ExperimentConfig c;
        c.study = s;
        switch (s) {
            case Study::kernel_verify:
                c.dim = 1;
                c.regime = kernels::Regime::pme;
                c.beta = 0.15;
                break;
            case Study::pde_eta_sweep:
                c.dim = 1;
                c.regime = kernels::Regime::pme;
                c.beta = 0.15;
                c.box = 12.8;
                c.grid_m = 1024;
                c.s0 = 1.0;
                c.horizon = 1.0;
                c.eta_list = {0.4, 0.2, 0.1, 0.05};
                c.dt_pde = 2e-5;
                break;
            case Study::chaos_n_sweep:
                c.dim = 1;
                c.regime = kernels::Regime::pme;
                c.beta = 0.15;
                c.box = 25.6;
                c.grid_m = 512;
                c.s0 = 0.5;
                c.horizon = 0.5;
                c.n_list = {500, 1000, 2000, 4000, 8000, 16000};
                c.replicas = 20;
                break;
            case Study::coulomb_deviation:
                c.dim = 2;
                c.regime = kernels::Regime::coulomb;
                c.beta = 0.2;
                c.box = 12.8;
                c.grid_m = 128;
                c.s0 = 0.35;
                c.horizon = 0.5;
                c.kappa = -1.0;
                c.alpha = 0.3;
                c.n_list = {1000, 2000, 4000, 8000};
                c.replicas = 50;
                break;
            case Study::lln_study:
                c.dim = 2;
                c.regime = kernels::Regime::coulomb;
                c.beta = 0.2;
                c.box = 12.8;
                c.grid_m = 256;
                c.s0 = 0.35;
                c.horizon = 0.1;
                c.n_list = {1000, 2000, 4000, 8000, 16000, 32000};
                c.replicas = 100;
                break;
        }
        c.materialize();
        return c;
    }

    static ExperimentConfig from_toml(const TomlTable& t);
    std::string to_toml() const;

    std::uint64_t hash() const { return fnv1a(to_toml()); }
};

namespace detail {

inline double get_num(const TomlTable& t, const std::string& key, int line_hint = 0) {
    (void)line_hint;
    auto it = t.find(key);
    if (it == t.end()) throw ConfigError("missing config key '" + key + "'");
    if (it->second.kind != TomlValue::Kind::number)
        throw ConfigError("config key '" + key + "' must be a number");
    return it->second.num;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_toml(const TomlTable& t) {
    static const std::vector<std::string> known = {
        "study.name",      "study.dim",        "study.regime",   "study.beta",
        "study.horizon",   "study.master_seed", "study.workers",  "study.out_dir",
        "grid.box",        "grid.m",           "particles.n_list", "particles.replicas",
        "particles.s0",    "particles.dt",     "particles.lln_subset",
        "pde.dt",          "pde.sigma",        "pde.kappa",
        "sweep.eta_list",  "sweep.alpha",      "observe.dt"};
    for (const auto& [k, v] : t) {
        (void)v;
        bool ok = false;
        for (const auto& kk : known) ok = ok || kk == k;
        if (!ok) throw ConfigError("unknown config key '" + k + "'");
    }

    auto it = t.find("study.name");
    if (it == t.end() || it->second.kind != TomlValue::Kind::string)
        throw ConfigError("config needs study.name (string)");
    ExperimentConfig c = defaults(study_from_name(it->second.str));

    auto opt_num = [&](const std::string& key, double& dst) {
        auto f = t.find(key);
        if (f != t.end()) dst = detail::get_num(t, key);
    };
    auto opt_int = [&](const std::string& key, int& dst) {
        auto f = t.find(key);
        if (f != t.end()) dst = int(std::llround(detail::get_num(t, key)));
    };

    if (auto f = t.find("study.regime"); f != t.end()) {
        if (f->second.kind != TomlValue::Kind::string)
            throw ConfigError("study.regime must be a string");
        if (f->second.str == "pme")
            c.regime = kernels::Regime::pme;
        else if (f->second.str == "coulomb")
            c.regime = kernels::Regime::coulomb;
        else
            throw ConfigError("study.regime must be 'pme' or 'coulomb'");
    }
    opt_int("study.dim", c.dim);
    opt_num("study.beta", c.beta);
    opt_num("study.horizon", c.horizon);
    if (auto f = t.find("study.master_seed"); f != t.end())
        c.master_seed = std::uint64_t(std::llround(detail::get_num(t, "study.master_seed")));
    opt_int("study.workers", c.workers);
    if (auto f = t.find("study.out_dir"); f != t.end()) {
        if (f->second.kind != TomlValue::Kind::string)
            throw ConfigError("study.out_dir must be a string");
        c.out_dir = f->second.str;
    }
    opt_num("grid.box", c.box);
    opt_int("grid.m", c.grid_m);
    if (auto f = t.find("particles.n_list"); f != t.end()) {
        if (f->second.kind != TomlValue::Kind::array)
            throw ConfigError("particles.n_list must be an array");
        c.n_list.clear();
        for (const auto& v : f->second.arr) {
            if (v.kind != TomlValue::Kind::number || v.num < 2)
                throw ConfigError("particles.n_list entries must be numbers >= 2");
            c.n_list.push_back(std::uint64_t(std::llround(v.num)));
        }
    }
    opt_int("particles.replicas", c.replicas);
    opt_num("particles.s0", c.s0);
    opt_num("particles.dt", c.dt_particle);
    opt_int("particles.lln_subset", c.lln_subset);
    opt_num("pde.dt", c.dt_pde);
    opt_num("pde.sigma", c.sigma);
    opt_num("pde.kappa", c.kappa);
    if (auto f = t.find("sweep.eta_list"); f != t.end()) {
        if (f->second.kind != TomlValue::Kind::array)
            throw ConfigError("sweep.eta_list must be an array");
        c.eta_list.clear();
        for (const auto& v : f->second.arr) {
            if (v.kind != TomlValue::Kind::number || !(v.num > 0))
                throw ConfigError("sweep.eta_list entries must be positive numbers");
            c.eta_list.push_back(v.num);
        }
    }
    opt_num("sweep.alpha", c.alpha);
    opt_num("observe.dt", c.obs_dt);

    c.materialize();
    c.validate();
    return c;
}

inline std::string ExperimentConfig::to_toml() const {
    std::ostringstream out;
    auto num = [](double v) {
        std::ostringstream s;
        s.precision(17);
        s << v;
        return s.str();
    };
    out << "[study]\n";
    out << "name = \"" << study_name(study) << "\"\n";
    out << "dim = " << dim << "\n";
    out << "regime = \"" << kernels::regime_name(regime) << "\"\n";
    out << "beta = " << num(beta) << "\n";
    out << "horizon = " << num(horizon) << "\n";
    out << "master_seed = " << master_seed << "\n";
    out << "workers = " << workers << "\n";
    out << "out_dir = \"" << out_dir << "\"\n\n";
    out << "[grid]\n";
    out << "box = " << num(box) << "\n";
    out << "m = " << grid_m << "\n\n";
    out << "[particles]\n";
    out << "n_list = [";
    for (std::size_t i = 0; i < n_list.size(); ++i) out << (i ? ", " : "") << n_list[i];
    out << "]\n";
    out << "replicas = " << replicas << "\n";
    out << "s0 = " << num(s0) << "\n";
    out << "dt = " << num(dt_particle) << "\n";
    out << "lln_subset = " << lln_subset << "\n\n";
    out << "[pde]\n";
    out << "dt = " << num(dt_pde) << "\n";
    out << "sigma = " << num(sigma) << "\n";
    out << "kappa = " << num(kappa) << "\n\n";
    out << "[sweep]\n";
    out << "eta_list = [";
    for (std::size_t i = 0; i < eta_list.size(); ++i) out << (i ? ", " : "") << num(eta_list[i]);
    out << "]\n";
    out << "alpha = " << num(alpha) << "\n\n";
    out << "[observe]\n";
    out << "dt = " << num(obs_dt) << "\n";
    return out.str();
}

}  // namespace mochi::config
