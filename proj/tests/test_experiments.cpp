#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <vector>

#include "mochi/experiments.hpp"

using namespace mochi;
using namespace mochi::experiments;

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& leaf) {
    auto p = fs::temp_directory_path() / "mochi_exp_tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p.parent_path());
    return p;
}

ExperimentConfig micro_chaos(std::vector<std::uint64_t> ns, int replicas, const fs::path& dir) {
    auto cfg = ExperimentConfig::defaults(config::Study::chaos_n_sweep);
    cfg.n_list = std::move(ns);
    cfg.replicas = replicas;
    cfg.horizon = 0.05;
    cfg.obs_dt = 0.025;
    cfg.out_dir = dir.string();
    return cfg;
}

std::vector<char> slurp(const fs::path& p) { return io::read_bytes(p); }

}  // namespace

TEST_CASE("task pool isolates failures by slot", "[experiments]") {
    std::vector<int> hits(8, 0);
    auto outs = run_tasks(3, 8, [&](std::size_t i) {
        hits[i] = int(i) + 1;
        if (i == 5) throw SchemeError("slot five exploded");
    });
    REQUIRE(outs.size() == 8);
    for (std::size_t i = 0; i < outs.size(); ++i) {
        CHECK(hits[i] == int(i) + 1);
        CHECK(outs[i].ok == (i != 5));
    }
    REQUIRE(first_error(outs).has_value());
    CHECK(*first_error(outs) == "slot five exploded");

    auto serial = run_tasks(1, 3, [&](std::size_t) {});
    CHECK_FALSE(first_error(serial).has_value());
}

TEST_CASE("observation grids span the horizon evenly", "[experiments]") {
    auto cfg = ExperimentConfig::defaults(config::Study::chaos_n_sweep);
    auto obs = obs_grid(cfg);
    REQUIRE(obs.size() == 11);
    CHECK(obs.front() == 0.0);
    CHECK(obs.back() == Catch::Approx(0.5));
    CHECK(obs[1] == Catch::Approx(0.05));
    CHECK(eta_label(0.05) == "0.05");
}

TEST_CASE("kernel study writes a verifiable artifact directory", "[experiments]") {
    auto dir = scratch("kv");
    auto cfg = ExperimentConfig::defaults(config::Study::kernel_verify);
    cfg.out_dir = dir.string();

    auto res = run_study(cfg);
    CHECK(res.pass);
    CHECK(res.dir == dir);
    for (const char* f : {"config.toml", "gates.json", "rate_fits.json", "manifest.json",
                          "assumption_report.json"})
        CHECK(fs::exists(dir / f));

    REQUIRE_FALSE(res.gates.empty());
    CHECK(res.gates[0].name == "assumptions_pass");
    CHECK(res.gates[0].pass);

    CHECK(report(dir.string()) == 0);

    // any byte flipped in a tracked artifact must fail the integrity check
    {
        std::ofstream out(dir / "gates.json", std::ios::app);
        out << " ";
    }
    CHECK(report(dir.string()) == 2);
}

TEST_CASE("single-point sweeps fail their rate gates honestly", "[experiments]") {
    auto dir = scratch("single_n");
    auto cfg = micro_chaos({500}, 2, dir);
    auto res = run_study(cfg);
    CHECK_FALSE(res.pass);

    bool found = false;
    for (const auto& g : res.gates)
        if (g.name == "chaos_l2_rate") {
            found = true;
            CHECK_FALSE(g.pass);
            CHECK(g.note == "insufficient points");
        }
    CHECK(found);
    CHECK(res.fits.empty());

    auto manifest = io::RunManifest::load(dir);
    CHECK(manifest.all_branches_ok());  // the runs succeeded; only the fits starved
    REQUIRE_FALSE(manifest.notes.empty());
    CHECK(manifest.notes[0].find("insufficient points") != std::string::npos);
}

TEST_CASE("artifacts are byte-identical across worker counts", "[experiments]") {
    auto dir1 = scratch("det_w1");
    auto dir2 = scratch("det_w2");
    auto c1 = micro_chaos({500, 1000}, 4, dir1);
    c1.workers = 1;
    auto c2 = micro_chaos({500, 1000}, 4, dir2);
    c2.workers = 2;

    auto r1 = run_study(c1);
    auto r2 = run_study(c2);
    REQUIRE(io::RunManifest::load(dir1).all_branches_ok());
    REQUIRE(io::RunManifest::load(dir2).all_branches_ok());

    for (const char* f : {"diagnostics.csv", "gates.json", "rate_fits.json"}) {
        CAPTURE(f);
        CHECK(slurp(dir1 / f) == slurp(dir2 / f));
    }
    CHECK(r1.gates.size() == r2.gates.size());
}

TEST_CASE("unsupported dimensions fail the study branch", "[experiments]") {
    auto dir = scratch("dim3");
    auto cfg = ExperimentConfig::defaults(config::Study::kernel_verify);
    cfg.dim = 3;
    cfg.out_dir = dir.string();
    auto res = run_study(cfg);
    CHECK_FALSE(res.pass);
    CHECK_FALSE(io::RunManifest::load(dir).all_branches_ok());
}
