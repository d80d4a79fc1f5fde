#pragma once

// Artifact persistence: CSV emitters (doubles always "%.17g" so identical
// runs are bitwise identical), binary arrays with JSON sidecars, content
// hashing, and the run manifest with its integrity check.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mochi/common.hpp"
#include "mochi/grid.hpp"

namespace mochi::io {

using json = nlohmann::json;

inline constexpr const char* code_version = "0.1.0";

inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

// Row-oriented CSV writer with a fixed header.
class Csv {
  public:
    explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}

    class Row {
      public:
        explicit Row(std::size_t expect) : expect_(expect) {}
        Row& add(double v) { return push(format_double(v)); }
        Row& add(std::uint64_t v) { return push(std::to_string(v)); }
        Row& add(long v) { return push(std::to_string(v)); }
        Row& add(int v) { return push(std::to_string(v)); }
        Row& add(const std::string& v) { return push(v); }
        const std::vector<std::string>& cells() const { return cells_; }
        std::size_t expected() const { return expect_; }

      private:
        Row& push(std::string s) {
            cells_.push_back(std::move(s));
            return *this;
        }
        std::size_t expect_;
        std::vector<std::string> cells_;
    };

    Row row() const { return Row(header_.size()); }

    void append(Row r) {
        if (r.cells().size() != header_.size())
            throw ConfigError("csv row has " + std::to_string(r.cells().size()) +
                              " cells, header has " + std::to_string(header_.size()));
        rows_.push_back(std::move(r));
    }

    void write(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IntegrityError("cannot open " + path.string() + " for writing");
        for (std::size_t i = 0; i < header_.size(); ++i)
            out << (i ? "," : "") << header_[i];
        out << "\n";
        for (const auto& r : rows_) {
            const auto& c = r.cells();
            for (std::size_t i = 0; i < c.size(); ++i) out << (i ? "," : "") << c[i];
            out << "\n";
        }
    }

    std::size_t size() const { return rows_.size(); }

  private:
    std::vector<std::string> header_;
    std::vector<Row> rows_;
};

// --- binary arrays with JSON sidecars ---------------------------------------

inline void write_bytes(const std::filesystem::path& path, const void* data, std::size_t bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IntegrityError("cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), std::streamsize(bytes));
}

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IntegrityError("cannot open " + path.string());
    auto n = std::size_t(in.tellg());
    std::vector<char> buf(n);
    in.seekg(0);
    in.read(buf.data(), std::streamsize(n));
    return buf;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IntegrityError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
}

inline json read_json(const std::filesystem::path& path) {
    auto buf = read_bytes(path);
    return json::parse(buf.begin(), buf.end());
}

// Save doubles as little-endian binary with a caller-described sidecar at
// <path>.json; the sidecar records the element count for the integrity check.
inline void save_array(const std::filesystem::path& path, const std::vector<double>& data,
                       json sidecar) {
    write_bytes(path, data.data(), data.size() * sizeof(double));
    sidecar["count"] = data.size();
    sidecar["dtype"] = "float64le";
    sidecar["file"] = path.filename().string();
    write_json(path.string() + ".json", sidecar);
}

inline std::vector<double> load_array(const std::filesystem::path& path) {
    auto sidecar = read_json(path.string() + ".json");
    auto buf = read_bytes(path);
    std::size_t count = sidecar.at("count").get<std::size_t>();
    if (buf.size() != count * sizeof(double))
        throw IntegrityError(path.string() + ": size does not match sidecar count");
    std::vector<double> out(count);
    std::memcpy(out.data(), buf.data(), buf.size());
    return out;
}

template <int D>
void save_grid(const std::filesystem::path& path, const Grid<D>& g) {
    save_array(path, g.v,
               json{{"kind", "grid"},
                    {"dim", D},
                    {"points_per_axis", g.meta.m},
                    {"box", g.meta.box},
                    {"time", g.time}});
}

template <int D>
Grid<D> load_grid(const std::filesystem::path& path) {
    auto sidecar = read_json(path.string() + ".json");
    if (sidecar.at("dim").get<int>() != D) throw IntegrityError(path.string() + ": wrong dim");
    Grid<D> g(GridMeta<D>{sidecar.at("box").get<double>(), sidecar.at("points_per_axis").get<int>()},
              sidecar.at("time").get<double>());
    g.v = load_array(path);
    if (g.v.size() != g.meta.size())
        throw IntegrityError(path.string() + ": value count does not match grid");
    return g;
}

// Trajectory snapshot: particle positions at selected times, flattened
// (time, particle, axis), with the run parameters in the sidecar.
template <int D>
void save_trajectory(const std::filesystem::path& path,
                     const std::vector<std::vector<Vec<D>>>& frames,
                     const std::vector<double>& times, json params) {
    std::vector<double> flat;
    flat.reserve(frames.size() * (frames.empty() ? 0 : frames[0].size()) * D);
    for (const auto& f : frames)
        for (const auto& p : f)
            for (int a = 0; a < D; ++a) flat.push_back(p[std::size_t(a)]);
    params["kind"] = "trajectory";
    params["dim"] = D;
    params["times"] = times;
    params["n"] = frames.empty() ? 0 : frames[0].size();
    save_array(path, flat, std::move(params));
}

// --- hashing and the manifest ------------------------------------------------

inline std::string hash_hex(std::uint64_t h) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string hash_file(const std::filesystem::path& path) {
    auto buf = read_bytes(path);
    return hash_hex(fnv1a(buf.data(), buf.size()));
}

struct RunManifest {
    std::string study;
    std::string config_hash;
    std::string version = code_version;
    std::vector<json> seeds;     // {"n":..,"replica":..,"seed":..}
    std::vector<json> files;     // {"path":..,"hash":..}
    std::vector<json> timings;   // {"name":..,"seconds":..}
    std::vector<json> branches;  // {"name":..,"status":"ok"|"failed","message":..}
    std::vector<std::string> notes;

    void add_seed(std::uint64_t n, int replica, std::uint64_t seed) {
        seeds.push_back({{"n", n}, {"replica", replica}, {"seed", seed}});
    }
    void add_timing(const std::string& name, double seconds) {
        timings.push_back({{"name", name}, {"seconds", seconds}});
    }
    void add_branch(const std::string& name, bool ok, const std::string& message = "") {
        branches.push_back({{"name", name}, {"status", ok ? "ok" : "failed"},
                            {"message", message}});
    }
    bool all_branches_ok() const {
        for (const auto& b : branches)
            if (b.at("status") != "ok") return false;
        return true;
    }

    // Register an already-written artifact (path relative to the run dir).
    void add_file(const std::filesystem::path& dir, const std::string& rel) {
        files.push_back({{"path", rel}, {"hash", hash_file(dir / rel)}});
    }

    json to_json() const {
        return {{"study", study},     {"config_hash", config_hash}, {"version", version},
                {"seeds", seeds},     {"files", files},             {"timings", timings},
                {"branches", branches}, {"notes", notes}};
    }

    static RunManifest from_json(const json& j) {
        RunManifest m;
        m.study = j.at("study").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.version = j.at("version").get<std::string>();
        for (const auto& s : j.at("seeds")) m.seeds.push_back(s);
        for (const auto& f : j.at("files")) m.files.push_back(f);
        for (const auto& t : j.at("timings")) m.timings.push_back(t);
        for (const auto& b : j.at("branches")) m.branches.push_back(b);
        for (const auto& n : j.at("notes")) m.notes.push_back(n.get<std::string>());
        return m;
    }

    void save(const std::filesystem::path& dir) const {
        write_json(dir / "manifest.json", to_json());
    }

    static RunManifest load(const std::filesystem::path& dir) {
        return from_json(read_json(dir / "manifest.json"));
    }

    // Every referenced file must exist with a matching content hash.
    void verify(const std::filesystem::path& dir) const {
        std::vector<std::string> problems;
        for (const auto& f : files) {
            auto rel = f.at("path").get<std::string>();
            auto p = dir / rel;
            if (!std::filesystem::exists(p)) {
                problems.push_back("missing: " + rel);
                continue;
            }
            if (hash_file(p) != f.at("hash").get<std::string>())
                problems.push_back("hash mismatch: " + rel);
        }
        if (!problems.empty()) {
            std::string msg = "manifest integrity check failed:";
            for (const auto& p : problems) msg += "\n  " + p;
            throw IntegrityError(msg);
        }
    }
};

}  // namespace mochi::io
