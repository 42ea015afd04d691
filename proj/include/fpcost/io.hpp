#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "drift.hpp"
#include "entropic_step.hpp"
#include "ladder.hpp"
#include "torus.hpp"

namespace fpcost {

using Json = nlohmann::ordered_json;

// ============================================================================
// Text emission with 17 significant digits
// ============================================================================

// Non-finite values print as "nan" / "inf" in CSV and null in JSON.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace detail {

inline void write_json(std::ostream& os, const Json& j, int indent, int depth) {
    auto pad = [&](int d) {
        if (indent > 0) os << '\n' << std::string(std::size_t(indent * d), ' ');
    };
    switch (j.type()) {
        case Json::value_t::object: {
            if (j.empty()) {
                os << "{}";
                return;
            }
            os << '{';
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) os << ',';
                first = false;
                pad(depth + 1);
                os << Json(it.key()).dump() << (indent > 0 ? ": " : ":");
                write_json(os, it.value(), indent, depth + 1);
            }
            pad(depth);
            os << '}';
            return;
        }
        case Json::value_t::array: {
            if (j.empty()) {
                os << "[]";
                return;
            }
            // numeric arrays stay on one line
            bool flat = true;
            for (const auto& e : j)
                if (e.is_structured()) flat = false;
            os << '[';
            bool first = true;
            for (const auto& e : j) {
                if (!first) os << (flat ? ", " : ",");
                first = false;
                if (!flat) pad(depth + 1);
                write_json(os, e, indent, depth + 1);
            }
            if (!flat) pad(depth);
            os << ']';
            return;
        }
        case Json::value_t::number_float: {
            double v = j.get<double>();
            os << (std::isfinite(v) ? format_double(v) : std::string("null"));
            return;
        }
        default: os << j.dump(); return;
    }
}

}  // namespace detail

inline std::string dump_json(const Json& j, int indent = 2) {
    std::ostringstream os;
    detail::write_json(os, j, indent, 0);
    os << '\n';
    return os.str();
}

inline void write_text(const std::filesystem::path& file, const std::string& text) {
    if (file.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(file.parent_path(), ec);
    }
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot open " + file.string() + " for writing");
    out << text;
    if (!out) throw Error(Errc::io, "write failed: " + file.string());
}

inline std::string read_text(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Parse with line/column diagnostics.
inline Json parse_json(const std::string& text, const std::string& origin) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw Error(Errc::config, origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
}

// Typed field access with a named diagnostic.
template <class T>
T field(const Json& j, const std::string& key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw Error(Errc::config, where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(Errc::config, where + ": field '" + key + "' has the wrong type");
    }
}

template <class T>
T field_or(const Json& j, const std::string& key, T fallback, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    return field<T>(j, key, where);
}

// ============================================================================
// Measures and paths
// ============================================================================

inline Json to_json(const GridMeasure& m) {
    Json j;
    j["p"] = m.grid().p();
    j["n"] = m.grid().n();
    j["weights"] = std::vector<double>(m.weights().begin(), m.weights().end());
    return j;
}

// Grids read from files get lifts for h up to h_max.
inline GridMeasure measure_from_json(const Json& j, double h_max = 0.25, const std::string& where = "measure") {
    auto p = field<int>(j, "p", where), n = field<int>(j, "n", where);
    auto g = make_grid(p, n, h_max);
    auto w = field<std::vector<double>>(j, "weights", where);
    if (w.size() != g.cells()) throw Error(Errc::config, where + ": weights has " + std::to_string(w.size()) + " entries, expected " + std::to_string(g.cells()));
    return GridMeasure(g, std::move(w));
}

inline Json to_json(const MeasurePath& path) {
    Json j;
    j["p"] = path.grid().p();
    j["n"] = path.grid().n();
    j["t0"] = path.t0();
    j["dt"] = path.dt();
    Json frames = Json::array();
    for (const auto& f : path.frames()) frames.push_back(std::vector<double>(f.weights().begin(), f.weights().end()));
    j["frames"] = std::move(frames);
    return j;
}

inline MeasurePath path_from_json(const Json& j, double h_max = 0.25, const std::string& where = "path") {
    auto p = field<int>(j, "p", where), n = field<int>(j, "n", where);
    auto g = make_grid(p, n, h_max);
    auto t0 = field<double>(j, "t0", where), dt = field<double>(j, "dt", where);
    auto raw = field<std::vector<std::vector<double>>>(j, "frames", where);
    std::vector<GridMeasure> frames;
    for (std::size_t k = 0; k < raw.size(); ++k) {
        if (raw[k].size() != g.cells()) throw Error(Errc::config, where + ": frame " + std::to_string(k) + " has the wrong size");
        frames.emplace_back(g, std::move(raw[k]));
    }
    return MeasurePath(g, t0, dt, std::move(frames));
}

// ============================================================================
// Step results and kernels
// ============================================================================

inline Json to_json(const StepCostResult& r) {
    const int p = r.kernel.grid().p();
    Json j;
    j["cost"] = r.cost;
    j["converged"] = r.converged;
    j["iterations"] = r.iterations;
    j["log_domain"] = r.log_domain;
    j["marginal_error"] = r.marginal_error;
    Json vel = Json::array(), cov = Json::array(), summary = Json::array();
    for (std::size_t x = 0; x < r.velocity.size(); ++x) {
        std::vector<double> v(r.velocity[x].begin(), r.velocity[x].begin() + p);
        std::vector<double> c;
        for (int a = 0; a < p; ++a)
            for (int b = 0; b < p; ++b) c.push_back(r.covariance[x][a * 2 + b]);
        double tr = 0.0;
        for (int a = 0; a < p; ++a) tr += r.covariance[x][a * 2 + a];
        vel.push_back(v);
        cov.push_back(c);
        summary.push_back(Json{{"mean", v}, {"trace", tr}});
    }
    j["velocity"] = std::move(vel);
    j["covariance"] = std::move(cov);
    j["kernel_summary"] = std::move(summary);
    return j;
}

// Row-major (source cell, target cell, lift) little-endian float64 masses.
inline void dump_kernel(const JumpKernel& k, const std::filesystem::path& file) {
    const TorusGrid& g = k.grid();
    const std::size_t L = g.lift_count(), N = g.cells();
    std::vector<double> dense(N * N * L, 0.0);
    for (std::size_t x = 0; x < N; ++x)
        for (const auto& e : k.row(x)) dense[(x * N + e.target) * L + e.lift] = e.mass;
    std::ofstream out(file, std::ios::binary);
    if (!out) throw Error(Errc::io, "cannot open " + file.string() + " for writing");
    for (double v : dense) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
        out.write(reinterpret_cast<const char*>(b), 8);
    }
    if (!out) throw Error(Errc::io, "write failed: " + file.string());
}

// ============================================================================
// Ladder reports
// ============================================================================

inline Json to_json(const LadderReport& r) {
    Json j;
    j["h_values"] = r.h_values;
    j["energies"] = r.energies;
    j["drift_energy"] = r.drift_energy;
    j["covariance_gap"] = r.covariance_gap;
    j["third_moment"] = r.third_moment;
    std::vector<bool> conv(r.converged.begin(), r.converged.end());
    j["converged"] = conv;
    j["liminf_estimate"] = r.liminf_estimate;
    j["diverging"] = r.diverging;
    return j;
}

inline const char* ladder_csv_header = "# columns: h, energy, drift_energy, covariance_gap, third_moment\nh,energy,drift_energy,covariance_gap,third_moment\n";

inline std::string ladder_csv(const LadderReport& r) {
    std::string s = ladder_csv_header;
    for (std::size_t i = 0; i < r.h_values.size(); ++i)
        s += format_double(r.h_values[i]) + "," + format_double(r.energies[i]) + "," + format_double(r.drift_energy[i]) + "," +
             format_double(r.covariance_gap[i]) + "," + format_double(r.third_moment[i]) + "\n";
    return s;
}

// ============================================================================
// Drift strings
// ============================================================================

// {"kind": "constant", "a": [..]} | {"kind": "sine", "amplitude": A} |
// {"kind": "table", "file": path} or inline {"kind": "table", "t0", "dt", "frames"}
// where frames[stamp][cell] is a p-vector.
inline DriftField drift_from_json(const Json& j, const TorusGrid& g, const std::string& where = "drift") {
    auto kind = field<std::string>(j, "kind", where);
    const int p = g.p();
    if (kind == "constant") {
        auto a = field<std::vector<double>>(j, "a", where);
        if (int(a.size()) != p) throw Error(Errc::config, where + ": 'a' must have p entries");
        Point v{};
        for (int i = 0; i < p; ++i) v[i] = a[i];
        return constant_drift(v, p);
    }
    if (kind == "sine") return sine_drift(field<double>(j, "amplitude", where), p);
    if (kind == "table") {
        Json src = j;
        if (j.contains("file")) src = parse_json(read_text(field<std::string>(j, "file", where)), field<std::string>(j, "file", where));
        auto t0 = field<double>(src, "t0", where), dt = field_or<double>(src, "dt", 1.0, where);
        auto raw = field<std::vector<std::vector<std::vector<double>>>>(src, "frames", where);
        std::vector<std::vector<Point>> v(raw.size());
        for (std::size_t k = 0; k < raw.size(); ++k) {
            if (raw[k].size() != g.cells()) throw Error(Errc::config, where + ": table frame has the wrong size");
            for (const auto& c : raw[k]) {
                if (int(c.size()) != p) throw Error(Errc::config, where + ": table vectors must have p entries");
                Point q{};
                for (int i = 0; i < p; ++i) q[i] = c[i];
                v[k].push_back(q);
            }
        }
        return tabulated_drift(DriftTable(g, t0, dt, std::move(v)));
    }
    throw Error(Errc::config, where + ": unknown drift kind '" + kind + "'");
}

}  // namespace fpcost
