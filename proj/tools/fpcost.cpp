// fpcost: command-line front end.
//
// Exit codes: 0 pass, 1 assertion failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <future>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "fpcost/fpcost.hpp"

namespace fs = std::filesystem;
using namespace fpcost;

namespace {

constexpr int exit_pass = 0;
constexpr int exit_fail = 1;
constexpr int exit_usage = 2;

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-")
        std::cout << text;
    else
        write_text(out, text);
}

Json load_json(const std::string& file) { return parse_json(read_text(file), file); }

// Inline JSON, a JSON file, or shorthand "sine:A" / "constant:a[,b]".
DriftField parse_drift(const std::string& spec, const TorusGrid& g) {
    if (!spec.empty() && spec.front() == '{') return drift_from_json(parse_json(spec, "--drift"), g);
    if (fs::exists(spec)) return drift_from_json(load_json(spec), g, spec);
    auto colon = spec.find(':');
    if (colon == std::string::npos) throw Error(Errc::config, "--drift: expected JSON, a file, sine:A or constant:a[,b]");
    const std::string kind = spec.substr(0, colon), rest = spec.substr(colon + 1);
    Json j;
    j["kind"] = kind;
    try {
        if (kind == "sine") {
            j["amplitude"] = std::stod(rest);
        } else {
            std::vector<double> a;
            std::size_t pos = 0;
            while (pos <= rest.size()) {
                auto next = rest.find(',', pos);
                a.push_back(std::stod(rest.substr(pos, next - pos)));
                if (next == std::string::npos) break;
                pos = next + 1;
            }
            j["a"] = a;
        }
    } catch (const std::logic_error&) {
        throw Error(Errc::config, "--drift: malformed number in '" + spec + "'");
    }
    return drift_from_json(j, g, "--drift");
}

void print_summary(const ScenarioResult& r) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << '\n';
    for (const auto& c : r.checks)
        std::cout << "  [" << (c.passed ? "ok" : "FAILED") << "] " << (c.criterion ? "(" + std::to_string(c.criterion) + ") " : "") << c.name
                  << ": " << c.detail << '\n';
    for (const auto& n : r.notes) std::cout << "  note: " << n << '\n';
}

int cmd_run(const std::vector<std::string>& configs, bool parallel, const std::string& out_dir) {
    std::vector<ExperimentConfig> parsed;
    for (const auto& f : configs) {
        auto c = parse_config(load_json(f), f);
        if (!out_dir.empty()) c.output_dir = out_dir;
        parsed.push_back(std::move(c));
    }
    std::vector<ScenarioResult> results;
    if (parallel) {
        std::vector<std::future<ScenarioResult>> jobs;
        for (const auto& c : parsed) jobs.push_back(std::async(std::launch::async, [c] { return run_experiment(c); }));
        for (auto& j : jobs) results.push_back(j.get());
    } else {
        for (const auto& c : parsed) results.push_back(run_experiment(c));
    }
    bool ok = true;
    for (const auto& r : results) {
        print_summary(r);
        ok = ok && r.passed();
    }
    return ok ? exit_pass : exit_fail;
}

int cmd_step(const std::string& f1, const std::string& f2, double h, const std::string& dump, double tol, const std::string& out) {
    const double hmax = std::max(h, 0.25);
    auto mu1 = measure_from_json(load_json(f1), hmax, f1);
    auto mu2 = measure_from_json(load_json(f2), hmax, f2);
    SinkhornOptions opt;
    opt.tolerance = tol;
    auto r = solve_step(mu1, mu2, h, opt);
    emit(dump_json(to_json(r)), out);
    if (!dump.empty()) dump_kernel(r.kernel, dump);
    return r.converged ? exit_pass : exit_fail;
}

std::vector<double> parse_list(const std::string& s, const std::string& flag) {
    std::vector<double> v;
    std::size_t pos = 0;
    try {
        while (pos <= s.size()) {
            auto next = s.find(',', pos);
            v.push_back(std::stod(s.substr(pos, next - pos)));
            if (next == std::string::npos) break;
            pos = next + 1;
        }
    } catch (const std::logic_error&) {
        throw Error(Errc::config, flag + ": malformed list '" + s + "'");
    }
    return v;
}

int cmd_path(const std::string& file, const std::string& ladder, const std::string& format, const std::string& out) {
    auto hs = parse_list(ladder, "--ladder");
    const double hmax = std::max(*std::max_element(hs.begin(), hs.end()), 0.25);
    auto path = path_from_json(load_json(file), hmax, file);
    auto rep = energy_ladder(path, hs);
    emit(format == "csv" ? ladder_csv(rep) : dump_json(to_json(rep)), out);
    return std::all_of(rep.converged.begin(), rep.converged.end(), [](auto c) { return bool(c); }) ? exit_pass : exit_fail;
}

int cmd_fp(const std::string& drift, const std::string& mu0_file, double t0, double t, double dt, const std::string& out) {
    auto mu0 = measure_from_json(load_json(mu0_file), 0.25, mu0_file);
    auto X = parse_drift(drift, mu0.grid());
    FpDiagnostics diag;
    auto path = fp_solve(mu0, X, t0, t, dt, {}, &diag);
    Json j = to_json(path);
    j["clip_events"] = diag.clip_events;
    j["clipped_mass"] = diag.clipped_mass;
    emit(dump_json(j), out);
    return exit_pass;
}

ConstraintSpec random_appendix_spec(ConstraintKind kind, std::mt19937_64& rng) {
    if (kind != ConstraintKind::Out) return detail::random_spec(kind, rng);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    ConstraintSpec s;
    s.kind = kind;
    s.r = 0.5 + 1.5 * U(rng);
    s.delta = 0.1 + 1.9 * U(rng);
    s.h = 0.05 + 0.15 * U(rng);
    return s;
}

int cmd_verify_appendix(const std::string& kinds, int count, int vgrid, std::uint64_t seed, const std::string& out) {
    std::vector<ConstraintKind> ks;
    std::size_t pos = 0;
    while (pos <= kinds.size()) {
        auto next = kinds.find(',', pos);
        ks.push_back(parse_constraint_kind(kinds.substr(pos, next - pos)));
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    std::mt19937_64 rng(seed);
    Json rows = Json::array();
    bool ok = true;
    for (auto k : ks)
        for (int i = 0; i < count; ++i) {
            auto s = random_appendix_spec(k, rng);
            const double exact = closed_form(s), v = oracle_constrained_min(s, vgrid).value;
            const double rel = std::abs(v - exact) / std::abs(exact);
            ok = ok && rel <= 1e-2;
            rows.push_back({{"kind", std::string(to_string(k))}, {"p", s.p}, {"h", s.h}, {"delta", s.delta}, {"r", s.r}, {"closed_form", exact}, {"oracle", v}, {"relative_error", rel}});
        }
    emit(dump_json(Json{{"vgrid", vgrid}, {"seed", seed}, {"specs", rows}}), out);
    return ok ? exit_pass : exit_fail;
}

int cmd_report(const std::string& dir, const std::string& format, const std::string& out) {
    if (!fs::is_directory(dir)) throw Error(Errc::io, "not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    Json merged = Json::array();
    for (const auto& f : files) {
        Json j = load_json(f.string());
        if (j.is_object() && j.contains("scenario") && j.contains("checks")) merged.push_back(std::move(j));
    }
    std::sort(merged.begin(), merged.end(), [](const Json& a, const Json& b) { return a["scenario"].get<std::string>() < b["scenario"].get<std::string>(); });
    bool ok = true;
    if (format == "json") {
        emit(dump_json(Json{{"scenarios", merged}}), out);
    } else {
        std::string s = "# columns: scenario, criterion, name, passed\nscenario,criterion,name,passed\n";
        for (const auto& r : merged)
            for (const auto& c : r["checks"])
                s += r["scenario"].get<std::string>() + "," + std::to_string(c["criterion"].get<int>()) + ",\"" + c["name"].get<std::string>() + "\"," +
                     (c["passed"].get<bool>() ? "1" : "0") + "\n";
        emit(s, out);
    }
    for (const auto& r : merged) ok = ok && r["passed"].get<bool>();
    return ok ? exit_pass : exit_fail;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entropic step costs and Fokker-Planck path costs on the flat torus"};
    app.require_subcommand(1);

    std::string out;
    auto* run = app.add_subcommand("run", "run scenarios from JSON configs");
    std::vector<std::string> configs;
    bool parallel = false;
    std::string out_dir;
    run->add_option("config", configs, "experiment config files")->required()->check(CLI::ExistingFile);
    run->add_flag("--parallel", parallel, "run scenarios concurrently");
    run->add_option("--output-dir", out_dir, "override output_dir");

    auto* step = app.add_subcommand("step", "one-step cost between two measures");
    step->set_help_flag("--help", "print this help message and exit");  // frees -h for --h
    std::string mu1, mu2, dump;
    double h = 0.0, tol = 1e-9;
    step->add_option("--mu1", mu1)->required()->check(CLI::ExistingFile);
    step->add_option("--mu2", mu2)->required()->check(CLI::ExistingFile);
    step->add_option("--h", h)->required()->check(CLI::PositiveNumber);
    step->add_option("--dump-kernel", dump, "binary kernel side file");
    step->add_option("--tolerance", tol)->check(CLI::Range(1e-15, 1e-4));
    step->add_option("--out", out);

    auto* path = app.add_subcommand("path", "h-ladder of a stored measure path");
    std::string path_file, ladder, format = "json";
    path->add_option("--path", path_file)->required()->check(CLI::ExistingFile);
    path->add_option("--ladder", ladder, "comma-separated h values")->required();
    path->add_option("--format", format)->check(CLI::IsMember({"json", "csv"}));
    path->add_option("--out", out);

    auto* fp = app.add_subcommand("fp", "Fokker-Planck path from mu0");
    std::string drift, mu0;
    double t0 = 0.0, t = 1.0, dt = 1.0 / 512.0;
    fp->add_option("--drift", drift, "JSON, file, sine:A or constant:a[,b]")->required();
    fp->add_option("--mu0", mu0)->required()->check(CLI::ExistingFile);
    fp->add_option("--t0", t0);
    fp->add_option("--t", t)->required();
    fp->add_option("--dt", dt)->required()->check(CLI::PositiveNumber);
    fp->add_option("--out", out);

    auto* va = app.add_subcommand("verify-appendix", "oracle against closed forms on random specs");
    std::string kinds = "trace,diag,offdiag,out";
    int count = 20, vgrid = 8;
    std::uint64_t seed = 1;
    va->add_option("--kinds", kinds);
    va->add_option("--count", count)->check(CLI::PositiveNumber);
    va->add_option("--vgrid", vgrid)->check(CLI::Range(8, 256));
    va->add_option("--seed", seed);
    va->add_option("--out", out);

    auto* report = app.add_subcommand("report", "merge scenario reports in a directory");
    std::string dir, rformat = "json";
    report->add_option("dir", dir)->required();
    report->add_option("--format", rformat)->check(CLI::IsMember({"json", "csv"}));
    report->add_option("--out", out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    try {
        if (*run) return cmd_run(configs, parallel, out_dir);
        if (*step) return cmd_step(mu1, mu2, h, dump, tol, out);
        if (*path) return cmd_path(path_file, ladder, format, out);
        if (*fp) return cmd_fp(drift, mu0, t0, t, dt, out);
        if (*va) return cmd_verify_appendix(kinds, count, vgrid, seed, out);
        if (*report) return cmd_report(dir, rformat, out);
    } catch (const Error& e) {
        std::cerr << "fpcost: " << e.what() << '\n';
        return e.code() == Errc::config || e.code() == Errc::io || e.code() == Errc::invalid_argument ? exit_usage : exit_fail;
    } catch (const std::exception& e) {
        std::cerr << "fpcost: " << e.what() << '\n';
        return exit_fail;
    }
    return exit_usage;
}
