// Batch command-line front end: phase diagrams, q-sweeps, gap tables and
// time-domain simulation, all driven by a flat key/value config file.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <finstab/config.hpp>
#include <finstab/dynamics.hpp>
#include <finstab/io.hpp>
#include <finstab/sweep.hpp>

namespace fs = std::filesystem;
using namespace finstab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> samples;
    std::optional<std::uint64_t> workers;
    std::optional<std::string> methods;
    std::optional<std::string> out_dir;
    std::optional<std::string> format;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "flat key = value config file");
    cmd->add_option("--seed", f.seed, "global seed (overrides run.seed)");
    cmd->add_option("--samples", f.samples, "Monte Carlo samples per cell (overrides run.samples)");
    cmd->add_option("--workers", f.workers, "worker threads, 0 = all cores (overrides run.workers)");
    cmd->add_option("--methods", f.methods, "comma list of diagonalization,corsi,replica");
    cmd->add_option("--out-dir", f.out_dir, "output directory (overrides run.out_dir)");
    cmd->add_option("--format", f.format, "result table format")->check(CLI::IsMember({"csv", "json"}));
}

RunConfig load_config(const CommonFlags& f) {
    KeyValueFile kv = f.config.empty() ? KeyValueFile{} : KeyValueFile::load(f.config);
    if (f.seed) kv.set("run.seed", std::to_string(*f.seed));
    if (f.samples) kv.set("run.samples", std::to_string(*f.samples));
    if (f.workers) kv.set("run.workers", std::to_string(*f.workers));
    if (f.methods) kv.set("run.methods", *f.methods);
    if (f.out_dir) kv.set("run.out_dir", *f.out_dir);
    if (f.format) kv.set("run.format", *f.format);
    return build_config(kv);
}

fs::path prepare_out_dir(const RunConfig& rc) {
    fs::path dir(rc.sweep.out_dir);
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

nlohmann::json base_manifest(const std::string& command, const RunConfig& rc, double seconds) {
    return {{"command", command},
            {"version", kVersion},
            {"seed", rc.sweep.seed},
            {"config", to_json(rc)},
            {"wall_seconds", seconds}};
}

template <typename Rows, typename CsvWriter>
void write_results(const fs::path& dir, const std::string& stem, const RunConfig& rc, const Rows& rows,
                   CsvWriter&& csv) {
    if (rc.format == "csv") {
        std::ostringstream os;
        csv(os);
        write_text(dir / (stem + ".csv"), os.str());
    } else {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : rows) arr.push_back(to_json(r));
        write_text(dir / (stem + ".json"), arr.dump(2) + "\n");
    }
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_phase_diagram(const RunConfig& rc) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& cfg = rc.sweep;
    const auto cells = run_phase_diagram(cfg);
    const auto dir = prepare_out_dir(rc);
    write_results(dir, "phase_diagram", rc, cells, [&](std::ostream& os) { write_cells_csv(os, cells, cfg.methods); });
    auto manifest = base_manifest("phase-diagram", rc, elapsed(t0));
    for (Method m : cfg.methods) {
        nlohmann::json contour = nlohmann::json::array();
        for (const auto& p : extract_contour(cells, m)) contour.push_back({{"p_B", p.p_B}, {"phi", p.phi}});
        manifest["contours"][to_string(m)] = contour;
        if (m != Method::diagonalization && cfg.has_method(Method::diagonalization)) {
            const auto n = count_agreement(cells, m);
            manifest["classification"][to_string(m)] = {{"true_unstable", n.true_unstable},
                                                        {"false_stable", n.false_stable},
                                                        {"false_unstable", n.false_unstable},
                                                        {"true_stable", n.true_stable},
                                                        {"indeterminate", n.indeterminate}};
        }
        if (rc.svg) {
            std::ostringstream os;
            write_heatmap_svg(os, cells, cfg, m);
            write_text(dir / ("heatmap_" + to_string(m) + ".svg"), os.str());
        }
    }
    manifest["failed_cells"] = std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.failed; });
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "phase-diagram: " << cells.size() << " cells written to " << dir.string() << "\n";
    return any_failed(cells) ? kExitNumerical : kExitOk;
}

int cmd_q_sweep(const RunConfig& rc) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& cfg = rc.sweep;
    const auto cells = run_q_sweep(cfg);
    const auto dir = prepare_out_dir(rc);
    write_results(dir, "q_sweep", rc, cells, [&](std::ostream& os) { write_cells_csv(os, cells, cfg.methods); });
    auto manifest = base_manifest("q-sweep", rc, elapsed(t0));
    manifest["argmin"] = nlohmann::json::array();
    for (const auto& a : q_sweep_argmin(cells, cfg.methods)) {
        manifest["argmin"].push_back(
            {{"setting", a.setting}, {"method", to_string(a.method)}, {"q", a.q}, {"value", a.value}, {"interior", a.interior}});
        std::cout << "argmin " << a.setting << " " << to_string(a.method) << ": q = " << a.q << " (E[lambda] = " << a.value
                  << (a.interior ? ", interior" : ", at range end") << ")\n";
    }
    manifest["failed_cells"] = std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.failed; });
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    return any_failed(cells) ? kExitNumerical : kExitOk;
}

int cmd_gap(const RunConfig& rc) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rows = run_gap_analysis(rc.sweep);
    const auto dir = prepare_out_dir(rc);
    write_results(dir, "gap", rc, rows, [&](std::ostream& os) { write_gap_csv(os, rows); });
    auto manifest = base_manifest("gap", rc, elapsed(t0));
    manifest["failed_rows"] = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.failed; });
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    for (const auto& g : rows) {
        std::cout << g.setting << " d=" << g.scale << " q=" << g.q << " corsi_gap=" << g.corsi_gap
                  << " approx_gap=" << g.paired_abs_gap.mean << "\n";
    }
    return any_failed(rows) ? kExitNumerical : kExitOk;
}

int cmd_simulate(const RunConfig& rc) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& cfg = rc.sweep;
    const auto& sim = rc.simulate;
    const auto dir = prepare_out_dir(rc);
    const auto& setting = cfg.settings.back();
    const auto dv = derive(cfg.base, setting.params);
    const auto x = sample_holdings(cfg.base, setting.params, derive_seed(cfg.seed, 0));
    const auto w = to_weights(x);
    const auto op = PhiOperator::from_weights(w, dv.kappa0);

    if (sim.dump_network) {
        std::ofstream fx(dir / "network_X.txt"), fw(dir / "network_W.txt");
        write_triplets(fx, x.x, x.seed, "X");
        write_triplets(fw, w.w, x.seed, "W");
    }
    {
        ShockModel shocks(cfg.base.N, cfg.base.sigma_f2, cfg.base.sigma_nu2, derive_seed(cfg.seed, 1), sim.static_factor);
        std::ofstream trace(dir / "trace.csv");
        write_path_trace(trace, op, shocks, sim.horizon, sim.trace_assets);
    }
    PathOptions po;
    po.horizon = sim.horizon;
    po.paths = sim.paths;
    po.workers = cfg.workers;
    po.static_factor = sim.static_factor;
    const auto summary = simulate_linear_paths(op, cfg.base.sigma_f2, cfg.base.sigma_nu2, derive_seed(cfg.seed, 2), po);

    LinearizationOptions lo;
    lo.horizon = std::min<std::size_t>(sim.horizon, 50);
    lo.target_spread = sim.target_spread;
    lo.recapitalize = sim.recapitalize;
    lo.static_factor = sim.static_factor;
    std::optional<LinearizationReport> lin;
    std::string lin_error;
    try {
        lin = linearization_check(cfg.base, setting.params, cfg.seed, lo);
    } catch (const InsolvencyError& ex) {
        lin_error = ex.what();
    }

    std::ostringstream vs;
    vs << "t,top_mode_variance,law_independent,law_static_factor\n";
    for (std::size_t t = 0; t < summary.top_mode_variance.size(); ++t) {
        vs << t + 1 << ',' << detail::num(summary.top_mode_variance[t]) << ',' << detail::num(summary.law_variance[t])
           << ',' << detail::num(summary.law_variance_static[t]) << '\n';
    }
    write_text(dir / "variance.csv", vs.str());

    auto manifest = base_manifest("simulate", rc, elapsed(t0));
    manifest["setting"] = setting.name;
    manifest["lambda_max"] = summary.lambda;
    manifest["diverged_paths"] = summary.diverged_paths;
    manifest["stationary_top_mode_variance"] = summary.stationary_variance;
    manifest["stationary_law_independent"] = 
        stationary_geometric_variance(summary.lambda, cfg.base.sigma_f2 + cfg.base.sigma_nu2);
    if (lin) manifest["linearization_max_relative_deviation"] = lin->max_relative_deviation;
    else manifest["linearization_error"] = lin_error;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "simulate: lambda_max = " << summary.lambda << ", diverged paths = " << summary.diverged_paths << "/"
              << sim.paths << "\n";
    return (summary.diverged_paths > 0 && summary.lambda < 1.0) || !lin ? kExitNumerical : kExitOk;
}

int cmd_validate(const RunConfig& rc) {
    const auto& cfg = rc.sweep;
    std::cout << "config ok: N=" << cfg.base.N << " M=" << cfg.base.M << " q=" << cfg.base.q
              << " alpha=" << cfg.base.alpha() << "\n";
    try {
        std::cout << "eta = " << target_leverage(cfg.base) << "\n";
    } catch (const ParamError& ex) {
        std::cout << "eta undefined: " << ex.what() << "\n";
    }
    for (const auto& w : cfg.base.warnings()) std::cout << "warning: " << w << "\n";
    std::cout << "phase grid " << cfg.phi.points << " x " << cfg.p_B.points << ", q points " << cfg.q.points
              << ", samples " << cfg.samples << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stability of random bank-asset investment networks"};
    app.require_subcommand(1);
    CommonFlags flags;
    struct Entry {
        const char* name;
        const char* help;
        int (*run)(const RunConfig&);
    };
    const Entry entries[] = {
        {"phase-diagram", "phi x p_B stability grid with contour and heatmaps", cmd_phase_diagram},
        {"q-sweep", "E[lambda_max] against q for each heterogeneity setting", cmd_q_sweep},
        {"gap", "relative gaps of the approximations against diagonalization", cmd_gap},
        {"simulate", "time-domain linear and agent-based paths", cmd_simulate},
        {"validate-config", "parse and check a config file", cmd_validate},
    };
    std::vector<std::pair<CLI::App*, const Entry*>> commands;
    for (const auto& e : entries) {
        auto* cmd = app.add_subcommand(e.name, e.help);
        add_common(cmd, flags);
        commands.emplace_back(cmd, &e);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    RunConfig rc;
    try {
        rc = load_config(flags);
    } catch (const std::exception& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return kExitConfig;
    }
    for (const auto& [cmd, entry] : commands) {
        if (!cmd->parsed()) continue;
        try {
            return entry->run(rc);
        } catch (const ConfigError& ex) {
            std::cerr << "config error: " << ex.what() << "\n";
            return kExitConfig;
        } catch (const ParamError& ex) {
            std::cerr << "config error: " << ex.what() << "\n";
            return kExitConfig;
        } catch (const std::exception& ex) {
            std::cerr << "error: " << ex.what() << "\n";
            return kExitNumerical;
        }
    }
    return kExitConfig;
}
