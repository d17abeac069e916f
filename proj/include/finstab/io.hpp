#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "sweep.hpp"

namespace finstab {

inline constexpr const char* kVersion = "0.1.0";

namespace detail {

/// Shortest round-trip representation, stable across runs and platforms.
inline std::string num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

inline const MethodResult* any_result(const CellResult& c, Method m) {
    for (const auto& r : c.results) {
        if (r.method == m) return &r;
    }
    return nullptr;
}

}  // namespace detail

/// One row per cell: coordinates, derived scalars, per-method value and
/// standard error, and the four-way classification of each approximation.
inline void write_cells_csv(std::ostream& os, const std::vector<CellResult>& cells, const std::vector<Method>& methods) {
    using detail::num;
    os << "index,setting,phi,p_B,q,N,M,B,s,b,eta,kappa,c";
    for (Method m : methods) os << ",lambda_" << to_string(m) << ",stderr_" << to_string(m);
    os << ",truth";
    for (Method m : methods) {
        if (m != Method::diagonalization) os << ",verdict_" << to_string(m) << ",class_" << to_string(m);
    }
    os << ",status,error\n";
    for (const auto& c : cells) {
        os << c.index << ',' << c.setting << ',' << num(c.phi) << ',' << num(c.p_B) << ',' << num(c.q) << ',' << c.N
           << ',' << c.M << ',' << num(c.het.B) << ',' << num(c.het.s) << ',' << num(c.derived.b) << ','
           << num(c.derived.eta) << ',' << num(c.derived.kappa) << ',' << num(c.derived.c);
        for (Method m : methods) {
            const auto* r = detail::any_result(c, m);
            if (r && r->ok) os << ',' << num(r->estimate.value) << ',' << num(r->estimate.std_error);
            else os << ",,";
        }
        os << ',' << (c.classification ? to_string(c.classification->truth) : "");
        for (Method m : methods) {
            if (m == Method::diagonalization) continue;
            const ApproxVerdict* a = c.classification ? c.classification->find(m) : nullptr;
            if (a) os << ',' << to_string(a->verdict) << ',' << to_string(a->agreement);
            else os << ",,";
        }
        os << ',' << (c.failed ? "failed" : "ok") << ',' << detail::csv_escape(c.error) << '\n';
    }
}

inline void write_gap_csv(std::ostream& os, const std::vector<GapRow>& rows) {
    using detail::num;
    os << "setting,scale,q,N,M,lambda_diag,stderr_diag,corsi,corsi_finite,corsi_gap,corsi_gap_stderr,"
          "corsi_finite_gap,lambda_approx,stderr_approx,paired_gap,paired_gap_stderr,paired_abs_gap,"
          "paired_abs_gap_stderr,status,error\n";
    for (const auto& g : rows) {
        os << g.setting << ',' << g.scale << ',' << num(g.q) << ',' << g.N << ',' << g.M << ','
           << num(g.diagonalization.value) << ',' << num(g.diagonalization.std_error) << ',' << num(g.corsi) << ','
           << num(g.corsi_finite) << ',' << num(g.corsi_gap) << ',' << num(g.corsi_gap_stderr) << ','
           << num(g.corsi_finite_gap) << ',' << num(g.approx_lambda.mean) << ',' << num(g.approx_lambda.std_error)
           << ',' << num(g.paired_gap.mean) << ',' << num(g.paired_gap.std_error) << ',' << num(g.paired_abs_gap.mean)
           << ',' << num(g.paired_abs_gap.std_error) << ',' << (g.failed ? "failed" : "ok") << ','
           << detail::csv_escape(g.error) << '\n';
    }
}

inline nlohmann::json to_json(const EigEstimate& e) {
    return {{"value", e.value},           {"stderr", e.std_error},       {"samples", e.samples},
            {"method", to_string(e.method)}, {"iterations", e.iterations}, {"nonconverged", e.nonconverged},
            {"converged", e.converged}};
}

inline nlohmann::json to_json(const CellResult& c) {
    nlohmann::json j = {{"index", c.index},
                        {"setting", c.setting},
                        {"phi", c.phi},
                        {"p_B", c.p_B},
                        {"q", c.q},
                        {"N", c.N},
                        {"M", c.M},
                        {"B", c.het.B},
                        {"s", c.het.s},
                        {"b", c.derived.b},
                        {"eta", c.derived.eta},
                        {"kappa", c.derived.kappa},
                        {"c", c.derived.c},
                        {"failed", c.failed},
                        {"error", c.error}};
    nlohmann::json est = nlohmann::json::object();
    for (const auto& r : c.results) {
        auto e = to_json(r.estimate);
        e["ok"] = r.ok;
        e["error"] = r.error;
        est[to_string(r.method)] = e;
    }
    j["estimates"] = est;
    if (c.classification) {
        nlohmann::json cls = {{"truth", to_string(c.classification->truth)}};
        for (const auto& a : c.classification->approx) {
            cls[to_string(a.method)] = {{"verdict", to_string(a.verdict)}, {"agreement", to_string(a.agreement)}};
        }
        j["classification"] = cls;
    }
    return j;
}

inline nlohmann::json to_json(const GapRow& g) {
    return {{"setting", g.setting},
            {"scale", g.scale},
            {"q", g.q},
            {"N", g.N},
            {"M", g.M},
            {"diagonalization", to_json(g.diagonalization)},
            {"corsi", g.corsi},
            {"corsi_finite", g.corsi_finite},
            {"corsi_gap", g.corsi_gap},
            {"corsi_gap_stderr", g.corsi_gap_stderr},
            {"corsi_finite_gap", g.corsi_finite_gap},
            {"lambda_approx", {{"mean", g.approx_lambda.mean}, {"stderr", g.approx_lambda.std_error}}},
            {"paired_gap", {{"mean", g.paired_gap.mean}, {"stderr", g.paired_gap.std_error}}},
            {"paired_abs_gap", {{"mean", g.paired_abs_gap.mean}, {"stderr", g.paired_abs_gap.std_error}}},
            {"failed", g.failed},
            {"error", g.error}};
}

/// Full configuration as a JSON object, for the run manifest.
inline nlohmann::json to_json(const RunConfig& rc) {
    const auto& c = rc.sweep;
    nlohmann::json methods = nlohmann::json::array();
    for (Method m : c.methods) methods.push_back(to_string(m));
    nlohmann::json settings = nlohmann::json::array();
    for (const auto& s : c.settings) {
        settings.push_back({{"name", s.name}, {"B", s.params.B}, {"s", s.params.s}, {"p_B", s.params.p_B}});
    }
    auto axis = [](const Axis& a) {
        return nlohmann::json{{"min", a.min}, {"max", a.max}, {"points", a.points}, {"centered", a.centered}};
    };
    return {{"model",
             {{"N", c.base.N},
              {"M", c.base.M},
              {"q", c.base.q},
              {"zeta", c.base.zeta},
              {"sigma_s2", c.base.sigma_s2},
              {"sigma_d2", c.base.sigma_d2},
              {"gamma", c.base.gamma},
              {"sigma_f2", c.base.sigma_f2},
              {"sigma_nu2", c.base.sigma_nu2}}},
            {"settings", settings},
            {"grid", {{"phi", axis(c.phi)}, {"p_B", axis(c.p_B)}, {"q", axis(c.q)}}},
            {"methods", methods},
            {"samples", c.samples},
            {"seed", c.seed},
            {"workers", c.workers},
            {"solver",
             {{"kind", c.solver.solver == EigenSolver::lanczos ? "lanczos" : "power"},
              {"tol", c.solver.tol},
              {"max_iter", c.solver.max_iter},
              {"krylov_dim", c.solver.krylov_dim}}},
            {"replica",
             {{"pop_size", c.replica.pop_size},
              {"equilibration_sweeps", c.replica.equilibration_sweeps},
              {"measurement_sweeps", c.replica.measurement_sweeps},
              {"bisection_tol", c.replica.bisection_tol},
              {"max_probes", c.replica.max_probes},
              {"max_redraw_fraction", c.replica.max_redraw_fraction},
              {"bracket_N", c.replica.bracket_instance_N}}},
            {"corsi_form", c.corsi_form == CorsiForm::asymptotic ? "asymptotic" : "finite"},
            {"gap_scales", c.scales},
            {"simulate",
             {{"horizon", rc.simulate.horizon},
              {"paths", rc.simulate.paths},
              {"static_factor", rc.simulate.static_factor},
              {"trace_assets", rc.simulate.trace_assets},
              {"target_spread", rc.simulate.target_spread},
              {"recapitalize", rc.simulate.recapitalize}}},
            {"out_dir", c.out_dir},
            {"format", rc.format}};
}

namespace detail {

/// Blue (low) to white (at the threshold) to red (high) colour scale.
inline std::string heat_colour(double value, double lo, double hi, double level) {
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    double r, g, b;
    if (value <= level) {
        const double t = hi > lo ? std::clamp((value - lo) / std::max(level - lo, 1e-300), 0.0, 1.0) : 1.0;
        r = lerp(49, 247, t);
        g = lerp(54, 247, t);
        b = lerp(149, 247, t);
    } else {
        const double t = std::clamp((value - level) / std::max(hi - level, 1e-300), 0.0, 1.0);
        r = lerp(247, 165, t);
        g = lerp(247, 0, t);
        b = lerp(247, 38, t);
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(r), static_cast<int>(g), static_cast<int>(b));
    return buf;
}

}  // namespace detail

/// Heatmap of one method's estimate over the (p_B, phi) grid with the
/// level-crossing line drawn on top. p_B runs left to right, phi bottom to top.
inline void write_heatmap_svg(std::ostream& os, const std::vector<CellResult>& cells, const SweepConfig& cfg, Method m,
                              double level = 1.0) {
    const auto phis = cfg.phi.values();
    const auto pbs = cfg.p_B.values();
    const double cell_px = std::max(6.0, 480.0 / static_cast<double>(std::max(phis.size(), pbs.size())));
    const double margin = 60.0;
    const double width = cell_px * static_cast<double>(pbs.size());
    const double height = cell_px * static_cast<double>(phis.size());
    double lo = 0.0, hi = level;
    for (const auto& c : cells) {
        if (const auto* r = c.find(m)) hi = std::max(hi, r->estimate.value);
    }
    lo = hi;
    for (const auto& c : cells) {
        if (const auto* r = c.find(m)) lo = std::min(lo, r->estimate.value);
    }
    auto x_of = [&](double pb) {
        const double span = cfg.p_B.max - cfg.p_B.min;
        return margin + (span > 0 ? (pb - cfg.p_B.min) / span : 0.5) * width;
    };
    auto y_of = [&](double phi) {
        const double span = phis.size() > 1 ? phis.back() - phis.front() : 1.0;
        const double step = phis.size() > 1 ? span / static_cast<double>(phis.size() - 1) : 1.0;
        const double f = (phi - phis.front() + 0.5 * step) / (span + step);
        return margin + height * (1.0 - f);
    };
    using detail::num;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width + 2 * margin) << "\" height=\""
       << num(height + 2 * margin) << "\">\n";
    os << "<title>E[lambda_max] " << to_string(m) << "</title>\n";
    for (const auto& c : cells) {
        const auto* r = c.find(m);
        const auto a = static_cast<std::size_t>(c.index / pbs.size());
        const auto b = c.index % pbs.size();
        const double x = margin + cell_px * static_cast<double>(b);
        const double y = margin + height - cell_px * static_cast<double>(a + 1);
        const std::string fill = r ? detail::heat_colour(r->estimate.value, lo, hi, level) : "#888888";
        os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cell_px) << "\" height=\""
           << num(cell_px) << "\" fill=\"" << fill << "\"/>\n";
    }
    const auto contour = extract_contour(cells, m, level);
    if (!contour.empty()) {
        os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"2\" points=\"";
        for (const auto& p : contour) os << num(x_of(p.p_B)) << ',' << num(y_of(p.phi)) << ' ';
        os << "\"/>\n";
    }
    os << "<text x=\"" << num(margin + width / 2) << "\" y=\"" << num(height + margin + 35)
       << "\" text-anchor=\"middle\" font-size=\"14\">p_B</text>\n";
    os << "<text x=\"20\" y=\"" << num(margin + height / 2) << "\" font-size=\"14\">phi</text>\n";
    os << "<text x=\"" << num(margin) << "\" y=\"30\" font-size=\"14\">" << to_string(m) << ": min " << num(lo)
       << ", max " << num(hi) << ", contour at " << num(level) << "</text>\n";
    os << "</svg>\n";
}

}  // namespace finstab
