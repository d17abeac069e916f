#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "corsi.hpp"
#include "network.hpp"
#include "parallel.hpp"
#include "params.hpp"
#include "replica.hpp"
#include "spectral.hpp"
#include "stats.hpp"

namespace finstab {

/// Evenly spaced axis. Endpoint spacing includes min and max; centered
/// spacing places points at cell midpoints of [min, max], which keeps them
/// away from both ends.
struct Axis {
    double min = 0.0;
    double max = 1.0;
    std::size_t points = 1;
    bool centered = false;

    std::vector<double> values() const {
        if (points == 0) throw std::invalid_argument("axis must have at least one point");
        std::vector<double> v(points);
        const double span = max - min;
        for (std::size_t k = 0; k < points; ++k) {
            if (centered) {
                v[k] = min + span * (static_cast<double>(k) + 0.5) / static_cast<double>(points);
            } else {
                v[k] = points == 1 ? min : min + span * static_cast<double>(k) / static_cast<double>(points - 1);
            }
        }
        return v;
    }
};

enum class CorsiForm { asymptotic, finite };

/// A named heterogeneity setting used by q-sweeps and gap analyses.
struct HeterogeneitySetting {
    std::string name;
    HeterogeneityParams params;
};

struct SweepConfig {
    ModelParams base;
    Axis phi{0.0, 0.99, 40, false};
    Axis p_B{0.0, 1.0, 40, true};
    Axis q{2.0, 30.0, 15, false};
    std::vector<HeterogeneitySetting> settings{{"homogeneous", homogeneous()},
                                               {"heterogeneous", solve_heterogeneity(0.9, 7.0 / 27.0)}};
    std::vector<Method> methods{Method::diagonalization, Method::corsi};
    std::size_t samples = 200;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::string out_dir = "out";
    SolverOptions solver;
    ReplicaOptions replica;
    CorsiForm corsi_form = CorsiForm::asymptotic;
    std::vector<std::size_t> scales{1, 2, 4};

    void validate() const {
        base.validate();
        if (samples < 1) throw ParamError("samples must be >= 1");
        if (methods.empty()) throw ParamError("at least one method is required");
        if (phi.points < 1 || p_B.points < 1 || q.points < 1) throw ParamError("grid axes must be non-empty");
        if (scales.empty()) throw ParamError("gap scales must be non-empty");
        for (auto d : scales) {
            if (d < 1) throw ParamError("gap scales must be >= 1");
        }
        if (settings.empty()) throw ParamError("at least one heterogeneity setting is required");
        for (const auto& s : settings) s.params.validate();
        if (!(solver.tol > 0.0)) throw ParamError("solver tolerance must be > 0");
        for (double v : phi.values()) {
            if (!(v >= 0.0 && v < 1.0)) throw ParamError("grid.phi values must lie in [0, 1)");
        }
        for (double v : p_B.values()) {
            if (!(v > 0.0 && v < 1.0)) throw ParamError("grid.p_B values must lie in (0, 1)");
        }
        for (double v : q.values()) {
            if (!(v > 0.0)) throw ParamError("grid.q values must be > 0");
        }
    }

    bool has_method(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }
};

struct MethodResult {
    Method method = Method::diagonalization;
    EigEstimate estimate;
    bool ok = false;
    std::string error;
};

enum class Verdict { stable, unstable, indeterminate };

/// Agreement of an approximate verdict with the diagonalization truth.
enum class Agreement { true_unstable, false_stable, false_unstable, true_stable, indeterminate };

inline std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::stable: return "stable";
        case Verdict::unstable: return "unstable";
        case Verdict::indeterminate: return "indeterminate";
    }
    return "unknown";
}

inline std::string to_string(Agreement a) {
    switch (a) {
        case Agreement::true_unstable: return "true-unstable";
        case Agreement::false_stable: return "false-stable";
        case Agreement::false_unstable: return "false-unstable";
        case Agreement::true_stable: return "true-stable";
        case Agreement::indeterminate: return "indeterminate";
    }
    return "unknown";
}

struct ApproxVerdict {
    Method method = Method::corsi;
    Verdict verdict = Verdict::indeterminate;
    Agreement agreement = Agreement::indeterminate;
};

struct CellClassification {
    Verdict truth = Verdict::indeterminate;
    std::vector<ApproxVerdict> approx;

    const ApproxVerdict* find(Method m) const {
        for (const auto& a : approx) {
            if (a.method == m) return &a;
        }
        return nullptr;
    }
};

struct CellResult {
    std::size_t index = 0;
    std::string setting;
    std::size_t scale = 1;
    double phi = 0.0;
    double p_B = 0.0;
    double q = 0.0;
    std::size_t N = 0;
    std::size_t M = 0;
    HeterogeneityParams het;
    DerivedScalars derived;
    std::vector<MethodResult> results;
    std::optional<CellClassification> classification;
    bool failed = false;
    std::string error;

    const MethodResult* find(Method m) const {
        for (const auto& r : results) {
            if (r.method == m && r.ok) return &r;
        }
        return nullptr;
    }
};

/// Stability verdict at threshold `level`; estimates within two standard
/// errors of it are indeterminate.
inline Verdict verdict_of(const EigEstimate& e, double level = 1.0) {
    if (std::abs(e.value - level) < 2.0 * e.std_error) return Verdict::indeterminate;
    return e.value > level ? Verdict::unstable : Verdict::stable;
}

inline Agreement agreement_of(Verdict truth, Verdict approx) {
    if (truth == Verdict::indeterminate || approx == Verdict::indeterminate) return Agreement::indeterminate;
    if (truth == Verdict::unstable) {
        return approx == Verdict::unstable ? Agreement::true_unstable : Agreement::false_stable;
    }
    return approx == Verdict::unstable ? Agreement::false_unstable : Agreement::true_stable;
}

inline CellClassification classify(const CellResult& cell, double level = 1.0) {
    const auto* truth = cell.find(Method::diagonalization);
    if (!truth) throw std::invalid_argument("classify: diagonalization estimate missing");
    CellClassification c;
    c.truth = verdict_of(truth->estimate, level);
    for (const auto& r : cell.results) {
        if (r.method == Method::diagonalization || !r.ok) continue;
        ApproxVerdict a;
        a.method = r.method;
        a.verdict = verdict_of(r.estimate, level);
        a.agreement = agreement_of(c.truth, a.verdict);
        c.approx.push_back(a);
    }
    return c;
}

/// Counts of each agreement category for one approximate method.
struct AgreementCounts {
    std::size_t true_unstable = 0;
    std::size_t false_stable = 0;
    std::size_t false_unstable = 0;
    std::size_t true_stable = 0;
    std::size_t indeterminate = 0;
};

inline AgreementCounts count_agreement(const std::vector<CellResult>& cells, Method m) {
    AgreementCounts n;
    for (const auto& c : cells) {
        if (!c.classification) continue;
        const auto* a = c.classification->find(m);
        if (!a) continue;
        switch (a->agreement) {
            case Agreement::true_unstable: ++n.true_unstable; break;
            case Agreement::false_stable: ++n.false_stable; break;
            case Agreement::false_unstable: ++n.false_unstable; break;
            case Agreement::true_stable: ++n.true_stable; break;
            case Agreement::indeterminate: ++n.indeterminate; break;
        }
    }
    return n;
}

namespace detail {

inline EigEstimate corsi_estimate(const ModelParams& p, const HeterogeneityParams& h, CorsiForm form) {
    const double b = second_moment_b(h);
    EigEstimate e;
    e.value = form == CorsiForm::asymptotic ? corsi_lambda_max(p, b) : corsi_lambda_max_finite(p, b);
    e.samples = 1;
    e.method = Method::corsi;
    return e;
}

/// Evaluates every requested method at one parameter point. Failures are
/// recorded on the cell and never thrown.
inline void evaluate_cell(CellResult& cell, const SweepConfig& cfg, std::uint64_t cell_seed) {
    ModelParams p = cfg.base;
    p.N = cell.N;
    p.M = cell.M;
    p.q = cell.q;
    try {
        cell.derived = derive(p, cell.het);
    } catch (const std::exception& ex) {
        cell.failed = true;
        cell.error = ex.what();
        return;
    }
    McOptions mc;
    mc.workers = 1;
    mc.solver = cfg.solver;
    for (Method m : cfg.methods) {
        MethodResult r;
        r.method = m;
        try {
            switch (m) {
                case Method::diagonalization:
                    r.estimate = mc_lambda_max(p, cell.het, cfg.samples, derive_seed(cell_seed, 1), mc);
                    if (!r.estimate.converged) {
                        r.error = std::to_string(r.estimate.nonconverged) + " samples did not converge";
                    }
                    break;
                case Method::corsi:
                    r.estimate = corsi_estimate(p, cell.het, cfg.corsi_form);
                    break;
                case Method::replica: {
                    auto ro = cfg.replica;
                    ro.seed = derive_seed(cell_seed, 3);
                    r.estimate = replica_lambda_max(make_approx_spec(p, cell.het), ro).estimate;
                    if (!r.estimate.converged) r.error = "replica bisection did not converge";
                    break;
                }
            }
            r.ok = std::isfinite(r.estimate.value) && r.error.empty();
        } catch (const std::exception& ex) {
            r.ok = false;
            r.error = ex.what();
        }
        if (!r.ok) {
            cell.failed = true;
            if (cell.error.empty()) cell.error = to_string(m) + ": " + r.error;
        }
        cell.results.push_back(std::move(r));
    }
    if (cell.find(Method::diagonalization)) cell.classification = classify(cell);
}

inline void evaluate_all(std::vector<CellResult>& cells, const SweepConfig& cfg) {
    parallel_for(cells.size(), cfg.workers, [&](std::size_t k) {
        evaluate_cell(cells[k], cfg, derive_seed(cfg.seed, cells[k].index));
    });
}

}  // namespace detail

/// phi x p_B grid at the base (N, M, q). Cell k uses seed derive_seed(seed, k)
/// with k = phi_index * p_B.points + p_B_index.
inline std::vector<CellResult> run_phase_diagram(const SweepConfig& cfg) {
    cfg.validate();
    const auto phis = cfg.phi.values();
    const auto pbs = cfg.p_B.values();
    std::vector<CellResult> cells;
    cells.reserve(phis.size() * pbs.size());
    for (std::size_t a = 0; a < phis.size(); ++a) {
        for (std::size_t b = 0; b < pbs.size(); ++b) {
            CellResult c;
            c.index = cells.size();
            c.setting = "grid";
            c.phi = phis[a];
            c.p_B = pbs[b];
            c.q = cfg.base.q;
            c.N = cfg.base.N;
            c.M = cfg.base.M;
            try {
                c.het = solve_heterogeneity(c.phi, c.p_B);
            } catch (const std::exception& ex) {
                c.failed = true;
                c.error = ex.what();
            }
            cells.push_back(std::move(c));
        }
    }
    parallel_for(cells.size(), cfg.workers, [&](std::size_t k) {
        if (!cells[k].failed) detail::evaluate_cell(cells[k], cfg, derive_seed(cfg.seed, cells[k].index));
    });
    return cells;
}

/// One point of the level-crossing line of a phase diagram.
struct ContourPoint {
    double p_B = 0.0;
    double phi = 0.0;
};

/// For every p_B column, walks phi upwards and linearly interpolates each
/// crossing of `level` between consecutive cells.
inline std::vector<ContourPoint> extract_contour(const std::vector<CellResult>& cells, Method m, double level = 1.0) {
    std::vector<double> pbs;
    for (const auto& c : cells) {
        if (std::find(pbs.begin(), pbs.end(), c.p_B) == pbs.end()) pbs.push_back(c.p_B);
    }
    std::sort(pbs.begin(), pbs.end());
    std::vector<ContourPoint> out;
    for (double pb : pbs) {
        std::vector<std::pair<double, double>> column;
        for (const auto& c : cells) {
            if (c.p_B != pb) continue;
            if (const auto* r = c.find(m)) column.emplace_back(c.phi, r->estimate.value);
        }
        std::sort(column.begin(), column.end());
        for (std::size_t k = 0; k + 1 < column.size(); ++k) {
            const auto [x0, y0] = column[k];
            const auto [x1, y1] = column[k + 1];
            if ((y0 - level) * (y1 - level) < 0.0 || (y0 == level && y1 != level)) {
                const double t = (level - y0) / (y1 - y0);
                out.push_back({pb, x0 + t * (x1 - x0)});
            }
        }
    }
    return out;
}

/// E[lambda_max](q) for every heterogeneity setting at the base (N, M).
inline std::vector<CellResult> run_q_sweep(const SweepConfig& cfg) {
    cfg.validate();
    const auto qs = cfg.q.values();
    if (qs.size() < 3) throw ParamError("q-sweep needs at least three q values");
    std::vector<CellResult> cells;
    for (const auto& s : cfg.settings) {
        for (double q : qs) {
            CellResult c;
            c.index = cells.size();
            c.setting = s.name;
            c.het = s.params;
            c.phi = s.params.heterogeneity();
            c.p_B = s.params.p_B;
            c.q = q;
            c.N = cfg.base.N;
            c.M = cfg.base.M;
            cells.push_back(std::move(c));
        }
    }
    detail::evaluate_all(cells, cfg);
    return cells;
}

struct ArgminReport {
    std::string setting;
    Method method = Method::diagonalization;
    double q = 0.0;
    double value = 0.0;
    bool interior = false;  // minimum is not at either end of the sampled range
};

inline std::vector<ArgminReport> q_sweep_argmin(const std::vector<CellResult>& cells, const std::vector<Method>& methods) {
    std::vector<std::string> settings;
    for (const auto& c : cells) {
        if (std::find(settings.begin(), settings.end(), c.setting) == settings.end()) settings.push_back(c.setting);
    }
    std::vector<ArgminReport> out;
    for (const auto& s : settings) {
        for (Method m : methods) {
            std::vector<std::pair<double, double>> curve;
            for (const auto& c : cells) {
                if (c.setting != s) continue;
                if (const auto* r = c.find(m)) curve.emplace_back(c.q, r->estimate.value);
            }
            if (curve.empty()) continue;
            std::sort(curve.begin(), curve.end());
            const auto it = std::min_element(curve.begin(), curve.end(),
                                             [](const auto& a, const auto& b) { return a.second < b.second; });
            ArgminReport rep;
            rep.setting = s;
            rep.method = m;
            rep.q = it->first;
            rep.value = it->second;
            rep.interior = it != curve.begin() && it + 1 != curve.end();
            out.push_back(rep);
        }
    }
    return out;
}

struct GapRow {
    std::string setting;
    std::size_t scale = 1;
    double q = 0.0;
    std::size_t N = 0;
    std::size_t M = 0;
    EigEstimate diagonalization;
    double corsi = 0.0;          // large-N closed form
    double corsi_finite = 0.0;   // finite-N expected-matrix eigenvalue
    double corsi_gap = 0.0;      // (corsi - E[lambda]) / E[lambda]
    double corsi_gap_stderr = 0.0;
    double corsi_finite_gap = 0.0;
    Moment approx_lambda;        // E[lambda_max(kappa X X^T)]
    Moment paired_gap;           // mean of (lambda(kXX^T) - lambda(Phi)) / lambda(Phi) over shared X
    Moment paired_abs_gap;       // mean of |.| of the same quantity
    bool failed = false;
    std::string error;
};

/// Relative gaps of the closed form and of the surrogate kappa X X^T against
/// direct diagonalization, per scale d (matrices (d N) x (d M)) and q.
/// Sample k of row r uses derive_seed(derive_seed(seed, r), k) for both
/// operators, so the surrogate gap is paired on the same X.
inline std::vector<GapRow> run_gap_analysis(const SweepConfig& cfg) {
    cfg.validate();
    const auto qs = cfg.q.values();
    std::vector<GapRow> rows;
    for (const auto& s : cfg.settings) {
        for (auto d : cfg.scales) {
            for (double q : qs) {
                GapRow g;
                g.setting = s.name;
                g.scale = d;
                g.q = q;
                g.N = cfg.base.N * d;
                g.M = cfg.base.M * d;
                rows.push_back(g);
            }
        }
    }
    std::vector<HeterogeneityParams> het_of(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (const auto& s : cfg.settings) {
            if (s.name == rows[r].setting) het_of[r] = s.params;
        }
    }
    parallel_for(rows.size(), cfg.workers, [&](std::size_t r) {
        auto& g = rows[r];
        try {
            ModelParams p = cfg.base;
            p.N = g.N;
            p.M = g.M;
            p.q = g.q;
            const auto& h = het_of[r];
            const auto dv = derive(p, h);
            const std::uint64_t row_seed = derive_seed(cfg.seed, r);
            RunningStats phi_stats, approx_stats, gap_stats, abs_gap_stats;
            std::size_t nonconverged = 0, iterations = 0;
            for (std::size_t k = 0; k < cfg.samples; ++k) {
                const auto x = sample_holdings(p, h, derive_seed(row_seed, k));
                const auto lp = lambda_max(PhiOperator::from_weights(to_weights(x), dv.kappa0), cfg.solver);
                const auto la = lambda_max(PhiOperator::from_holdings(x, dv.kappa), cfg.solver);
                nonconverged += (!lp.converged) + (!la.converged);
                iterations += lp.iterations;
                phi_stats.add(lp.value);
                approx_stats.add(la.value);
                if (lp.value > 0.0) {
                    const double rel = (la.value - lp.value) / lp.value;
                    gap_stats.add(rel);
                    abs_gap_stats.add(std::abs(rel));
                }
            }
            g.diagonalization.value = phi_stats.mean();
            g.diagonalization.std_error = phi_stats.stderr_of_mean();
            g.diagonalization.samples = cfg.samples;
            g.diagonalization.iterations = iterations;
            g.diagonalization.nonconverged = nonconverged;
            g.diagonalization.converged = nonconverged == 0;
            g.approx_lambda = to_moment(approx_stats);
            g.paired_gap = to_moment(gap_stats);
            g.paired_abs_gap = to_moment(abs_gap_stats);
            const double b = second_moment_b(h);
            g.corsi = corsi_lambda_max(p, b);
            g.corsi_finite = corsi_lambda_max_finite(p, b);
            const double e = g.diagonalization.value;
            g.corsi_gap = (g.corsi - e) / e;
            g.corsi_gap_stderr = g.corsi / (e * e) * g.diagonalization.std_error;
            g.corsi_finite_gap = (g.corsi_finite - e) / e;
            if (nonconverged > 0) {
                g.failed = true;
                g.error = std::to_string(nonconverged) + " eigenvalue solves did not converge";
            }
        } catch (const std::exception& ex) {
            g.failed = true;
            g.error = ex.what();
        }
    });
    return rows;
}

inline bool any_failed(const std::vector<CellResult>& cells) {
    return std::any_of(cells.begin(), cells.end(), [](const auto& c) { return c.failed; });
}

inline bool any_failed(const std::vector<GapRow>& rows) {
    return std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.failed; });
}

}  // namespace finstab
