#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "network.hpp"
#include "parallel.hpp"
#include "params.hpp"
#include "spectral.hpp"
#include "stats.hpp"

namespace finstab {

/// Surrogate Phi ~ kappa X X^T and the sparse bipartite ensemble it is
/// averaged over.
struct ApproxPhiSpec {
    double c = 0.0;
    double kappa = 0.0;
    double q = 0.0;
    double alpha = 0.0;
    std::vector<WeightAtom> weights;
    double asset_mean_degree = 0.0;        // institutions per asset, q/alpha
    double institution_mean_degree = 0.0;  // assets per institution, q*alpha
};

inline ApproxPhiSpec make_approx_spec(const ModelParams& p, const HeterogeneityParams& h) {
    const auto d = derive(p, h);
    ApproxPhiSpec s;
    s.c = d.c;
    s.kappa = d.kappa;
    s.q = p.q;
    s.alpha = d.alpha;
    s.weights = {{h.B, h.p_B}, {h.s, h.p_s}};
    s.asset_mean_degree = p.q / d.alpha;
    s.institution_mean_degree = p.q * d.alpha;
    return s;
}

/// kappa X X^T for a fresh X. The same seed yields the same X as sample_phi,
/// so the two operators can be compared sample by sample.
inline PhiOperator approx_phi_sample(const ModelParams& p, const HeterogeneityParams& h, std::uint64_t seed) {
    const auto d = derive(p, h);
    return PhiOperator::from_holdings(sample_holdings(p, h, seed), d.kappa);
}

// Population dynamics for the top eigenpair of the bipartite operator
//   H = [[0, X], [X^T, 0]],   lambda_max(X X^T) = mu_max(H)^2.
// Cavity messages on the tree-like Poisson bipartite graph, for a probe mu:
//   omega_{a->b} = mu - sum_{l in da \ b} K_al^2 / omega_{l->a}
//   v_{a->b}     = (1/omega_{a->b}) sum_{l in da \ b} K_al v_{l->a}
// The omega recursion has a positive fixed point above the bulk; the linear
// v recursion then grows (mu < mu_max) or decays (mu > mu_max). mu_max is
// where the per-sweep growth factor of v crosses 1.
// Rare high-degree neighbourhoods push single messages through omega = 0 even
// above mu_max; such a draw is a resonance of a finite cluster, not of the
// giant component, so it is redrawn. Only when redraws exceed a small fraction
// of a half-sweep is mu treated as lying inside the bulk.

/// Two populations of cavity messages: asset -> institution and
/// institution -> asset.
struct PopulationState {
    std::vector<double> omega_asset, v_asset;
    std::vector<double> omega_inst, v_inst;
    std::size_t sweep_count = 0;
    std::uint64_t seed = 0;
    double log_growth = 0.0;          // mean log growth per half-sweep over the measurement window
    double log_growth_stderr = 0.0;   // batch-means standard error of log_growth

    std::size_t size() const { return omega_asset.size(); }

    static PopulationState fresh(std::size_t size, double mu, std::uint64_t seed) {
        PopulationState s;
        s.omega_asset.assign(size, mu);
        s.omega_inst.assign(size, mu);
        s.v_asset.assign(size, 1.0);
        s.v_inst.assign(size, 1.0);
        s.seed = seed;
        return s;
    }

    bool finite() const {
        auto ok = [](const std::vector<double>& a) {
            for (double x : a) {
                if (!std::isfinite(x)) return false;
            }
            return true;
        };
        return ok(omega_asset) && ok(v_asset) && ok(omega_inst) && ok(v_inst);
    }
};

struct ReplicaOptions {
    std::size_t pop_size = 100000;
    std::size_t equilibration_sweeps = 1000;
    std::size_t measurement_sweeps = 1000;
    std::uint64_t seed = 1;
    double bisection_tol = 1e-3;     // relative width of the final lambda bracket
    std::size_t max_probes = 60;
    double upper_bracket = 0.0;      // lambda; 0 = twice a large-instance Lanczos estimate
    std::size_t bracket_instance_N = 4000;
    bool warm_start = true;          // reuse the last healthy population between probes
    double max_redraw_fraction = 0.01;  // redraws per half-sweep above which mu is inside the bulk
};

enum class ProbeOutcome { below_edge, below_max, above_max };

inline std::string to_string(ProbeOutcome o) {
    switch (o) {
        case ProbeOutcome::below_edge: return "below_spectral_edge";
        case ProbeOutcome::below_max: return "below_lambda_max";
        case ProbeOutcome::above_max: return "above_lambda_max";
    }
    return "unknown";
}

struct ProbeRecord {
    std::size_t index = 0;
    double lambda = 0.0;
    double mu = 0.0;
    ProbeOutcome outcome = ProbeOutcome::below_edge;
    double log_growth = 0.0;
    double log_growth_stderr = 0.0;
    std::size_t sweeps = 0;
    double redraw_fraction = 0.0;    // redrawn messages / accepted messages over the probe
};

struct ReplicaResult {
    EigEstimate estimate;
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;
    std::vector<ProbeRecord> probes;
    PopulationState state;
};

namespace detail {

/// Poisson sampling by inversion of a tabulated CDF. The std distribution
/// is far too slow for one draw per population member per sweep.
class PoissonTable {
public:
    explicit PoissonTable(double mean) {
        if (!(mean >= 0.0) || !std::isfinite(mean)) throw std::invalid_argument("Poisson mean must be finite and >= 0");
        double pmf = std::exp(-mean);
        double acc = pmf;
        cdf_.push_back(acc);
        for (int k = 1; 1.0 - acc > 1e-17 && k < 100000; ++k) {
            pmf *= mean / k;
            acc += pmf;
            cdf_.push_back(acc);
            if (pmf == 0.0 && static_cast<double>(k) > mean) break;
        }
        cdf_.back() = 1.0;
    }

    int operator()(double u) const {
        return static_cast<int>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    }

private:
    std::vector<double> cdf_;
};

class CavityUpdater {
public:
    CavityUpdater(const ApproxPhiSpec& spec, std::uint64_t seed, double max_redraw_fraction)
        : rng_(seed),
          max_redraw_fraction_(max_redraw_fraction),
          asset_degree_(spec.asset_mean_degree),
          inst_degree_(spec.institution_mean_degree),
          atoms_(spec.weights) {
        double acc = 0.0;
        for (const auto& a : atoms_) {
            acc += a.probability;
            cumulative_.push_back(acc);
        }
    }

    /// One full sweep. Returns false if too many cavity precisions had to be
    /// redrawn, i.e. mu lies at or below the edge of the bulk.
    bool sweep(PopulationState& s, double mu, double& log_growth) {
        double ga = 0.0, gb = 0.0;
        if (!half_sweep(s.omega_inst, s.v_inst, asset_degree_, mu, s.omega_asset, s.v_asset, ga)) return false;
        if (!half_sweep(s.omega_asset, s.v_asset, inst_degree_, mu, s.omega_inst, s.v_inst, gb)) return false;
        ++s.sweep_count;
        log_growth = 0.5 * (std::log(ga) + std::log(gb));
        return std::isfinite(log_growth);
    }

    std::uint64_t redraws() const { return redraws_; }
    std::uint64_t accepted() const { return accepted_; }

private:
    double draw_unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    // One 64-bit draw per edge: the high half picks the neighbour by
    // multiply-shift, the low half picks the investment size.
    bool half_sweep(const std::vector<double>& omega_in, const std::vector<double>& v_in,
                    const PoissonTable& degree, double mu, std::vector<double>& omega_out,
                    std::vector<double>& v_out, double& growth) {
        const std::size_t n = omega_out.size();
        const auto n_in = static_cast<std::uint64_t>(omega_in.size());
        inv_omega_.resize(omega_in.size());
        for (std::size_t r = 0; r < omega_in.size(); ++r) inv_omega_[r] = 1.0 / omega_in[r];
        const bool two_point = atoms_.size() == 2;
        const double w0 = atoms_[0].value, w1 = atoms_.back().value;
        const double p0 = cumulative_.front() / cumulative_.back();
        double old_mean = 0.0;
        for (double v : v_out) old_mean += v;
        old_mean /= static_cast<double>(n);
        double new_mean = 0.0;
        const auto budget = static_cast<std::uint64_t>(max_redraw_fraction_ * static_cast<double>(n));
        std::uint64_t redraws = 0;
        for (std::size_t m = 0; m < n; ++m) {
            for (;;) {
                const int k = degree(draw_unit());
                double s2 = 0.0, sv = 0.0;
                for (int l = 0; l < k; ++l) {
                    const std::uint64_t bits = rng_();
                    const auto r = static_cast<std::size_t>(((bits >> 32) * n_in) >> 32);
                    double w;
                    if (two_point) {
                        w = static_cast<double>(bits & 0xffffffffULL) * 0x1.0p-32 < p0 ? w0 : w1;
                    } else {
                        w = draw_weight();
                    }
                    s2 += w * w * inv_omega_[r];
                    sv += w * v_in[r];
                }
                const double omega = mu - s2;
                if (omega > 0.0) {
                    omega_out[m] = omega;
                    v_out[m] = sv / omega;
                    break;
                }
                if (++redraws > budget) {
                    redraws_ += redraws;
                    return false;
                }
            }
            new_mean += v_out[m];
        }
        redraws_ += redraws;
        accepted_ += n;
        new_mean /= static_cast<double>(n);
        if (!(new_mean > 0.0) || !(old_mean > 0.0)) return false;
        growth = new_mean / old_mean;
        for (auto& v : v_out) v /= new_mean;
        return true;
    }

    double draw_weight() {
        const double u = draw_unit() * cumulative_.back();
        for (std::size_t k = 0; k + 1 < atoms_.size(); ++k) {
            if (u < cumulative_[k]) return atoms_[k].value;
        }
        return atoms_.back().value;
    }

    Xoshiro256 rng_;
    double max_redraw_fraction_;
    std::uint64_t redraws_ = 0;
    std::uint64_t accepted_ = 0;
    PoissonTable asset_degree_;
    PoissonTable inst_degree_;
    std::vector<double> inv_omega_;
    std::vector<WeightAtom> atoms_;
    std::vector<double> cumulative_;
};

inline double upper_bracket_estimate(const ApproxPhiSpec& spec, std::size_t n_assets, std::uint64_t seed) {
    ModelParams big;
    big.N = n_assets;
    big.M = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(static_cast<double>(n_assets) /
                                                                               (spec.alpha * spec.alpha))));
    big.q = spec.q;
    auto x = sample_holdings(big.N, big.M, std::min(1.0, big.edge_probability()), spec.weights, seed);
    SolverOptions opt;
    opt.tol = 1e-6;
    return lambda_max(PhiOperator::from_holdings(x, spec.kappa), opt).value;
}

}  // namespace detail

/// Runs one bisection probe at eigenvalue `lambda` of kappa X X^T.
inline ProbeRecord replica_probe(const ApproxPhiSpec& spec, double lambda, PopulationState& state,
                                 const ReplicaOptions& opt, std::uint64_t probe_seed) {
    ProbeRecord rec;
    rec.lambda = lambda;
    rec.mu = std::sqrt(lambda / spec.kappa);
    if (!(lambda > 0.0)) {
        rec.outcome = ProbeOutcome::below_edge;
        return rec;
    }
    detail::CavityUpdater updater(spec, probe_seed, opt.max_redraw_fraction);
    auto redraw_fraction = [&] {
        return updater.accepted() == 0 ? 1.0
                                       : static_cast<double>(updater.redraws()) / static_cast<double>(updater.accepted());
    };
    RunningStats window;
    std::vector<double> series;
    series.reserve(opt.measurement_sweeps);
    const std::size_t total = opt.equilibration_sweeps + opt.measurement_sweeps;
    for (std::size_t t = 0; t < total; ++t) {
        double lg = 0.0;
        if (!updater.sweep(state, rec.mu, lg)) {
            rec.outcome = ProbeOutcome::below_edge;
            rec.sweeps = t + 1;
            rec.redraw_fraction = redraw_fraction();
            return rec;
        }
        if (t >= opt.equilibration_sweeps) series.push_back(lg);
    }
    rec.sweeps = total;
    rec.redraw_fraction = redraw_fraction();
    // Batch means over 10 blocks; successive sweeps are correlated.
    const std::size_t blocks = std::min<std::size_t>(10, series.size());
    RunningStats batch;
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t lo = b * series.size() / blocks, hi = (b + 1) * series.size() / blocks;
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) acc += series[i];
        batch.add(acc / static_cast<double>(hi - lo));
    }
    rec.log_growth = batch.mean();
    rec.log_growth_stderr = batch.stderr_of_mean();
    state.log_growth = rec.log_growth;
    state.log_growth_stderr = rec.log_growth_stderr;
    rec.outcome = rec.log_growth > 0.0 ? ProbeOutcome::below_max : ProbeOutcome::above_max;
    return rec;
}

/// Large-N average largest eigenvalue of kappa X X^T by bisection on the
/// growth of the cavity eigenvector population. Probes at or below the
/// spectral edge move the lower end of the bracket.
inline ReplicaResult replica_lambda_max(const ApproxPhiSpec& spec, const ReplicaOptions& opt = {},
                                        const std::function<void(const ProbeRecord&)>& log = {}) {
    if (opt.pop_size < 1000) throw std::invalid_argument("replica: population size must be >= 1000");
    if (opt.pop_size > (std::size_t{1} << 31)) throw std::invalid_argument("replica: population size too large");
    if (!std::isfinite(spec.asset_mean_degree) || !std::isfinite(spec.institution_mean_degree)) {
        throw std::invalid_argument("replica: mean degrees must be finite");
    }
    if (!(spec.kappa > 0.0)) throw std::invalid_argument("replica: kappa must be > 0");
    if (!(opt.bisection_tol > 0.0)) throw std::invalid_argument("replica: bisection_tol must be > 0");
    if (!(opt.max_redraw_fraction >= 0.0 && opt.max_redraw_fraction < 1.0)) {
        throw std::invalid_argument("replica: max_redraw_fraction must lie in [0, 1)");
    }

    ReplicaResult res;
    double hi = opt.upper_bracket > 0.0
                    ? opt.upper_bracket
                    : 2.0 * detail::upper_bracket_estimate(spec, opt.bracket_instance_N, derive_seed(opt.seed, 0xb0));
    double lo = 0.0;
    PopulationState healthy;
    bool have_healthy = false;

    for (std::size_t k = 0; k < opt.max_probes && (hi - lo) > opt.bisection_tol * hi; ++k) {
        const double mid = 0.5 * (lo + hi);
        const double mu = std::sqrt(mid / spec.kappa);
        const std::uint64_t probe_seed = derive_seed(opt.seed, k);
        PopulationState state = (opt.warm_start && have_healthy)
                                    ? healthy
                                    : PopulationState::fresh(opt.pop_size, mu, probe_seed);
        auto rec = replica_probe(spec, mid, state, opt, probe_seed);
        rec.index = k;
        if (rec.outcome == ProbeOutcome::above_max) {
            hi = mid;
        } else {
            lo = mid;
        }
        if (rec.outcome != ProbeOutcome::below_edge && state.finite()) {
            healthy = state;
            have_healthy = true;
        }
        res.probes.push_back(rec);
        if (log) log(rec);
    }

    res.bracket_lo = lo;
    res.bracket_hi = hi;
    res.state = have_healthy ? std::move(healthy) : PopulationState{};
    res.state.seed = opt.seed;
    auto& e = res.estimate;
    e.value = 0.5 * (lo + hi);
    e.std_error = 0.5 * (hi - lo);
    e.samples = 1;
    e.method = Method::replica;
    e.iterations = res.probes.size();
    e.converged = (hi - lo) <= opt.bisection_tol * hi && have_healthy;
    e.nonconverged = e.converged ? 0 : 1;
    return res;
}

}  // namespace finstab
