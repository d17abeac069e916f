#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "network.hpp"
#include "parallel.hpp"
#include "params.hpp"
#include "spectral.hpp"
#include "stats.hpp"

namespace finstab {

/// Endogenous return vector e_t of the linear price process.
struct MarketState {
    std::vector<double> e;
    std::size_t t = 0;
    bool diverged = false;

    static MarketState zero(std::size_t n) { return {std::vector<double>(n, 0.0), 0, false}; }
};

/// Magnitude beyond which a path is flagged as diverged and no longer advanced.
inline constexpr double kDivergenceBound = 1e150;

/// Exogenous shocks eps_{i,t} = f_i + nu_{i,t} with Gaussian f and nu.
/// With a static factor, f is drawn once when the model is built and kept for
/// the whole path; otherwise it is redrawn every step (serially independent
/// shocks). Either way Var(eps_{i,t}) = sigma_f2 + sigma_nu2.
class ShockModel {
public:
    ShockModel(std::size_t n, double sigma_f2, double sigma_nu2, std::uint64_t seed, bool static_factor = true)
        : sigma_f_(std::sqrt(sigma_f2)), sigma_nu_(std::sqrt(sigma_nu2)), static_factor_(static_factor), rng_(seed),
          factor_(n, 0.0) {
        if (!(sigma_f2 >= 0.0) || !(sigma_nu2 >= 0.0)) throw ParamError("shock variances must be >= 0");
        if (static_factor_) draw_factor();
    }

    std::size_t size() const { return factor_.size(); }
    double variance() const { return sigma_f_ * sigma_f_ + sigma_nu_ * sigma_nu_; }
    bool static_factor() const { return static_factor_; }
    const std::vector<double>& factor() const { return factor_; }

    std::vector<double> next() {
        if (!static_factor_) draw_factor();
        std::vector<double> eps(factor_.size());
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = factor_[i] + sigma_nu_ * normal_(rng_);
        return eps;
    }

private:
    void draw_factor() {
        for (auto& f : factor_) f = sigma_f_ * normal_(rng_);
    }

    double sigma_f_;
    double sigma_nu_;
    bool static_factor_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::vector<double> factor_;
};

/// e_t = Phi (e_{t-1} + eps_t). A diverged state is returned unchanged.
inline MarketState linear_step(const MarketState& state, const PhiOperator& op, std::span<const double> shock) {
    if (state.e.size() != op.dim() || shock.size() != op.dim()) {
        throw std::invalid_argument("linear_step: dimension mismatch");
    }
    MarketState next = state;
    if (state.diverged) return next;
    std::vector<double> r(state.e.size()), scratch;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = state.e[i] + shock[i];
    op.apply(r, next.e, scratch);
    ++next.t;
    for (double x : next.e) {
        if (!std::isfinite(x) || std::abs(x) > kDivergenceBound) {
            next.diverged = true;
            break;
        }
    }
    return next;
}

struct InsolvencyError : std::runtime_error {
    std::size_t institution;
    std::size_t step;
    InsolvencyError(std::size_t j, std::size_t t)
        : std::runtime_error("institution " + std::to_string(j) + " insolvent at step " + std::to_string(t)),
          institution(j), step(t) {}
};

/// Balance sheets of the M institutions under a common leverage target eta.
/// `target` holds A*_j, the post-trade asset level; after every rebalance
/// A_j = A*_j = eta E_j.
struct BankLedger {
    std::vector<double> assets;
    std::vector<double> equity;
    std::vector<double> target;
    double eta = 1.0;
    double gamma = 1.0;
    double alpha = 1.0;
    std::size_t step = 0;

    std::size_t size() const { return target.size(); }

    double leverage(std::size_t j) const { return assets[j] / equity[j]; }

    double mean_target() const {
        double s = 0.0;
        for (double a : target) s += a;
        return s / static_cast<double>(target.size());
    }

    /// Market capitalization estimate chi = mean(A*) / alpha^2, identical for
    /// every asset.
    double market_cap() const { return mean_target() / (alpha * alpha); }

    static BankLedger from_targets(std::vector<double> targets, double eta, double gamma, double alpha) {
        if (targets.empty()) throw ParamError("ledger needs at least one institution");
        if (!(eta > 1.0)) throw LeverageError("target leverage eta <= 1");
        if (!(gamma > 0.0) || !(alpha > 0.0)) throw ParamError("gamma and alpha must be > 0");
        BankLedger l;
        l.eta = eta;
        l.gamma = gamma;
        l.alpha = alpha;
        l.equity.resize(targets.size());
        for (std::size_t j = 0; j < targets.size(); ++j) {
            if (!(targets[j] > 0.0)) throw ParamError("institution targets must be > 0");
            l.equity[j] = targets[j] / eta;
        }
        l.assets = targets;
        l.target = std::move(targets);
        return l;
    }

    static BankLedger uniform(std::size_t m, double size, double eta, double gamma, double alpha) {
        return from_targets(std::vector<double>(m, size), eta, gamma, alpha);
    }
};

struct AgentStepResult {
    std::vector<double> portfolio_return;  // r^p_j
    std::vector<double> institution_trade; // D_j
    std::vector<double> asset_demand;      // d_i
    std::vector<double> e;                 // endogenous return e_i
    BankLedger ledger;
};

/// One trading round: institutions mark to market with the returns r, then
/// trade back to their leverage target along their fixed portfolio weights.
/// Price impact of the trades is e_i = d_i / (gamma chi).
inline AgentStepResult agent_step(const BankLedger& ledger, const PortfolioWeights& weights, std::span<const double> r) {
    const auto& w = weights.w;
    if (w.cols != ledger.size() || r.size() != w.rows) throw std::invalid_argument("agent_step: dimension mismatch");
    AgentStepResult out;
    out.portfolio_return.assign(w.cols, 0.0);
    w.multiply_transpose(r, out.portfolio_return);

    out.institution_trade.resize(w.cols);
    for (std::size_t j = 0; j < w.cols; ++j) {
        out.institution_trade[j] = out.portfolio_return[j] * ledger.target[j] * (ledger.eta - 1.0);
    }
    out.asset_demand.assign(w.rows, 0.0);
    w.multiply(out.institution_trade, out.asset_demand);

    const double chi = ledger.market_cap();
    out.e.resize(w.rows);
    for (std::size_t i = 0; i < w.rows; ++i) out.e[i] = out.asset_demand[i] / (ledger.gamma * chi);

    out.ledger = ledger;
    auto& l = out.ledger;
    ++l.step;
    for (std::size_t j = 0; j < w.cols; ++j) {
        const double pnl = out.portfolio_return[j] * ledger.target[j];
        l.equity[j] = ledger.equity[j] + pnl;
        if (!(l.equity[j] > 0.0)) throw InsolvencyError(j, l.step);
        l.assets[j] = ledger.target[j] + pnl + out.institution_trade[j];
        l.target[j] = l.eta * l.equity[j];
    }
    return out;
}

/// Applies the trades D_j to the holdings: X'_ij = X_ij (1 + D_j / sum_r X_rj).
inline HoldingsMatrix rebalance_holdings(const HoldingsMatrix& x, std::span<const double> institution_trade) {
    if (institution_trade.size() != x.x.cols) throw std::invalid_argument("rebalance_holdings: dimension mismatch");
    HoldingsMatrix out = x;
    const auto sums = x.x.column_sums();
    for (auto& e : out.x.entries) e.value *= 1.0 + institution_trade[e.col] / sums[e.col];
    return out;
}

/// Variance of the i-th mode after t steps from zero when shocks are serially
/// independent: var_eps * sum_{j=1..t} lambda^{2j}.
inline double geometric_variance(double lambda, double var_eps, std::size_t t) {
    double acc = 0.0, term = 1.0;
    for (std::size_t j = 1; j <= t; ++j) {
        term *= lambda * lambda;
        acc += term;
    }
    return var_eps * acc;
}

/// Limit of geometric_variance as t grows, for |lambda| < 1.
inline double stationary_geometric_variance(double lambda, double var_eps) {
    if (!(std::abs(lambda) < 1.0)) return std::numeric_limits<double>::infinity();
    return var_eps * lambda * lambda / (1.0 - lambda * lambda);
}

/// Same quantity when the factor part of the shock is fixed along the path:
/// sigma_f2 (sum_j lambda^j)^2 + sigma_nu2 sum_j lambda^{2j}.
inline double static_factor_variance(double lambda, double sigma_f2, double sigma_nu2, std::size_t t) {
    double s1 = 0.0, term = 1.0;
    for (std::size_t j = 1; j <= t; ++j) {
        term *= lambda;
        s1 += term;
    }
    return sigma_f2 * s1 * s1 + geometric_variance(lambda, sigma_nu2, t);
}

struct LinearizationOptions {
    std::size_t horizon = 50;
    double target_spread = 0.0;     // A*_j = 1 + spread * U(-1, 1)
    double lognormal_sigma = 0.0;   // if > 0, A*_j log-normal with this sigma instead
    bool recapitalize = true;       // hold equity at its initial level between steps
    bool static_factor = true;
};

struct LinearizationReport {
    double max_relative_deviation = 0.0;
    std::vector<double> step_deviation;  // ||e_agent - e_linear|| / ||e_linear|| per step
};

/// Drives the agent model and the linear process with the same shock path and
/// reports how far the agent endogenous returns drift from the linear ones.
/// With equal targets and recapitalization the two coincide up to rounding.
/// Without recapitalization institution sizes drift with their profit and
/// loss, which breaks the equal-size assumption behind the linear process.
inline LinearizationReport linearization_check(const ModelParams& p, const HeterogeneityParams& h, std::uint64_t seed,
                                               const LinearizationOptions& opt = {}) {
    const auto derived = derive(p, h);
    const auto x = sample_holdings(p, h, derive_seed(seed, 0));
    const auto w = to_weights(x);
    const auto op = PhiOperator::from_weights(w, derived.kappa0);

    std::mt19937_64 rng(derive_seed(seed, 1));
    std::vector<double> targets(p.M, 1.0);
    if (opt.lognormal_sigma > 0.0) {
        std::lognormal_distribution<double> ln(0.0, opt.lognormal_sigma);
        for (auto& a : targets) a = ln(rng);
    } else if (opt.target_spread > 0.0) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (auto& a : targets) a = 1.0 + opt.target_spread * u(rng);
    }
    const auto initial = BankLedger::from_targets(targets, derived.eta, p.gamma, derived.alpha);
    auto ledger = initial;
    ShockModel shocks(p.N, p.sigma_f2, p.sigma_nu2, derive_seed(seed, 2), opt.static_factor);

    LinearizationReport rep;
    auto lin = MarketState::zero(p.N);
    std::vector<double> e_agent(p.N, 0.0), r(p.N);
    for (std::size_t t = 0; t < opt.horizon; ++t) {
        const auto eps = shocks.next();
        for (std::size_t i = 0; i < p.N; ++i) r[i] = e_agent[i] + eps[i];
        auto step = agent_step(ledger, w, r);
        lin = linear_step(lin, op, eps);
        e_agent = std::move(step.e);
        ledger = opt.recapitalize ? initial : std::move(step.ledger);

        double diff = 0.0, ref = 0.0;
        for (std::size_t i = 0; i < p.N; ++i) {
            diff += (e_agent[i] - lin.e[i]) * (e_agent[i] - lin.e[i]);
            ref += lin.e[i] * lin.e[i];
        }
        const double dev = ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
        rep.step_deviation.push_back(dev);
        rep.max_relative_deviation = std::max(rep.max_relative_deviation, dev);
    }
    return rep;
}

struct PathOptions {
    std::size_t horizon = 100;
    std::size_t paths = 1000;
    std::size_t workers = 1;
    bool static_factor = true;
};

struct PathSummary {
    std::vector<double> top_mode_variance;      // Var over paths of u^T e_t, t = 1..horizon
    std::vector<double> law_variance;           // geometric sum with serially independent shocks
    std::vector<double> law_variance_static;    // sum with a factor fixed along the path
    // Top-mode variance pooled over the second half of the horizon, where a
    // stable path has reached its stationary regime.
    double stationary_variance = 0.0;
    double lambda = 0.0;
    std::size_t diverged_paths = 0;
    std::vector<std::size_t> first_exceedance;  // step when ||e_t|| first passed exceed_scale; 0 = never
};

/// Runs independent linear paths from e_0 = 0. Path k draws its shocks from
/// derive_seed(seed, k), so the summary does not depend on the worker count.
inline PathSummary simulate_linear_paths(const PhiOperator& op, double sigma_f2, double sigma_nu2, std::uint64_t seed,
                                         const PathOptions& opt, double exceed_scale = 0.0) {
    if (opt.paths < 2) throw std::invalid_argument("simulate_linear_paths: need at least two paths");
    auto top = lambda_max(op);
    PathSummary out;
    out.lambda = top.value;
    const std::size_t n = op.dim();
    std::vector<std::vector<double>> projections(opt.paths, std::vector<double>(opt.horizon, 0.0));
    std::vector<char> diverged(opt.paths, 0);
    out.first_exceedance.assign(opt.paths, 0);
    parallel_for(opt.paths, opt.workers, [&](std::size_t k) {
        ShockModel shocks(n, sigma_f2, sigma_nu2, derive_seed(seed, k), opt.static_factor);
        auto state = MarketState::zero(n);
        for (std::size_t t = 0; t < opt.horizon && !state.diverged; ++t) {
            const auto eps = shocks.next();
            state = linear_step(state, op, eps);
            projections[k][t] = detail::dot(top.vector, state.e);
            if (exceed_scale > 0.0 && out.first_exceedance[k] == 0 && detail::norm(state.e) > exceed_scale) {
                out.first_exceedance[k] = t + 1;
            }
        }
        diverged[k] = state.diverged ? 1 : 0;
    });
    for (char d : diverged) out.diverged_paths += static_cast<std::size_t>(d);
    for (std::size_t t = 0; t < opt.horizon; ++t) {
        RunningStats s;
        for (std::size_t k = 0; k < opt.paths; ++k) s.add(projections[k][t]);
        out.top_mode_variance.push_back(s.variance());
        out.law_variance.push_back(geometric_variance(out.lambda, sigma_f2 + sigma_nu2, t + 1));
        out.law_variance_static.push_back(static_factor_variance(out.lambda, sigma_f2, sigma_nu2, t + 1));
    }
    if (opt.horizon > 0) {
        const std::size_t from = opt.horizon / 2;
        double acc = 0.0;
        for (std::size_t t = from; t < opt.horizon; ++t) acc += out.top_mode_variance[t];
        out.stationary_variance = acc / static_cast<double>(opt.horizon - from);
    }
    return out;
}

/// Trace of a single linear path: one row per (t, asset) with the running
/// variance over time of that asset's endogenous return.
inline void write_path_trace(std::ostream& os, const PhiOperator& op, ShockModel& shocks, std::size_t horizon,
                             std::size_t max_assets = std::numeric_limits<std::size_t>::max()) {
    const std::size_t n = op.dim();
    const std::size_t shown = std::min(n, max_assets);
    std::vector<RunningStats> running(shown);
    auto state = MarketState::zero(n);
    const auto old_precision = os.precision(17);
    os << "t,asset,e,var_running\n";
    for (std::size_t t = 0; t < horizon && !state.diverged; ++t) {
        state = linear_step(state, op, shocks.next());
        for (std::size_t i = 0; i < shown; ++i) {
            running[i].add(state.e[i]);
            os << state.t << ',' << i << ',' << state.e[i] << ',' << (running[i].count() > 1 ? running[i].variance() : 0.0)
               << '\n';
        }
    }
    os.precision(old_precision);
}

}  // namespace finstab
