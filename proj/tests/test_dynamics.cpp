#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include <finstab/dynamics.hpp>

using namespace finstab;

namespace {

PhiOperator reference_operator(std::uint64_t seed) {
    ModelParams p;
    return sample_phi(p, solve_heterogeneity(0.9, 7.0 / 27.0), seed);
}

double max_rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return den > 0 ? num / den : num;
}

}  // namespace

TEST(LinearStep, ZeroOperatorGivesZero) {
    PhiOperator op;
    op.factor.rows = 4;
    op.factor.cols = 2;
    op.factor.entries = {{0, 0, 1.0}, {3, 1, 0.5}};
    op.prefactor = 0.0;
    auto s = MarketState::zero(4);
    std::vector<double> eps{0.1, -0.2, 0.3, 0.4};
    for (int t = 0; t < 5; ++t) {
        s = linear_step(s, op, eps);
        for (double e : s.e) EXPECT_EQ(e, 0.0);
    }
    EXPECT_EQ(s.t, 5u);
}

TEST(LinearStep, TopEigenvectorScalesByLambda) {
    const auto op = reference_operator(3);
    const auto top = lambda_max(op);
    MarketState s{top.vector, 0, false};
    const std::vector<double> zero(op.dim(), 0.0);
    double scale = 1.0;
    for (int t = 1; t <= 10; ++t) {
        s = linear_step(s, op, zero);
        scale *= top.value;
        for (std::size_t i = 0; i < s.e.size(); ++i) {
            EXPECT_NEAR(s.e[i], scale * top.vector[i], 1e-8 * scale);
        }
    }
}

TEST(LinearStep, DimensionMismatchThrows) {
    const auto op = reference_operator(3);
    EXPECT_THROW(linear_step(MarketState::zero(3), op, std::vector<double>(op.dim(), 0.0)), std::invalid_argument);
}

TEST(LinearStep, DivergenceIsFlagged) {
    const auto base = reference_operator(3);
    auto op = base;
    op.prefactor *= 50.0 / lambda_max(base).value;  // lambda_max = 50
    auto s = MarketState::zero(op.dim());
    ShockModel shocks(op.dim(), 1e-4, 1e-4, 1);
    for (int t = 0; t < 200 && !s.diverged; ++t) s = linear_step(s, op, shocks.next());
    EXPECT_TRUE(s.diverged);
}

TEST(Shocks, VarianceAndFactorPersistence) {
    ShockModel stat(4000, 2e-4, 1e-4, 5, true);
    RunningStats all;
    const auto a = stat.next();
    const auto b = stat.next();
    for (double x : a) all.add(x);
    EXPECT_NEAR(all.variance(), 3e-4, 0.1 * 3e-4);
    // Static factor makes successive shocks correlated with covariance sigma_f2.
    double cov = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) cov += a[i] * b[i];
    EXPECT_NEAR(cov / 4000.0, 2e-4, 0.25 * 2e-4);
    ShockModel fresh(4000, 2e-4, 1e-4, 5, false);
    const auto c = fresh.next();
    const auto d = fresh.next();
    cov = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) cov += c[i] * d[i];
    EXPECT_NEAR(cov / 4000.0, 0.0, 0.25 * 2e-4);
    EXPECT_THROW(ShockModel(3, -1.0, 1.0, 1), ParamError);
}

TEST(AgentStep, ZeroReturnsLeaveTheLedgerUnchanged) {
    ModelParams p;
    const auto h = solve_heterogeneity(0.9, 7.0 / 27.0);
    const auto d = derive(p, h);
    const auto w = to_weights(sample_holdings(p, h, 2));
    const auto ledger = BankLedger::uniform(p.M, 10.0, d.eta, p.gamma, d.alpha);
    const auto r = agent_step(ledger, w, std::vector<double>(p.N, 0.0));
    for (double x : r.institution_trade) EXPECT_EQ(x, 0.0);
    for (double x : r.e) EXPECT_EQ(x, 0.0);
    EXPECT_EQ(r.ledger.target, ledger.target);
    EXPECT_EQ(r.ledger.equity, ledger.equity);
}

TEST(AgentStep, SingleBankSingleAssetByHand) {
    const double eta = 4.0, gamma = 50.0, a_star = 100.0;
    HoldingsMatrix x;
    x.x.rows = 1;
    x.x.cols = 1;
    x.x.entries = {{0, 0, 1.0}};
    const auto w = to_weights(x);
    const auto ledger = BankLedger::uniform(1, a_star, eta, gamma, 1.0);
    const auto r = agent_step(ledger, w, std::vector<double>{0.01});
    EXPECT_DOUBLE_EQ(r.institution_trade[0], 0.01 * a_star * (eta - 1.0));
    EXPECT_DOUBLE_EQ(r.asset_demand[0], 3.0);
    EXPECT_DOUBLE_EQ(r.e[0], 3.0 / (gamma * a_star));
    // Equity grows by the mark-to-market gain; the rebalanced book sits at eta * E.
    EXPECT_DOUBLE_EQ(r.ledger.equity[0], 25.0 + 1.0);
    EXPECT_DOUBLE_EQ(r.ledger.assets[0], 101.0 + 3.0);
    EXPECT_NEAR(r.ledger.leverage(0), eta, 1e-14);
    EXPECT_DOUBLE_EQ(r.ledger.target[0], 104.0);
}

TEST(AgentStep, InsolvencyHalts) {
    HoldingsMatrix x;
    x.x.rows = 1;
    x.x.cols = 1;
    x.x.entries = {{0, 0, 1.0}};
    const auto ledger = BankLedger::uniform(1, 100.0, 4.0, 50.0, 1.0);
    EXPECT_THROW(agent_step(ledger, to_weights(x), std::vector<double>{-0.3}), InsolvencyError);
}

TEST(AgentStep, EqualSizesReproduceTheLinearMap) {
    ModelParams p;
    const auto h = solve_heterogeneity(0.9, 7.0 / 27.0);
    const auto d = derive(p, h);
    const auto x = sample_holdings(p, h, 8);
    const auto w = to_weights(x);
    const auto op = PhiOperator::from_weights(w, d.kappa0);
    const auto ledger = BankLedger::uniform(p.M, 3.0, d.eta, p.gamma, d.alpha);
    ShockModel shocks(p.N, 1e-4, 1e-4, 9);
    const auto r = shocks.next();
    const auto agent = agent_step(ledger, w, r);
    EXPECT_LT(max_rel_diff(agent.e, op.apply(r)), 1e-12);
}

TEST(Rebalance, WeightsAreInvariant) {
    ModelParams p;
    const auto h = solve_heterogeneity(0.7, 0.3);
    const auto d = derive(p, h);
    for (std::uint64_t k = 0; k < 20; ++k) {
        const auto x = sample_holdings(p, h, derive_seed(30, k));
        const auto w = to_weights(x);
        ShockModel shocks(p.N, 1e-4, 1e-4, k);
        const auto ledger = BankLedger::uniform(p.M, 5.0, d.eta, p.gamma, d.alpha);
        const auto step = agent_step(ledger, w, shocks.next());
        const auto w2 = to_weights(rebalance_holdings(x, step.institution_trade));
        ASSERT_EQ(w2.w.nnz(), w.w.nnz());
        for (std::size_t i = 0; i < w.w.nnz(); ++i) EXPECT_NEAR(w2.w.entries[i].value, w.w.entries[i].value, 1e-12);
    }
}

TEST(Linearization, ExactWithEqualSizes) {
    ModelParams p;
    const auto rep = linearization_check(p, solve_heterogeneity(0.9, 7.0 / 27.0), 4);
    EXPECT_EQ(rep.step_deviation.size(), 50u);
    EXPECT_LT(rep.max_relative_deviation, 1e-10);
}

TEST(Linearization, FirstOrderInSizePerturbation) {
    ModelParams p;
    LinearizationOptions o;
    o.target_spread = 0.01;
    const auto rep = linearization_check(p, solve_heterogeneity(0.9, 7.0 / 27.0), 4, o);
    EXPECT_GT(rep.max_relative_deviation, 1e-6);
    EXPECT_LT(rep.max_relative_deviation, 0.02);
    o.target_spread = 0.001;
    const auto tighter = linearization_check(p, solve_heterogeneity(0.9, 7.0 / 27.0), 4, o);
    EXPECT_LT(tighter.max_relative_deviation, rep.max_relative_deviation);
}

TEST(Linearization, LognormalSizesAndDriftingLedgersAreMeasured) {
    ModelParams p;
    LinearizationOptions o;
    o.lognormal_sigma = 0.5;
    const auto ln = linearization_check(p, homogeneous(), 4, o);
    EXPECT_TRUE(std::isfinite(ln.max_relative_deviation));
    LinearizationOptions drift;
    drift.recapitalize = false;
    const auto dr = linearization_check(p, homogeneous(), 4, drift);
    EXPECT_TRUE(std::isfinite(dr.max_relative_deviation));
    EXPECT_GT(dr.max_relative_deviation, 1e-10);
}

TEST(VarianceLaw, ClosedForms) {
    EXPECT_NEAR(geometric_variance(0.5, 2.0, 3), 2.0 * (0.25 + 0.0625 + 0.015625), 1e-15);
    EXPECT_NEAR(static_factor_variance(0.5, 1.0, 0.0, 2), 0.75 * 0.75, 1e-15);
    EXPECT_NEAR(static_factor_variance(0.5, 0.0, 2.0, 3), geometric_variance(0.5, 2.0, 3), 1e-15);
    EXPECT_NEAR(stationary_geometric_variance(0.5, 2.0), geometric_variance(0.5, 2.0, 200), 1e-15);
    EXPECT_TRUE(std::isinf(stationary_geometric_variance(1.0, 2.0)));
}

TEST(VarianceLaw, TopModeFollowsTheGeometricSum) {
    const auto op = reference_operator(12);
    PathOptions o;
    o.horizon = 30;
    o.paths = 1000;
    o.static_factor = false;
    const auto s = simulate_linear_paths(op, 1e-4, 1e-4, 77, o);
    EXPECT_EQ(s.diverged_paths, 0u);
    EXPECT_NEAR(s.top_mode_variance.back(), s.law_variance.back(), 0.1 * s.law_variance.back());
    const double law = stationary_geometric_variance(s.lambda, 2e-4);
    EXPECT_NEAR(s.stationary_variance, law, 0.05 * law);
    o.static_factor = true;
    const auto st = simulate_linear_paths(op, 1e-4, 1e-4, 78, o);
    EXPECT_NEAR(st.top_mode_variance.back(), st.law_variance_static.back(), 0.1 * st.law_variance_static.back());
}

TEST(VarianceLaw, UnstableInstanceDiverges) {
    const auto base = reference_operator(12);
    auto op = base;
    op.prefactor *= 1.2 / lambda_max(base).value;
    PathOptions o;
    o.horizon = 500;
    o.paths = 100;
    const double initial = std::sqrt(2e-4 * static_cast<double>(op.dim()));
    const auto s = simulate_linear_paths(op, 1e-4, 1e-4, 5, o, 1e3 * initial);
    std::size_t exceeded = 0;
    for (auto t : s.first_exceedance) exceeded += t > 0;
    EXPECT_GE(exceeded, 95u);
}

TEST(Trace, CsvHasOneRowPerStepAndAsset) {
    const auto op = reference_operator(1);
    ShockModel shocks(op.dim(), 1e-4, 1e-4, 2);
    std::ostringstream os;
    write_path_trace(os, op, shocks, 5, 3);
    const auto text = os.str();
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 5 * 3);
    EXPECT_EQ(text.rfind("t,asset,e,var_running\n", 0), 0u);
}
