#include <cmath>

#include <gtest/gtest.h>

#include <finstab/replica.hpp>

using namespace finstab;

namespace {

ReplicaOptions fast_options() {
    ReplicaOptions o;
    o.pop_size = 20000;
    o.equilibration_sweeps = 100;
    o.measurement_sweeps = 200;
    o.bisection_tol = 3e-3;
    return o;
}

double surrogate_mean(const ModelParams& p, const HeterogeneityParams& h, std::size_t scale, std::size_t samples) {
    ModelParams big = p;
    big.N *= scale;
    big.M *= scale;
    return mc_lambda_max_of(samples, 99, McOptions{}, [&](std::uint64_t s) { return approx_phi_sample(big, h, s); })
        .value;
}

}  // namespace

TEST(ApproxSpec, FieldsFollowTheirDefinitions) {
    ModelParams p;
    const auto h = solve_heterogeneity(0.9, 7.0 / 27.0);
    const auto s = make_approx_spec(p, h);
    const double alpha = std::sqrt(2.0 / 3.0);
    EXPECT_NEAR(s.c, (1 - std::exp(-alpha * 8)) / (alpha * 8), 1e-15);
    EXPECT_GT(s.c, 0.0);
    EXPECT_LT(s.c, 1.0);
    EXPECT_NEAR(s.asset_mean_degree, 8 / alpha, 1e-12);
    EXPECT_NEAR(s.institution_mean_degree, 8 * alpha, 1e-12);
    EXPECT_GT(s.kappa, 0.0);
    ASSERT_EQ(s.weights.size(), 2u);
    EXPECT_NEAR(s.weights[0].value, 3.0, 1e-12);
}

TEST(ApproxSpec, ScalingConstantAgainstFiniteSizeRatio) {
    ModelParams p;
    const auto h = homogeneous();
    RunningStats ratio_w;
    const double prob = p.edge_probability();
    for (std::uint64_t k = 0; k < 2000; ++k) {
        const auto w = to_weights(sample_holdings(p, h, derive_seed(8, k)));
        double sum = 0.0;
        for (const auto& e : w.w.entries) sum += e.value;
        ratio_w.add(sum / (200.0 * 300.0) / prob);
    }
    const double exact = -(std::pow(1 - prob, 200) - 1) / 200.0 / prob;
    EXPECT_NEAR(ratio_w.mean(), exact, 3 * ratio_w.stderr_of_mean() + 1e-12);
    // The sparse-limit constant differs from the finite-size ratio by O(1/N).
    EXPECT_NEAR(scaling_constant(p.alpha(), p.q), exact, 5.0 / 200.0 * exact);
}

TEST(ApproxPhi, SharesTheSampleOfPhi) {
    ModelParams p;
    const auto h = solve_heterogeneity(0.5, 0.4);
    const auto a = approx_phi_sample(p, h, 4);
    const auto b = sample_phi(p, h, 4);
    ASSERT_EQ(a.factor.nnz(), b.factor.nnz());
    for (std::size_t k = 0; k < a.factor.nnz(); ++k) {
        EXPECT_EQ(a.factor.entries[k].row, b.factor.entries[k].row);
        EXPECT_EQ(a.factor.entries[k].col, b.factor.entries[k].col);
    }
}

TEST(ApproxPhi, SingleEntry) {
    const double kappa = 0.02, B = 3.0;
    HoldingsMatrix x;
    x.x.rows = 3;
    x.x.cols = 3;
    x.x.entries = {{1, 2, B}};
    EXPECT_NEAR(lambda_max(PhiOperator::from_holdings(x, kappa)).value, kappa * B * B, 1e-14);
}

TEST(Poisson, TableMatchesMoments) {
    detail::PoissonTable t(5.3);
    Xoshiro256 rng(1);
    RunningStats s;
    for (int k = 0; k < 200000; ++k) s.add(t(static_cast<double>(rng() >> 11) * 0x1.0p-53));
    EXPECT_NEAR(s.mean(), 5.3, 4 * s.stderr_of_mean());
    EXPECT_NEAR(s.variance(), 5.3, 0.1);
    detail::PoissonTable zero(0.0);
    EXPECT_EQ(zero(0.999), 0);
}

TEST(Replica, RejectsBadOptions) {
    const auto spec = make_approx_spec(ModelParams{}, homogeneous());
    auto o = fast_options();
    o.pop_size = 999;
    EXPECT_THROW(replica_lambda_max(spec, o), std::invalid_argument);
    o = fast_options();
    o.bisection_tol = 0.0;
    EXPECT_THROW(replica_lambda_max(spec, o), std::invalid_argument);
}

TEST(Replica, HomogeneousMatchesLargeInstances) {
    ModelParams p;
    const auto h = homogeneous();
    const auto r = replica_lambda_max(make_approx_spec(p, h), fast_options());
    EXPECT_TRUE(r.estimate.converged);
    const double oracle = surrogate_mean(p, h, 8, 40);
    EXPECT_NEAR(r.estimate.value, oracle, 0.02 * oracle);
}

TEST(Replica, HeterogeneousMatchesLargeInstances) {
    ModelParams p;
    const auto h = solve_heterogeneity(0.9, 7.0 / 27.0);
    const auto r = replica_lambda_max(make_approx_spec(p, h), fast_options());
    EXPECT_TRUE(r.estimate.converged);
    const double oracle = surrogate_mean(p, h, 8, 40);
    EXPECT_NEAR(r.estimate.value, oracle, 0.05 * oracle);
}

TEST(Replica, DeterministicAndNestedInTolerance) {
    const auto spec = make_approx_spec(ModelParams{}, homogeneous());
    auto loose = fast_options();
    loose.pop_size = 5000;
    loose.equilibration_sweeps = 40;
    loose.measurement_sweeps = 80;
    loose.bisection_tol = 0.05;
    auto tight = loose;
    tight.bisection_tol = 0.005;
    const auto a = replica_lambda_max(spec, loose);
    const auto b = replica_lambda_max(spec, loose);
    const auto c = replica_lambda_max(spec, tight);
    EXPECT_EQ(a.estimate.value, b.estimate.value);
    EXPECT_GE(c.bracket_lo, a.bracket_lo);
    EXPECT_LE(c.bracket_hi, a.bracket_hi);
    EXPECT_LE(c.bracket_hi - c.bracket_lo, a.bracket_hi - a.bracket_lo);
    EXPECT_GT(c.probes.size(), a.probes.size());
}

TEST(Replica, ProbesAreLoggedAndClassified) {
    const auto spec = make_approx_spec(ModelParams{}, homogeneous());
    auto o = fast_options();
    o.pop_size = 5000;
    o.equilibration_sweeps = 40;
    o.measurement_sweeps = 80;
    o.bisection_tol = 0.05;
    std::size_t logged = 0;
    const auto r = replica_lambda_max(spec, o, [&](const ProbeRecord& rec) {
        ++logged;
        EXPECT_GT(rec.lambda, 0.0);
    });
    EXPECT_EQ(logged, r.probes.size());
    // A probe far below the edge is reported as such, not as an error.
    PopulationState s = PopulationState::fresh(o.pop_size, std::sqrt(1e-4 / spec.kappa), 1);
    const auto rec = replica_probe(spec, 1e-4, s, o, 3);
    EXPECT_EQ(rec.outcome, ProbeOutcome::below_edge);
    // Far above the edge the eigenvector population decays.
    PopulationState t = PopulationState::fresh(o.pop_size, std::sqrt(1.0 / spec.kappa), 1);
    const auto above = replica_probe(spec, 1.0, t, o, 4);
    EXPECT_EQ(above.outcome, ProbeOutcome::above_max);
    EXPECT_TRUE(t.finite());
}
