#include <sstream>

#include <gtest/gtest.h>

#include <finstab/io.hpp>
#include <finstab/sweep.hpp>

using namespace finstab;

namespace {

SweepConfig tiny_grid() {
    SweepConfig c;
    c.phi = {0.0, 0.95, 3, false};
    c.p_B = {0.0, 1.0, 3, true};
    c.samples = 20;
    c.seed = 2;
    return c;
}

CellResult cell_with(double truth, double truth_se, double approx) {
    CellResult c;
    MethodResult t;
    t.method = Method::diagonalization;
    t.estimate.value = truth;
    t.estimate.std_error = truth_se;
    t.ok = true;
    MethodResult a;
    a.method = Method::corsi;
    a.estimate.value = approx;
    a.ok = true;
    c.results = {t, a};
    return c;
}

}  // namespace

TEST(Classify, FourWayTable) {
    EXPECT_EQ(classify(cell_with(1.3, 0.01, 1.2)).approx[0].agreement, Agreement::true_unstable);
    EXPECT_EQ(classify(cell_with(1.3, 0.01, 0.8)).approx[0].agreement, Agreement::false_stable);
    EXPECT_EQ(classify(cell_with(0.8, 0.01, 1.2)).approx[0].agreement, Agreement::false_unstable);
    EXPECT_EQ(classify(cell_with(0.8, 0.01, 0.7)).approx[0].agreement, Agreement::true_stable);
}

TEST(Classify, IndeterminateBand) {
    const auto c = classify(cell_with(1.01, 0.01, 0.5));
    EXPECT_EQ(c.truth, Verdict::indeterminate);
    EXPECT_EQ(c.approx[0].agreement, Agreement::indeterminate);
    EXPECT_EQ(classify(cell_with(1.03, 0.01, 0.5)).approx[0].agreement, Agreement::false_stable);
}

TEST(Classify, MissingTruthIsAnError) {
    CellResult c;
    MethodResult a;
    a.method = Method::corsi;
    a.ok = true;
    c.results = {a};
    EXPECT_THROW(classify(c), std::invalid_argument);
}

TEST(Classify, PartitionOfUnstableCells) {
    std::vector<CellResult> cells;
    const double truths[] = {1.5, 1.5, 0.5, 0.5, 1.5, 0.7};
    const double approx[] = {1.2, 0.9, 1.1, 0.2, 0.3, 0.4};
    for (int k = 0; k < 6; ++k) {
        cells.push_back(cell_with(truths[k], 0.01, approx[k]));
        cells.back().classification = classify(cells.back());
    }
    const auto n = count_agreement(cells, Method::corsi);
    EXPECT_EQ(n.true_unstable + n.false_stable, 3u);
    EXPECT_EQ(n.true_unstable, 1u);
    EXPECT_EQ(n.false_stable, 2u);
    EXPECT_EQ(n.false_unstable, 1u);
    EXPECT_EQ(n.true_stable, 2u);
}

TEST(Axis, EndpointAndCenteredSpacing) {
    const auto e = Axis{0.0, 1.0, 5, false}.values();
    EXPECT_DOUBLE_EQ(e.front(), 0.0);
    EXPECT_DOUBLE_EQ(e.back(), 1.0);
    const auto c = Axis{0.0, 1.0, 4, true}.values();
    EXPECT_DOUBLE_EQ(c.front(), 0.125);
    EXPECT_DOUBLE_EQ(c.back(), 0.875);
    EXPECT_THROW((Axis{0.0, 1.0, 0, false}.values()), std::invalid_argument);
}

TEST(PhaseDiagram, HomogeneousPointEqualsClosedForm) {
    SweepConfig c;
    c.phi = {0.0, 0.0, 1, false};
    c.p_B = {0.5, 0.5, 1, false};
    c.methods = {Method::corsi};
    const auto cells = run_phase_diagram(c);
    ASSERT_EQ(cells.size(), 1u);
    const auto* r = cells[0].find(Method::corsi);
    ASSERT_NE(r, nullptr);
    EXPECT_DOUBLE_EQ(r->estimate.value, corsi_lambda_max(c.base, 1.0));
    EXPECT_FALSE(cells[0].classification.has_value());
}

TEST(PhaseDiagram, CellsAreSeededByIndexAndWorkerInvariant) {
    auto c = tiny_grid();
    const auto a = run_phase_diagram(c);
    c.workers = 3;
    const auto b = run_phase_diagram(c);
    std::ostringstream sa, sb;
    write_cells_csv(sa, a, c.methods);
    write_cells_csv(sb, b, c.methods);
    EXPECT_EQ(sa.str(), sb.str());
    ASSERT_EQ(a.size(), 9u);
    // Cell k used seed derive_seed(seed, k).
    ModelParams p = c.base;
    const auto e = mc_lambda_max(p, a[4].het, c.samples, derive_seed(derive_seed(c.seed, 4), 1));
    EXPECT_EQ(a[4].find(Method::diagonalization)->estimate.value, e.value);
}

TEST(PhaseDiagram, HeterogeneityConcentratesRisk) {
    SweepConfig c;
    c.phi = {0.1, 0.95, 2, false};
    c.p_B = {0.3, 0.3, 1, false};
    c.methods = {Method::diagonalization};
    c.samples = 300;
    const auto cells = run_phase_diagram(c);
    const auto& lo = cells[0].find(Method::diagonalization)->estimate;
    const auto& hi = cells[1].find(Method::diagonalization)->estimate;
    EXPECT_GT(hi.value - lo.value, 5.0 * std::hypot(lo.std_error, hi.std_error));
}

TEST(Contour, LinearInterpolationAlongPhi) {
    std::vector<CellResult> cells;
    const double phis[] = {0.0, 0.5, 1.0};
    const double values[] = {0.5, 0.9, 1.3};
    for (int k = 0; k < 3; ++k) {
        auto c = cell_with(values[k], 0.0, 0.0);
        c.phi = phis[k];
        c.p_B = 0.25;
        cells.push_back(c);
    }
    const auto line = extract_contour(cells, Method::diagonalization);
    ASSERT_EQ(line.size(), 1u);
    EXPECT_NEAR(line[0].phi, 0.5 + 0.5 * 0.25, 1e-15);
    EXPECT_DOUBLE_EQ(line[0].p_B, 0.25);
    EXPECT_TRUE(extract_contour(cells, Method::corsi).empty());
}

TEST(PhaseDiagram, FailuresAreRecordedNotThrown) {
    auto c = tiny_grid();
    c.base.zeta = 20.0;  // eta < 1 everywhere
    const auto cells = run_phase_diagram(c);
    EXPECT_TRUE(any_failed(cells));
    for (const auto& cell : cells) {
        EXPECT_TRUE(cell.failed);
        EXPECT_FALSE(cell.error.empty());
    }
    std::ostringstream os;
    write_cells_csv(os, cells, c.methods);
    EXPECT_NE(os.str().find("failed"), std::string::npos);
}

TEST(QSweep, ArgminAndOrdering) {
    SweepConfig c;
    c.q = {2.0, 30.0, 8, false};
    c.samples = 60;
    c.methods = {Method::diagonalization, Method::corsi};
    const auto cells = run_q_sweep(c);
    EXPECT_EQ(cells.size(), 16u);
    const auto mins = q_sweep_argmin(cells, c.methods);
    EXPECT_EQ(mins.size(), 4u);
    for (std::size_t k = 0; k < 8; ++k) {
        const double hom = cells[k].find(Method::diagonalization)->estimate.value;
        const double het = cells[8 + k].find(Method::diagonalization)->estimate.value;
        EXPECT_GT(het, hom) << "q = " << cells[k].q;
    }
    c.q.points = 2;
    EXPECT_THROW(run_q_sweep(c), ParamError);
}

TEST(Gap, RowsPerScaleAndQ) {
    SweepConfig c;
    c.base.N = 40;
    c.base.M = 30;
    c.q = {2.0, 6.0, 3, false};
    c.scales = {1, 2};
    c.settings = {{"heterogeneous", solve_heterogeneity(0.9, 7.0 / 27.0)}};
    c.samples = 30;
    const auto rows = run_gap_analysis(c);
    ASSERT_EQ(rows.size(), 6u);
    EXPECT_EQ(rows[3].N, 80u);
    for (const auto& r : rows) {
        EXPECT_FALSE(r.failed) << r.error;
        EXPECT_NEAR(r.corsi_gap, (r.corsi - r.diagonalization.value) / r.diagonalization.value, 1e-15);
        EXPECT_GE(r.paired_abs_gap.mean, std::abs(r.paired_gap.mean) - 1e-15);
    }
    std::ostringstream os;
    write_gap_csv(os, rows);
    const auto csv = os.str();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST(Io, HeatmapContainsCellsAndContour) {
    SweepConfig c;
    c.phi = {0.0, 0.9, 3, false};
    c.p_B = {0.0, 1.0, 2, true};
    c.methods = {Method::corsi};
    c.base.gamma = 8.0;  // pushes the high-phi cells over the threshold
    const auto cells = run_phase_diagram(c);
    std::ostringstream os;
    write_heatmap_svg(os, cells, c, Method::corsi);
    const auto svg = os.str();
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    std::size_t rects = 0;
    for (auto pos = svg.find("<rect"); pos != std::string::npos; pos = svg.find("<rect", pos + 1)) ++rects;
    EXPECT_EQ(rects, 6u);
    if (!extract_contour(cells, Method::corsi).empty()) {
        EXPECT_NE(svg.find("<polyline"), std::string::npos);
    }
}
