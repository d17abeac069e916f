#include <sstream>

#include <gtest/gtest.h>

#include <finstab/config.hpp>
#include <finstab/io.hpp>

using namespace finstab;

namespace {

RunConfig parse(const std::string& text) {
    std::istringstream is(text);
    return build_config(KeyValueFile::parse(is));
}

}  // namespace

TEST(Config, DefaultsMatchTheReferenceSetup) {
    const auto rc = parse("");
    EXPECT_EQ(rc.sweep.base.N, 200u);
    EXPECT_EQ(rc.sweep.base.M, 300u);
    EXPECT_DOUBLE_EQ(rc.sweep.base.q, 8.0);
    EXPECT_EQ(rc.sweep.settings.size(), 2u);
    EXPECT_EQ(rc.format, "csv");
}

TEST(Config, DottedKeysAndComments) {
    const auto rc = parse(
        "# comment line\n"
        "model.N = 400   # trailing comment\n"
        "model.q=12\n"
        "grid.phi.points = 7\n"
        "grid.p_B.min = 0.1\n"
        "grid.p_B.max = 0.9\n"
        "run.methods = corsi, replica\n"
        "run.seed = 99\n"
        "gap.scales = 1,2,4,8\n"
        "het.settings = heterogeneous\n"
        "het.phi = 0.5\n"
        "het.p_B = 0.5\n"
        "solver.kind = power\n"
        "corsi.form = finite\n"
        "simulate.static_factor = false\n"
        "run.format = json\n");
    const auto& c = rc.sweep;
    EXPECT_EQ(c.base.N, 400u);
    EXPECT_DOUBLE_EQ(c.base.q, 12.0);
    EXPECT_EQ(c.phi.points, 7u);
    EXPECT_DOUBLE_EQ(c.p_B.min, 0.1);
    ASSERT_EQ(c.methods.size(), 2u);
    EXPECT_EQ(c.methods[1], Method::replica);
    EXPECT_EQ(c.seed, 99u);
    EXPECT_EQ(c.scales.back(), 8u);
    ASSERT_EQ(c.settings.size(), 1u);
    EXPECT_NEAR(c.settings[0].params.B, 4.0 / 3.0, 1e-14);
    EXPECT_EQ(c.solver.solver, EigenSolver::power);
    EXPECT_EQ(c.corsi_form, CorsiForm::finite);
    EXPECT_FALSE(rc.simulate.static_factor);
    EXPECT_EQ(rc.format, "json");
}

TEST(Config, ErrorsAreReported) {
    EXPECT_THROW(parse("model.bogus = 1\n"), ConfigError);
    EXPECT_THROW(parse("model.N = abc\n"), ConfigError);
    EXPECT_THROW(parse("model.N = -3\n"), ConfigError);
    EXPECT_THROW(parse("model.N\n"), ConfigError);
    EXPECT_THROW(parse("model.N = 1\nmodel.N = 2\n"), ConfigError);
    EXPECT_THROW(parse("run.methods = svd\n"), ConfigError);
    EXPECT_THROW(parse("run.samples = 0\n"), ConfigError);
    EXPECT_THROW(parse("het.phi = 1.5\n"), ConfigError);
    EXPECT_THROW(parse("grid.p_B.min = 0\ngrid.p_B.centered = false\n"), ConfigError);
    EXPECT_THROW(parse("run.format = xml\n"), ConfigError);
    EXPECT_THROW(parse("model.q = 1000\n"), ConfigError);
    EXPECT_THROW(KeyValueFile::load("/nonexistent/file.conf"), ConfigError);
}

TEST(Config, ManifestCarriesTheFullConfiguration) {
    const auto rc = parse("model.N = 321\nrun.seed = 5\n");
    const auto j = to_json(rc);
    EXPECT_EQ(j["model"]["N"], 321);
    EXPECT_EQ(j["seed"], 5);
    EXPECT_EQ(j["methods"].size(), 2u);
}
