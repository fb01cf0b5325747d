#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace selfloc;

TEST(Suites, Decomposition) {
    const auto r = selftest::decomposition(1, 10);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Suites, ParameterReduction) {
    const auto r = selftest::parameter_reduction();
    EXPECT_TRUE(r.pass) << r.detail;
    EXPECT_NE(r.detail.find("66.67%"), std::string::npos);
}

TEST(Suites, GatingInvariants) {
    const auto r = selftest::gating_invariants(4, 100);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Suites, GemProperties) {
    const auto r = selftest::gem_properties(5, 100);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Suites, Protocol) {
    const auto r = selftest::protocol(8, 20);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Suites, DilationReach) {
    const auto r = selftest::dilation_reach();
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Suites, Determinism) {
    const auto r = selftest::determinism();
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Suites, DecompositionGapIsTiny) {
    std::mt19937_64 rng(2);
    EXPECT_LT(selftest::decomposition_gap(rng, 7, 2, 3, 3, 2), 1e-10);
    EXPECT_LT(selftest::rank1_gap(rng, 7), 1e-10);
}

TEST(Experiment, AblationGridShape) {
    AblationOptions opt;
    opt.places = 6;
    opt.train_places = 4;
    opt.epochs = 0;
    auto cfg = selftest::tiny_model_config();
    const auto rows = run_ablation(cfg, opt);
    ASSERT_EQ(rows.size(), static_cast<std::size_t>(3 * (cfg.down_depth + 1)));
    EXPECT_EQ(rows[0].variant, "SelFLoc_X");
    EXPECT_EQ(rows.back().variant, "SelFLoc_Z");
    EXPECT_EQ(rows.back().dilation_depth, cfg.down_depth);
    const auto csv = format_ablation_csv(rows);
    EXPECT_EQ(csv.rfind("variant,extra_axis,dilation_depth,ar_at_1,ar_at_1pct,final_loss\n", 0), 0u);
    EXPECT_EQ(csv, format_ablation_csv(run_ablation(cfg, opt)));
    opt.train_places = 6;
    EXPECT_THROW(run_ablation(cfg, opt), Error);
}
