#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace selfloc;
using testutil::coords;
using testutil::error_of;

namespace {

SparseTensor<double> random_tensor(std::mt19937_64& rng, std::size_t n, std::size_t c) {
    return {selftest::random_support(rng, n, 5), selftest::rand_matrix(rng, n, c)};
}

PointGateParams<double> random_point(std::mt19937_64& rng, std::size_t c) {
    auto g = PointGateParams<double>::zeros(c);
    g.w1 = selftest::rand_vec(rng, c * c);
    g.b1 = selftest::rand_vec(rng, c);
    g.w2 = selftest::rand_vec(rng, c);
    g.b2 = selftest::urand(rng);
    return g;
}

ChannelGateParams<double> random_channel(std::mt19937_64& rng, std::size_t c) {
    auto g = ChannelGateParams<double>::zeros(c);
    g.w = selftest::rand_vec(rng, c * c);
    g.b = selftest::rand_vec(rng, c);
    return g;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST(PointGate, ZeroParamsHalve) {
    SparseTensor<double> x(coords({{0, 0, 0}, {1, 0, 0}}), Matrix<double>(2, 2, std::vector<double>{2, -4, 6, 8}));
    const auto r = point_gate(x, PointGateParams<double>::zeros(2));
    EXPECT_EQ(r.out.features.data(), (std::vector<double>{1, -2, 3, 4}));
    EXPECT_EQ(r.attention, (std::vector<double>{0.5, 0.5}));
}

TEST(PointGate, MatchesHandPerceptron) {
    std::mt19937_64 rng(1);
    const auto x = random_tensor(rng, 8, 3);
    const auto g = random_point(rng, 3);
    const auto r = point_gate(x, g);
    for (std::size_t n = 0; n < 8; ++n) {
        double z = g.b2;
        for (std::size_t h = 0; h < 3; ++h) {
            double a = g.b1[h];
            for (std::size_t i = 0; i < 3; ++i) a += x.features(n, i) * g.w1[i * 3 + h];
            z += std::max(a, 0.0) * g.w2[h];
        }
        EXPECT_NEAR(r.attention[n], logistic(z), 1e-14);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(r.out.features(n, c), x.features(n, c) * logistic(z), 1e-14);
    }
}

TEST(PointGate, ScoresInUnitIntervalAndSupportKept) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 50; ++t) {
        const auto x = random_tensor(rng, 20, 4);
        const auto r = point_gate(x, random_point(rng, 4));
        EXPECT_EQ(r.out.support, x.support);
        for (double s : r.attention) {
            EXPECT_GT(s, 0.0);
            EXPECT_LT(s, 1.0);
        }
    }
}

TEST(PointGate, ChannelMismatch) {
    std::mt19937_64 rng(3);
    const auto x = random_tensor(rng, 4, 3);
    EXPECT_EQ(error_of([&] { point_gate(x, PointGateParams<double>::zeros(2)); }), Errc::ChannelMismatch);
}

TEST(ChannelGate, ZeroParamsHalve) {
    SparseTensor<double> x(coords({{0, 0, 0}}), Matrix<double>(1, 3, std::vector<double>{2, 4, 6}));
    const auto r = channel_gate(x, ChannelGateParams<double>::zeros(3));
    EXPECT_EQ(r.out.features.data(), (std::vector<double>{1, 2, 3}));
    EXPECT_EQ(r.attention, (std::vector<double>(3, 0.5)));
}

TEST(ChannelGate, MatchesHandFormula) {
    std::mt19937_64 rng(4);
    const auto x = random_tensor(rng, 10, 3);
    const auto g = random_channel(rng, 3);
    const auto r = channel_gate(x, g);
    std::vector<double> mean(3, 0.0);
    for (std::size_t n = 0; n < 10; ++n)
        for (std::size_t c = 0; c < 3; ++c) mean[c] += x.features(n, c) / 10.0;
    for (std::size_t i = 0; i < 3; ++i) {
        double z = g.b[i];
        for (std::size_t j = 0; j < 3; ++j) z += g.w[i * 3 + j] * mean[j];
        EXPECT_NEAR(r.attention[i], logistic(z), 1e-14);
        for (std::size_t n = 0; n < 10; ++n) EXPECT_NEAR(r.out.features(n, i), x.features(n, i) * logistic(z), 1e-14);
    }
}

TEST(ChannelGate, EmptyAndMismatch) {
    SparseTensor<double> empty(std::make_shared<const CoordSet>(std::vector<VoxelCoord>{}, 1), Matrix<double>(0, 2));
    EXPECT_EQ(error_of([&] { channel_gate(empty, ChannelGateParams<double>::zeros(2)); }), Errc::EmptyTensor);
    std::mt19937_64 rng(5);
    const auto x = random_tensor(rng, 4, 3);
    EXPECT_EQ(error_of([&] { channel_gate(x, ChannelGateParams<double>::zeros(4)); }), Errc::ChannelMismatch);
}

TEST(Sffb, ZeroParamsQuarter) {
    std::mt19937_64 rng(6);
    const auto x = random_tensor(rng, 6, 2);
    for (const char* order : {"cp", "pc"}) {
        const auto r = sffb(x, SffbParams<double>::zeros(2), SffbConfig::parse(order));
        for (std::size_t i = 0; i < x.features.size(); ++i)
            EXPECT_EQ(r.out.features.data()[i], 0.25 * x.features.data()[i]);
        EXPECT_EQ(r.point_attention.size(), 6u);
        EXPECT_EQ(r.channel_attention.size(), 2u);
    }
}

TEST(Sffb, SingleGateOrders) {
    std::mt19937_64 rng(7);
    const auto x = random_tensor(rng, 5, 2);
    const auto c = sffb(x, SffbParams<double>::zeros(2), SffbConfig::parse("c"));
    EXPECT_TRUE(c.point_attention.empty());
    EXPECT_EQ(c.channel_attention.size(), 2u);
    const auto p = sffb(x, SffbParams<double>::zeros(2), SffbConfig::parse("p"));
    EXPECT_TRUE(p.channel_attention.empty());
    EXPECT_EQ(p.point_attention.size(), 5u);
}

TEST(Sffb, OrderMatters) {
    // Scalar witness: x = [1, 3] on two voxels; channel gate logit 10*mean,
    // point gate logit relu(x) - 1.
    SparseTensor<double> x(coords({{0, 0, 0}, {1, 0, 0}}), Matrix<double>(2, 1, std::vector<double>{1, 3}));
    SffbParams<double> p = SffbParams<double>::zeros(1);
    p.channel.w = {1.0};
    p.point.w1 = {1.0};
    p.point.w2 = {1.0};
    p.point.b2 = -1.0;
    const auto cp = sffb(x, p, SffbConfig::parse("cp"));
    const auto pc = sffb(x, p, SffbConfig::parse("pc"));

    const double s_c = logistic(2.0);
    const double cp0 = 1 * s_c * logistic(1 * s_c - 1), cp1 = 3 * s_c * logistic(3 * s_c - 1);
    const double y0 = 1 * logistic(0.0), y1 = 3 * logistic(2.0);
    const double s_c2 = logistic((y0 + y1) / 2);
    EXPECT_NEAR(cp.out.features(0, 0), cp0, 1e-14);
    EXPECT_NEAR(cp.out.features(1, 0), cp1, 1e-14);
    EXPECT_NEAR(pc.out.features(0, 0), y0 * s_c2, 1e-14);
    EXPECT_NEAR(pc.out.features(1, 0), y1 * s_c2, 1e-14);
    EXPECT_GT(std::abs(cp.out.features(1, 0) - pc.out.features(1, 0)), 1e-3);
}

TEST(SffbConfig, ParseAndPrint) {
    EXPECT_EQ(SffbConfig::parse("CP").str(), "cp");
    EXPECT_EQ(SffbConfig::parse("pc").str(), "pc");
    EXPECT_EQ(error_of([] { SffbConfig::parse("x"); }), Errc::InvalidArgument);
    EXPECT_EQ(error_of([] { SffbConfig::parse(""); }), Errc::InvalidArgument);
    EXPECT_EQ(error_of([] { SffbConfig::parse("cpc"); }), Errc::InvalidArgument);
}
