#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace selfloc;
using testutil::error_of;

namespace {

using Builder = std::function<NodeId(Tape&, NodeId)>;

double sum_forward(const Builder& b, const Matrix<double>& x, const TensorStore& ps) {
    Tape t(&ps, false);
    const auto& y = t.value(b(t, t.input(x)));
    double s = 0;
    for (double v : y.data()) s += v;
    return s;
}

/// d(sum(b(x)))/dx from the tape.
Matrix<double> sum_grad(const Builder& b, const Matrix<double>& x, const TensorStore& ps) {
    Tape t(&ps, true);
    const NodeId in = t.input(x, true);
    const NodeId out = b(t, in);
    t.backward(out, Matrix<double>(t.value(out).rows(), t.value(out).cols(), 1.0));
    return t.grad(in);
}

GradcheckReport check_sum(const Builder& b, const Matrix<double>& x, const TensorStore& ps, GradcheckOptions opt = {}) {
    const auto g = sum_grad(b, x, ps);
    return gradcheck(
        [&](std::span<const double> v) {
            return sum_forward(b, Matrix<double>(x.rows(), x.cols(), std::vector<double>(v.begin(), v.end())), ps);
        },
        x.data(), g.data(), opt);
}

struct HookGuard {
    explicit HookGuard(const std::string& op) { testing_hooks::corrupted_backward = op; }
    ~HookGuard() { testing_hooks::corrupted_backward.clear(); }
};

}  // namespace

TEST(Backward, GemMeanGradient) {
    std::mt19937_64 rng(1);
    TensorStore ps;
    ps.add("p", {1}, 1.0);
    const auto x = selftest::rand_matrix(rng, 7, 3, 0.5, 2.0);
    const auto g = sum_grad([](Tape& t, NodeId n) { return ad::gem(t, n, "p", 1e-6); }, x, ps);
    for (double v : g.data()) EXPECT_NEAR(v, 1.0 / 7.0, 1e-15);
}

TEST(Backward, ZeroPointGateHalvesGradient) {
    std::mt19937_64 rng(2);
    TensorStore ps;
    ps.add("g.w1", {3, 3});
    ps.add("g.b1", {3});
    ps.add("g.w2", {3, 1});
    ps.add("g.b2", {1});
    const Builder b = [](Tape& t, NodeId n) { return ad::point_gate(t, n, "g"); };
    const auto x = selftest::rand_matrix(rng, 6, 3);
    const auto g = sum_grad(b, x, ps);
    for (double v : g.data()) EXPECT_EQ(v, 0.5);
    selftest::put(ps, "g.w1", {3, 3}, rng);
    selftest::put(ps, "g.w2", {3, 1}, rng);
    selftest::put(ps, "g.b1", {3}, rng);
    const auto rep = check_sum(b, x, ps);
    EXPECT_TRUE(rep.pass) << rep.max_rel_err;
    EXPECT_GT(rep.checked, 0u);
}

TEST(Backward, DeltaAxisConvPassesGradient) {
    std::mt19937_64 rng(3);
    const auto s = selftest::random_support(rng, 25, 4);
    auto map = std::make_shared<const KernelMap>(build_kernel_map(*s, *s, axis_offsets(Axis::Y, 3), 1));
    TensorStore ps;
    auto& w = ps.add("k", {3, 2, 2});
    w.values[(1 * 2 + 0) * 2 + 0] = w.values[(1 * 2 + 1) * 2 + 1] = 1.0;
    Tape t(&ps, true);
    const NodeId in = t.input(selftest::rand_matrix(rng, 25, 2), true);
    const NodeId out = ad::conv(t, in, map, "k", 2);
    const auto seed = selftest::rand_matrix(rng, 25, 2);
    t.backward(out, seed);
    EXPECT_EQ(t.grad(in), seed);
}

TEST(Backward, ParameterGradientsAccumulate) {
    TensorStore ps;
    ps.add("w", {1, 1}, 2.0);
    Tape t(&ps, true);
    const NodeId a = t.input(Matrix<double>(1, 1, 3.0));
    const NodeId y1 = ad::linear(t, a, "w", 1);
    const NodeId y2 = ad::linear(t, a, "w", 1);
    t.backward(ad::add(t, y1, y2));
    EXPECT_EQ(t.param_grads().at("w").values[0], 6.0);
}

TEST(Backward, Errors) {
    TensorStore ps;
    Tape off(&ps, false);
    const NodeId a = off.input(Matrix<double>(1, 1, 1.0), true);
    EXPECT_EQ(error_of([&] { off.backward(a); }), Errc::UnrecordedNode);
    Tape on(&ps, true);
    EXPECT_EQ(error_of([&] { on.backward(42); }), Errc::UnrecordedNode);
    const NodeId b = on.input(Matrix<double>(2, 1, 1.0), true);
    EXPECT_EQ(error_of([&] { on.backward(b); }), Errc::LengthMismatch);
}

TEST(Gradcheck, GemCubic) {
    std::mt19937_64 rng(4);
    TensorStore ps;
    ps.add("p", {1}, 3.0);
    const auto rep = check_sum([](Tape& t, NodeId n) { return ad::gem(t, n, "p", 1e-6); },
                               selftest::rand_matrix(rng, 4, 2, 0.2, 2.0), ps);
    EXPECT_LT(rep.max_rel_err, 1e-6);
    EXPECT_EQ(rep.checked, 8u);
}

TEST(Gradcheck, ChannelGate) {
    std::mt19937_64 rng(5);
    TensorStore ps;
    selftest::put(ps, "g.w", {4, 4}, rng);
    selftest::put(ps, "g.b", {4}, rng);
    const auto rep = check_sum([](Tape& t, NodeId n) { return ad::channel_gate(t, n, "g"); },
                               selftest::rand_matrix(rng, 5, 4), ps);
    EXPECT_LT(rep.max_rel_err, 1e-6);
    EXPECT_EQ(rep.checked, 20u);
}

TEST(Gradcheck, ReluKinkExcluded) {
    TensorStore ps;
    const Matrix<double> x(1, 3, std::vector<double>{0.0, 1.0, -1.0});
    const auto rep = check_sum([](Tape& t, NodeId n) { return ad::relu(t, n); }, x, ps);
    EXPECT_TRUE(rep.pass);
    EXPECT_EQ(rep.excluded, (std::vector<std::size_t>{0}));
    EXPECT_EQ(rep.checked, 2u);
}

TEST(Gradcheck, DetectsWrongGradient) {
    const std::vector<double> x{0.3, -1.2, 2.0};
    auto f = [](std::span<const double> v) { return v[0] * v[0] + std::sin(v[1]) + v[2] * v[2] * v[2]; };
    const std::vector<double> good{0.6, std::cos(-1.2), 12.0};
    EXPECT_TRUE(gradcheck(f, x, good).pass);
    const std::vector<double> bad{0.6, std::cos(-1.2), 13.0};
    const auto rep = gradcheck(f, x, bad);
    EXPECT_FALSE(rep.pass);
    EXPECT_EQ(rep.worst_index, 2u);
    EXPECT_EQ(error_of([&] { gradcheck(f, x, std::vector<double>{1.0}); }), Errc::LengthMismatch);
}

TEST(Gradcheck, EveryOpCertified) {
    const auto certs = selftest::certify_ops();
    EXPECT_GE(certs.size(), 12u);
    for (const auto& c : certs) EXPECT_TRUE(c.report.pass) << c.op << " " << c.report.max_rel_err;
}

TEST(Gradcheck, FullGraphProbe) {
    const auto rep = selftest::certify_full_graph();
    EXPECT_TRUE(rep.pass) << rep.max_rel_err;
    EXPECT_GT(rep.checked, 0u);
}

TEST(Gradcheck, CorruptedRuleIsCaught) {
    for (const char* op : {"conv", "norm_act", "point_gate", "channel_gate", "gem"}) {
        HookGuard guard(op);
        bool caught = false;
        for (const auto& c : selftest::certify_ops())
            if (c.op.rfind(op, 0) == 0 && !c.report.pass) caught = true;
        EXPECT_TRUE(caught) << op;
        const auto suite = selftest::gradients();
        EXPECT_FALSE(suite.pass);
        EXPECT_NE(suite.detail.find("gradcheck failed for op"), std::string::npos);
    }
}

TEST(Triplet, Examples) {
    const std::vector<double> a{0, 0}, n{2, 0};
    EXPECT_EQ(triplet_loss(a, a, n, 0.2), 0.0);
    EXPECT_DOUBLE_EQ(triplet_loss(a, a, a, 0.2), 0.2);
    EXPECT_EQ(triplet_loss(std::vector<double>{0}, std::vector<double>{1}, std::vector<double>{3}, 0.5), 0.0);
    EXPECT_DOUBLE_EQ(triplet_loss(std::vector<double>{0}, std::vector<double>{3}, std::vector<double>{1}, 0.5), 2.5);
    EXPECT_EQ(error_of([&] { triplet_loss(a, a, std::vector<double>{1}, 0.2); }), Errc::LengthMismatch);
    EXPECT_EQ(error_of([&] { triplet_loss(a, a, a, 0.0); }), Errc::InvalidArgument);
}

TEST(Triplet, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = selftest::rand_vec(rng, 4), p = selftest::rand_vec(rng, 4), n = selftest::rand_vec(rng, 4);
        const auto g = triplet_loss_grad(a, p, n, 1.0);
        std::vector<double> all(a);
        all.insert(all.end(), p.begin(), p.end());
        all.insert(all.end(), n.begin(), n.end());
        std::vector<double> an(g.ga);
        an.insert(an.end(), g.gp.begin(), g.gp.end());
        an.insert(an.end(), g.gn.begin(), g.gn.end());
        auto f = [](std::span<const double> v) {
            return triplet_loss(v.subspan(0, 4), v.subspan(4, 4), v.subspan(8, 4), 1.0);
        };
        const auto rep = gradcheck(f, all, an, {1e-6, 1e-6, 1e-3});
        EXPECT_TRUE(rep.pass) << rep.max_rel_err;
    }
}

TEST(MomentumSgd, HeavyBall) {
    TensorStore w, g;
    w.add("x", {1}, 1.0);
    g.add("x", {1}, 2.0);
    MomentumSgd opt(0.1, 0.5);
    opt.step(w, g);
    EXPECT_DOUBLE_EQ(w.at("x").values[0], 1.0 - 0.1 * 2.0);
    opt.step(w, g);
    EXPECT_DOUBLE_EQ(w.at("x").values[0], 0.8 - 0.1 * 3.0);
}
