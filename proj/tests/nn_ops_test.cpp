#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace selfloc;
using testutil::coords;
using testutil::error_of;

namespace {

SparseTensor<double> line3(double v = 1.0) {
    return {coords({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}), Matrix<double>(3, 1, v)};
}

/// Reference dense convolution on a side^3 grid with zero padding.
std::vector<double> dense_conv_oracle(const std::vector<double>& grid, int side, const ConvKernel<double>& k,
                                      std::size_t ci_n, std::size_t co_n) {
    std::vector<double> out(grid.size() / ci_n * co_n, 0.0);
    const int h = k.d / 2;
    auto at = [&](int i, int j, int l) { return ((i * side + j) * side + l); };
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
            for (int l = 0; l < side; ++l)
                for (int a = 0; a < k.d; ++a)
                    for (int b = 0; b < k.d; ++b)
                        for (int c = 0; c < k.d; ++c) {
                            const int x = i + a - h, y = j + b - h, z = l + c - h;
                            if (x < 0 || y < 0 || z < 0 || x >= side || y >= side || z >= side) continue;
                            for (std::size_t ci = 0; ci < ci_n; ++ci)
                                for (std::size_t co = 0; co < co_n; ++co)
                                    out[at(i, j, l) * co_n + co] += grid[at(x, y, z) * ci_n + ci] * k.w(a, b, c, ci, co);
                        }
    return out;
}

}  // namespace

TEST(SparseConv, IdentityOneByOne) {
    std::mt19937_64 rng(1);
    const auto s = selftest::random_support(rng, 10, 4);
    SparseTensor<double> x(s, selftest::rand_matrix(rng, 10, 3));
    ConvKernel<double> k(1, 3, 3);
    for (int c = 0; c < 3; ++c) k.w(0, 0, 0, c, c) = 1.0;
    EXPECT_EQ(sparse_conv(x, k, s).features, x.features);
}

TEST(SparseConv, IsolatedVoxelSeesCenterTap) {
    SparseTensor<double> x(coords({{0, 0, 0}}), Matrix<double>(1, 1, 2.5));
    ConvKernel<double> k(3, 1, 1);
    for (auto& w : k.weights) w = 9.0;
    k.w(1, 1, 1, 0, 0) = 0.75;
    EXPECT_DOUBLE_EQ(sparse_conv(x, k, x.support).features(0, 0), 1.875);
}

TEST(SparseConv, OnesBlockCenterAndFace) {
    const auto cube = selftest::dense_cube(3);
    SparseTensor<double> x(cube, Matrix<double>(27, 1, 1.0));
    ConvKernel<double> k(3, 1, 1);
    std::fill(k.weights.begin(), k.weights.end(), 1.0);
    const auto y = sparse_conv(x, k, cube);
    EXPECT_EQ(y.features(cube->find({0, 1, 1, 1}), 0), 27.0);
    EXPECT_EQ(y.features(cube->find({0, 0, 1, 1}), 0), 18.0);
    EXPECT_EQ(y.features(cube->find({0, 1, 1, 2}), 0), 18.0);
    EXPECT_EQ(y.features(cube->find({0, 0, 0, 0}), 0), 8.0);
}

TEST(SparseConv, RandomMatchesDenseOracle) {
    std::mt19937_64 rng(2);
    const int side = 5;
    const auto cube = selftest::dense_cube(side);
    SparseTensor<double> x(cube, selftest::rand_matrix(rng, cube->size(), 2));
    ConvKernel<double> k(3, 2, 3);
    k.weights = selftest::rand_vec(rng, k.weights.size());
    const auto y = sparse_conv(x, k, cube);
    const auto want = dense_conv_oracle(x.features.data(), side, k, 2, 3);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(y.features.data()[i], want[i], 1e-12);
}

TEST(SparseConv, BiasOnUnmatchedRows) {
    SparseTensor<double> x(coords({{0, 0, 0}}), Matrix<double>(1, 1, 1.0));
    const auto out = coords({{0, 0, 0}, {8, 0, 0}});
    ConvKernel<double> k(1, 1, 1);
    k.weights = {2.0};
    k.bias = {0.5};
    const auto y = sparse_conv(x, k, out);
    EXPECT_EQ(y.features(0, 0), 2.5);
    EXPECT_EQ(y.features(1, 0), 0.5);
}

TEST(SparseConv, ChannelMismatch) {
    SparseTensor<double> x(coords({{0, 0, 0}}), Matrix<double>(1, 2, 1.0));
    ConvKernel<double> k(3, 1, 1);
    EXPECT_EQ(error_of([&] { sparse_conv(x, k, x.support); }), Errc::ChannelMismatch);
}

TEST(AxisConv, OnesLine) {
    AsymmetricKernel<double> k(Axis::X, 3, 1, 1);
    k.taps = {1, 1, 1};
    const auto y = axis_conv(line3(), k);
    EXPECT_EQ(y.features.data(), (std::vector<double>{2, 3, 2}));
}

TEST(AxisConv, DeltaIsIdentity) {
    std::mt19937_64 rng(4);
    const auto s = selftest::random_support(rng, 30, 5);
    SparseTensor<double> x(s, selftest::rand_matrix(rng, 30, 2));
    for (Axis a : {Axis::X, Axis::Y, Axis::Z}) {
        AsymmetricKernel<double> k(a, 3, 2, 2);
        k.tap(1, 0, 0) = k.tap(1, 1, 1) = 1.0;
        EXPECT_EQ(axis_conv(x, k).features, x.features);
    }
}

TEST(AxisConv, DilationTwoReachesTwoVoxels) {
    AsymmetricKernel<double> k(Axis::X, 3, 1, 1, 2);
    k.taps = {0, 0, 1};
    const auto y = axis_conv(line3(), k);
    EXPECT_EQ(y.features.data(), (std::vector<double>{1, 0, 0}));
}

TEST(AxisConv, MatchesMaskedDenseKernel) {
    std::mt19937_64 rng(7);
    const auto s = selftest::random_support(rng, 50, 6);
    SparseTensor<double> x(s, selftest::rand_matrix(rng, 50, 2));
    for (Axis a : {Axis::X, Axis::Y, Axis::Z})
        for (int dil : {1, 2}) {
            AsymmetricKernel<double> k(a, 3, 2, 3, dil);
            k.taps = selftest::rand_vec(rng, k.taps.size());
            ConvKernel<double> dense(3, 2, 3);
            dense.dilation = dil;
            for (int t = 0; t < 3; ++t)
                for (std::size_t ci = 0; ci < 2; ++ci)
                    for (std::size_t co = 0; co < 3; ++co) {
                        const int ia = a == Axis::X ? t : 1, ib = a == Axis::Y ? t : 1, ic = a == Axis::Z ? t : 1;
                        dense.w(ia, ib, ic, ci, co) = k.tap(t, ci, co);
                    }
            const auto y = axis_conv(x, k), z = sparse_conv(x, dense, s);
            for (std::size_t i = 0; i < y.features.size(); ++i)
                EXPECT_NEAR(y.features.data()[i], z.features.data()[i], 1e-12);
        }
}

TEST(Rank1, DeltaKernel) {
    const std::vector<double> d{0, 1, 0};
    const auto k = rank1_reconstruct<double>(d, d, d);
    for (std::size_t i = 0; i < 27; ++i) EXPECT_EQ(k[i], i == 13 ? 1.0 : 0.0);
}

TEST(Rank1, TwoTapExpansion) {
    const std::vector<double> kx{1, 2}, ky{1, 0}, kz{0, 1};
    const auto k = rank1_reconstruct<double>(kx, ky, kz);
    // index (a * 2 + b) * 2 + c
    std::vector<double> want(8, 0.0);
    want[(0 * 2 + 0) * 2 + 1] = 1;
    want[(1 * 2 + 0) * 2 + 1] = 2;
    EXPECT_EQ(k, want);
}

TEST(Rank1, SlicesProportional) {
    std::mt19937_64 rng(8);
    const auto kx = selftest::rand_vec(rng, 3), ky = selftest::rand_vec(rng, 3), kz = selftest::rand_vec(rng, 3);
    const auto k = rank1_reconstruct<double>(kx, ky, kz);
    // every 2x2 minor of the x-by-(yz) unfolding vanishes
    for (int a1 = 0; a1 < 3; ++a1)
        for (int a2 = 0; a2 < 3; ++a2)
            for (int m = 0; m < 9; ++m)
                for (int n = 0; n < 9; ++n)
                    EXPECT_NEAR(k[a1 * 9 + m] * k[a2 * 9 + n] - k[a1 * 9 + n] * k[a2 * 9 + m], 0.0, 1e-14);
    EXPECT_EQ(error_of([] {
                  const std::vector<double> a{1, 2, 3}, b{1, 2};
                  rank1_reconstruct<double>(a, a, b);
              }),
              Errc::LengthMismatch);
}

TEST(Rank1, SingleChannelComposeEqualsOuterProduct) {
    std::mt19937_64 rng(9);
    AsymmetricKernel<double> kx(Axis::X, 3, 1, 1), ky(Axis::Y, 3, 1, 1), kz(Axis::Z, 3, 1, 1);
    for (auto* k : {&kx, &ky, &kz}) k->taps = selftest::rand_vec(rng, 3);
    const auto dense = compose_axis_kernels(kx, ky, kz);
    const auto outer = rank1_reconstruct<double>(kx.taps, ky.taps, kz.taps);
    for (std::size_t i = 0; i < 27; ++i) EXPECT_NEAR(dense.weights[i], outer[i], 1e-15);
}

TEST(Decomposition, AxisChainEqualsDenseOnInterior) {
    std::mt19937_64 rng(10);
    EXPECT_LT(selftest::rank1_gap(rng, 7), 1e-10);
    EXPECT_LT(selftest::decomposition_gap(rng, 7, 3, 4, 2, 5), 1e-10);
}

TEST(NormAct, ReluDefinition) {
    SparseTensor<double> x(coords({{0, 0, 0}}), Matrix<double>(1, 2, std::vector<double>{-1, 2}));
    const auto y = norm_act(x, NormAct<double>::identity(2));
    EXPECT_EQ(y.features.data(), (std::vector<double>{0, 2}));
}

TEST(NormAct, Affine) {
    SparseTensor<double> x(coords({{0, 0, 0}}), Matrix<double>(1, 1, 3.0));
    NormAct<double> na{{2.0}, {1.0}, Activation::None};
    EXPECT_EQ(norm_act(x, na).features(0, 0), 7.0);
}

TEST(NormAct, IdentityOnRandom) {
    std::mt19937_64 rng(11);
    const auto s = selftest::random_support(rng, 12, 4);
    SparseTensor<double> x(s, selftest::rand_matrix(rng, 12, 3));
    EXPECT_EQ(norm_act(x, NormAct<double>::identity(3, Activation::None)).features, x.features);
}

TEST(NormAct, StatsModeStandardizesColumns) {
    std::mt19937_64 rng(12);
    const auto s = selftest::random_support(rng, 40, 5);
    SparseTensor<double> x(s, selftest::rand_matrix(rng, 40, 2, 3.0, 9.0));
    const auto y = norm_act(x, NormAct<double>::identity(2, Activation::None, NormMode::Stats));
    for (std::size_t c = 0; c < 2; ++c) {
        double m = 0, v = 0;
        for (std::size_t n = 0; n < 40; ++n) m += y.features(n, c);
        m /= 40;
        for (std::size_t n = 0; n < 40; ++n) v += (y.features(n, c) - m) * (y.features(n, c) - m);
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(v / 40, 1.0, 1e-3);
    }
}

TEST(NormAct, ChannelMismatch) {
    SparseTensor<double> x(coords({{0, 0, 0}}), Matrix<double>(1, 2, 1.0));
    EXPECT_EQ(error_of([&] { norm_act(x, NormAct<double>::identity(3)); }), Errc::ChannelMismatch);
}

TEST(ChannelAligned, Identity) {
    std::mt19937_64 rng(13);
    SparseTensor<double> x(selftest::random_support(rng, 6, 3), selftest::rand_matrix(rng, 6, 3));
    ConvKernel<double> k(1, 3, 3);
    for (int c = 0; c < 3; ++c) k.w(0, 0, 0, c, c) = 1.0;
    EXPECT_EQ(channel_aligned_conv(x, k).features, x.features);
}

TEST(ChannelAligned, RowSum) {
    SparseTensor<double> x(coords({{0, 0, 0}}), Matrix<double>(1, 2, std::vector<double>{3, 4}));
    ConvKernel<double> k(1, 2, 1);
    k.weights = {1, 1};
    EXPECT_EQ(channel_aligned_conv(x, k).features(0, 0), 7.0);
}

TEST(ChannelAligned, MatchesMatrixProduct) {
    std::mt19937_64 rng(14);
    const auto x = selftest::rand_matrix(rng, 9, 4);
    ConvKernel<double> k(1, 4, 5);
    k.weights = selftest::rand_vec(rng, 20);
    const auto y = channel_aligned_conv(SparseTensor<double>(selftest::random_support(rng, 9, 4), x), k);
    for (std::size_t n = 0; n < 9; ++n)
        for (std::size_t o = 0; o < 5; ++o) {
            double s = 0;
            for (std::size_t i = 0; i < 4; ++i) s += x(n, i) * k.weights[i * 5 + o];
            EXPECT_NEAR(y.features(n, o), s, 1e-12);
        }
    ConvKernel<double> bad(1, 3, 5);
    EXPECT_EQ(error_of([&] { channel_aligned_conv(SparseTensor<double>(selftest::random_support(rng, 9, 4), x), bad); }),
              Errc::ChannelMismatch);
}

TEST(Gem, ArithmeticMean) {
    const Matrix<double> x(2, 2, std::vector<double>{1, 3, 3, 5});
    EXPECT_EQ(gem_pool(x, {1.0, 1e-6}), (std::vector<double>{2, 4}));
}

TEST(Gem, Quadratic) {
    const Matrix<double> x(2, 2, std::vector<double>{1, 3, 3, 5});
    const auto g = gem_pool(x, {2.0, 1e-6});
    EXPECT_NEAR(g[0], std::sqrt(5.0), 1e-12);
    EXPECT_NEAR(g[1], std::sqrt(17.0), 1e-12);
    EXPECT_NEAR(g[0], 2.23607, 1e-5);
    EXPECT_NEAR(g[1], 4.12311, 1e-5);
}

TEST(Gem, LargePApproachesMax) {
    const Matrix<double> x(2, 2, std::vector<double>{1, 3, 3, 5});
    const auto g = gem_pool(x, {100.0, 1e-6});
    EXPECT_LE(std::abs(g[0] - 3.0) / 3.0, 0.03);
    EXPECT_LE(std::abs(g[1] - 5.0) / 5.0, 0.03);
}

TEST(Gem, MonotoneInP) {
    std::mt19937_64 rng(15);
    const auto x = selftest::rand_matrix(rng, 20, 3, 0.0, 2.0);
    auto prev = gem_pool(x, {1.0, 1e-6});
    for (double p : {1.5, 2.0, 3.0, 6.0, 20.0}) {
        const auto g = gem_pool(x, {p, 1e-6});
        for (std::size_t c = 0; c < 3; ++c) EXPECT_GE(g[c], prev[c] - 1e-12);
        prev = g;
    }
}

TEST(Gem, EmptyAndBadParams) {
    EXPECT_EQ(error_of([] { gem_pool(Matrix<double>(0, 2), {3.0, 1e-6}); }), Errc::EmptyTensor);
    EXPECT_EQ(error_of([] { gem_pool(Matrix<double>(1, 2), {0.5, 1e-6}); }), Errc::InvalidArgument);
}
