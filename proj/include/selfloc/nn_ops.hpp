#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "selfloc/error.hpp"
#include "selfloc/sparse_core.hpp"
#include "selfloc/tensor.hpp"

namespace selfloc {

// ---------------------------------------------------------------------------
// Matrix-level kernels shared by the pure ops below and by the taped ops in
// autodiff.hpp.
// ---------------------------------------------------------------------------
namespace kernels {

/// out[m] += sum over offsets o and pairs (n, m) of x[n] * W_o.
/// `weights` is laid out [offset][d_in][d_out]. Offsets are reduced in map
/// order and pairs in ascending output row, so the sum order is fixed.
template <typename T>
Matrix<T> conv_gather(const Matrix<T>& x, std::span<const T> weights, const KernelMap& map, std::size_t d_out,
                      std::span<const T> bias = {}) {
    const std::size_t d_in = x.cols();
    require(weights.size() == map.offsets.size() * d_in * d_out, Errc::ChannelMismatch,
            "kernel weights do not match input channels");
    require(x.rows() == map.n_in, Errc::LengthMismatch, "input rows do not match kernel map");
    Matrix<T> out(map.n_out, d_out);
    if (!bias.empty()) {
        require(bias.size() == d_out, Errc::ChannelMismatch, "bias length");
        for (std::size_t m = 0; m < map.n_out; ++m) std::copy(bias.begin(), bias.end(), out.row(m).begin());
    }
    for (std::size_t o = 0; o < map.offsets.size(); ++o) {
        const T* w = weights.data() + o * d_in * d_out;
        for (const auto& p : map.pairs[o]) {
            const T* xr = x.row(p.in).data();
            T* yr = out.row(p.out).data();
            for (std::size_t ci = 0; ci < d_in; ++ci) {
                const T xv = xr[ci];
                if (xv == T(0)) continue;
                const T* wr = w + ci * d_out;
                for (std::size_t co = 0; co < d_out; ++co) yr[co] += xv * wr[co];
            }
        }
    }
    return out;
}

/// Row-wise x * W for a d_in x d_out matrix.
template <typename T>
Matrix<T> matmul(const Matrix<T>& x, std::span<const T> w, std::size_t d_out) {
    const std::size_t d_in = x.cols();
    require(w.size() == d_in * d_out, Errc::ChannelMismatch, "weight shape does not match input channels");
    Matrix<T> out(x.rows(), d_out);
    for (std::size_t n = 0; n < x.rows(); ++n) {
        const T* xr = x.row(n).data();
        T* yr = out.row(n).data();
        for (std::size_t ci = 0; ci < d_in; ++ci) {
            const T xv = xr[ci];
            const T* wr = w.data() + ci * d_out;
            for (std::size_t co = 0; co < d_out; ++co) yr[co] += xv * wr[co];
        }
    }
    return out;
}

template <typename T>
T relu(T v) {
    return v > T(0) ? v : T(0);
}

template <typename T>
T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

}  // namespace kernels

enum class StrideMode { Same, Down2, Up2 };

/// Dense cubic kernel. Weights are stored [a][b][c][d_in][d_out] where
/// (a, b, c) index the taps along x, y, z.
template <typename T>
struct ConvKernel {
    int d = 1;
    std::size_t d_in = 1;
    std::size_t d_out = 1;
    std::vector<T> weights;
    std::vector<T> bias;  // empty means no bias
    std::int32_t dilation = 1;
    StrideMode mode = StrideMode::Same;

    ConvKernel() = default;
    ConvKernel(int d_, std::size_t in, std::size_t out, StrideMode m = StrideMode::Same)
        : d(d_), d_in(in), d_out(out), weights(static_cast<std::size_t>(d_) * d_ * d_ * in * out, T(0)), mode(m) {
        require(d >= 1 && in >= 1 && out >= 1, Errc::InvalidArgument, "kernel dims must be >= 1");
    }

    std::size_t tap_index(int a, int b, int c) const { return (static_cast<std::size_t>(a) * d + b) * d + c; }
    T& w(int a, int b, int c, std::size_t ci, std::size_t co) {
        return weights[(tap_index(a, b, c) * d_in + ci) * d_out + co];
    }
    const T& w(int a, int b, int c, std::size_t ci, std::size_t co) const {
        return weights[(tap_index(a, b, c) * d_in + ci) * d_out + co];
    }
    std::vector<Offset> offsets() const { return cubic_offsets(d); }
    std::size_t parameter_count() const { return weights.size() + bias.size(); }
};

/// 1-D kernel along one axis: taps stored [t][d_in][d_out].
template <typename T>
struct AsymmetricKernel {
    Axis axis = Axis::X;
    int d = 3;
    std::size_t d_in = 1;
    std::size_t d_out = 1;
    std::vector<T> taps;
    std::vector<T> bias;
    std::int32_t dilation = 1;

    AsymmetricKernel() = default;
    AsymmetricKernel(Axis ax, int d_, std::size_t in, std::size_t out, std::int32_t dil = 1)
        : axis(ax), d(d_), d_in(in), d_out(out), taps(static_cast<std::size_t>(d_) * in * out, T(0)), dilation(dil) {
        require(d % 2 == 1, Errc::InvalidArgument, "asymmetric kernels need an odd tap count");
        require(dilation >= 1, Errc::InvalidArgument, "dilation must be >= 1");
    }

    T& tap(int t, std::size_t ci, std::size_t co) { return taps[(static_cast<std::size_t>(t) * d_in + ci) * d_out + co]; }
    const T& tap(int t, std::size_t ci, std::size_t co) const {
        return taps[(static_cast<std::size_t>(t) * d_in + ci) * d_out + co];
    }
    std::vector<Offset> offsets() const { return axis_offsets(axis, d); }
};

enum class Activation { None, Relu };

/// Stats: each channel is standardized over the rows of the tensor (one
/// cloud) before the affine map. Affine: scale/shift only.
enum class NormMode { Stats, Affine };

inline constexpr double kNormEps = 1e-5;

template <typename T>
struct NormAct {
    std::vector<T> scale;
    std::vector<T> shift;
    Activation activation = Activation::Relu;
    NormMode mode = NormMode::Affine;

    static NormAct identity(std::size_t channels, Activation act = Activation::Relu, NormMode mode = NormMode::Affine) {
        return {std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0)), act, mode};
    }
};

struct PoolingParams {
    double p = 3.0;
    double eps = 1e-6;
};

template <typename T>
SparseTensor<T> sparse_conv(const SparseTensor<T>& x, const ConvKernel<T>& k, const CoordSetPtr& out_support) {
    require(x.channels() == k.d_in, Errc::ChannelMismatch, "input channels do not match kernel d_in");
    require(out_support != nullptr, Errc::InvalidArgument, "null output support");
    const auto offsets = k.offsets();
    KernelMap map;
    switch (k.mode) {
        case StrideMode::Same:
            require(out_support->stride() == x.stride(), Errc::StrideMismatch, "same-mode conv keeps the stride");
            map = build_kernel_map(*x.support, *out_support, offsets, k.dilation);
            break;
        case StrideMode::Down2:
            require(out_support->stride() == 2 * x.stride(), Errc::StrideMismatch, "down2 conv doubles the stride");
            map = build_kernel_map(*x.support, *out_support, offsets, k.dilation);
            break;
        case StrideMode::Up2:
            require(2 * out_support->stride() == x.stride(), Errc::StrideMismatch, "up2 conv halves the stride");
            map = transpose(build_kernel_map(*out_support, *x.support, offsets, k.dilation));
            break;
    }
    return {out_support, kernels::conv_gather<T>(x.features, k.weights, map, k.d_out, k.bias)};
}

/// Same-support convolution along a single axis.
template <typename T>
SparseTensor<T> axis_conv(const SparseTensor<T>& x, const AsymmetricKernel<T>& k) {
    require(x.channels() == k.d_in, Errc::ChannelMismatch, "input channels do not match kernel d_in");
    const auto offsets = k.offsets();
    const auto map = build_kernel_map(*x.support, *x.support, offsets, k.dilation);
    return {x.support, kernels::conv_gather<T>(x.features, k.taps, map, k.d_out, k.bias)};
}

/// Outer product of three 1-D tap vectors: out[(a*d + b)*d + c] = kx[a]*ky[b]*kz[c].
template <typename T>
std::vector<T> rank1_reconstruct(std::span<const T> kx, std::span<const T> ky, std::span<const T> kz) {
    require(kx.size() == ky.size() && ky.size() == kz.size(), Errc::LengthMismatch, "tap vectors must share length");
    const std::size_t d = kx.size();
    std::vector<T> out(d * d * d);
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b)
            for (std::size_t c = 0; c < d; ++c) out[(a * d + b) * d + c] = kx[a] * ky[b] * kz[c];
    return out;
}

/// Dense kernel equivalent to applying `kx`, then `ky`, then `kz`. With
/// channel mixing, tap (a, b, c) is the matrix product A_a * B_b * C_c; for
/// single-plane kernels this is exactly rank1_reconstruct.
template <typename T>
ConvKernel<T> compose_axis_kernels(const AsymmetricKernel<T>& kx, const AsymmetricKernel<T>& ky,
                                   const AsymmetricKernel<T>& kz) {
    require(kx.axis == Axis::X && ky.axis == Axis::Y && kz.axis == Axis::Z, Errc::InvalidArgument,
            "compose expects x, y, z kernels");
    require(kx.d == ky.d && ky.d == kz.d, Errc::LengthMismatch, "tap counts differ");
    require(kx.d_out == ky.d_in && ky.d_out == kz.d_in, Errc::ChannelMismatch, "chained channel counts differ");
    require(kx.dilation == ky.dilation && ky.dilation == kz.dilation, Errc::InvalidArgument, "dilations differ");
    const int d = kx.d;
    ConvKernel<T> dense(d, kx.d_in, kz.d_out);
    dense.dilation = kx.dilation;
    const std::size_t m1 = kx.d_out, m2 = ky.d_out;
    std::vector<T> ab(kx.d_in * m2);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            std::fill(ab.begin(), ab.end(), T(0));
            for (std::size_t ci = 0; ci < kx.d_in; ++ci)
                for (std::size_t u = 0; u < m1; ++u)
                    for (std::size_t v = 0; v < m2; ++v) ab[ci * m2 + v] += kx.tap(a, ci, u) * ky.tap(b, u, v);
            for (int c = 0; c < d; ++c)
                for (std::size_t ci = 0; ci < kx.d_in; ++ci)
                    for (std::size_t co = 0; co < kz.d_out; ++co) {
                        T s = 0;
                        for (std::size_t v = 0; v < m2; ++v) s += ab[ci * m2 + v] * kz.tap(c, v, co);
                        dense.w(a, b, c, ci, co) = s;
                    }
        }
    return dense;
}

namespace kernels {

/// Per-channel mean and 1/sqrt(var + eps) over rows, summed in row order.
template <typename T>
void column_stats(const Matrix<T>& x, std::vector<T>& mean, std::vector<T>& inv_std) {
    const std::size_t c_n = x.cols();
    mean.assign(c_n, T(0));
    inv_std.assign(c_n, T(0));
    if (x.rows() == 0) return;
    for (std::size_t n = 0; n < x.rows(); ++n)
        for (std::size_t c = 0; c < c_n; ++c) mean[c] += x(n, c);
    for (auto& m : mean) m /= static_cast<T>(x.rows());
    for (std::size_t n = 0; n < x.rows(); ++n)
        for (std::size_t c = 0; c < c_n; ++c) inv_std[c] += (x(n, c) - mean[c]) * (x(n, c) - mean[c]);
    for (auto& v : inv_std) v = T(1) / std::sqrt(v / static_cast<T>(x.rows()) + static_cast<T>(kNormEps));
}

template <typename T>
Matrix<T> standardize(const Matrix<T>& x) {
    std::vector<T> mean, inv_std;
    column_stats(x, mean, inv_std);
    Matrix<T> out = x;
    for (std::size_t n = 0; n < out.rows(); ++n)
        for (std::size_t c = 0; c < out.cols(); ++c) out(n, c) = (x(n, c) - mean[c]) * inv_std[c];
    return out;
}

}  // namespace kernels

template <typename T>
SparseTensor<T> norm_act(const SparseTensor<T>& x, const NormAct<T>& na) {
    require(na.scale.size() == x.channels() && na.shift.size() == x.channels(), Errc::ChannelMismatch,
            "norm parameters do not match channels");
    Matrix<T> out = na.mode == NormMode::Stats ? kernels::standardize(x.features) : x.features;
    for (std::size_t n = 0; n < out.rows(); ++n) {
        auto r = out.row(n);
        for (std::size_t c = 0; c < r.size(); ++c) {
            T v = na.scale[c] * r[c] + na.shift[c];
            r[c] = na.activation == Activation::Relu ? kernels::relu(v) : v;
        }
    }
    return {x.support, std::move(out)};
}

/// Per-row linear map with a 1x1x1 kernel; support unchanged.
template <typename T>
SparseTensor<T> channel_aligned_conv(const SparseTensor<T>& y, const ConvKernel<T>& k) {
    require(k.d == 1, Errc::InvalidArgument, "channel alignment uses a 1x1x1 kernel");
    require(y.channels() == k.d_in, Errc::ChannelMismatch, "input channels do not match kernel d_in");
    Matrix<T> out = kernels::matmul<T>(y.features, k.weights, k.d_out);
    if (!k.bias.empty())
        for (std::size_t n = 0; n < out.rows(); ++n)
            for (std::size_t c = 0; c < k.d_out; ++c) out(n, c) += k.bias[c];
    return {y.support, std::move(out)};
}

/// Generalized-mean pooling: G_c = ((1/N) sum_n max(x_nc, eps)^p)^(1/p).
/// Each column is summed in ascending order, so any row permutation gives
/// bit-identical output.
template <typename T>
std::vector<T> gem_pool(const Matrix<T>& x, const PoolingParams& pp) {
    require(x.rows() >= 1, Errc::EmptyTensor, "GeM pooling of an empty tensor");
    require(pp.p >= 1.0 && pp.eps > 0.0, Errc::InvalidArgument, "GeM needs p >= 1 and eps > 0");
    const std::size_t n_rows = x.rows(), c_n = x.cols();
    const bool linear = pp.p == 1.0;
    std::vector<T> g(c_n);
    std::vector<double> col(n_rows);
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t n = 0; n < n_rows; ++n) {
            const double v = std::max(static_cast<double>(x(n, c)), pp.eps);
            col[n] = linear ? v : std::pow(v, pp.p);
        }
        std::sort(col.begin(), col.end());
        double acc = 0;
        for (double v : col) acc += v;
        const double mean = acc / static_cast<double>(n_rows);
        g[c] = static_cast<T>(linear ? mean : std::pow(mean, 1.0 / pp.p));
    }
    return g;
}

template <typename T>
std::vector<T> gem_pool(const SparseTensor<T>& x, const PoolingParams& pp) {
    return gem_pool(x.features, pp);
}

}  // namespace selfloc
