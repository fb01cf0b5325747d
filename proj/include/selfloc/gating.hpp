#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "selfloc/error.hpp"
#include "selfloc/nn_ops.hpp"
#include "selfloc/sparse_core.hpp"

namespace selfloc {

/// Two-layer perceptron C -> C -> 1 producing one saliency logit per point.
/// w1 is C x C (row-vector convention: h = relu(x * w1 + b1)), w2 has C
/// entries, b2 is a scalar.
template <typename T>
struct PointGateParams {
    std::size_t channels = 0;
    std::vector<T> w1, b1, w2;
    T b2 = T(0);

    static PointGateParams zeros(std::size_t c) {
        return {c, std::vector<T>(c * c, T(0)), std::vector<T>(c, T(0)), std::vector<T>(c, T(0)), T(0)};
    }
};

/// Single fully-connected C -> C layer (no reduction): s = sigmoid(W a + b),
/// W stored row-major with W[i][j] mapping input channel j to output i.
template <typename T>
struct ChannelGateParams {
    std::size_t channels = 0;
    std::vector<T> w, b;

    static ChannelGateParams zeros(std::size_t c) {
        return {c, std::vector<T>(c * c, T(0)), std::vector<T>(c, T(0))};
    }
};

enum class GateKind { Channel, Point };

struct SffbConfig {
    std::vector<GateKind> order{GateKind::Channel, GateKind::Point};

    /// Parses strings like "cp", "pc", "c", "p".
    static SffbConfig parse(std::string_view s) {
        SffbConfig cfg;
        cfg.order.clear();
        for (char ch : s) {
            if (ch == 'c' || ch == 'C') cfg.order.push_back(GateKind::Channel);
            else if (ch == 'p' || ch == 'P') cfg.order.push_back(GateKind::Point);
            else fail(Errc::InvalidArgument, "unknown gate kind '" + std::string(1, ch) + "'");
        }
        require(!cfg.order.empty() && cfg.order.size() <= 2, Errc::InvalidArgument,
                "SFFB order must have one or two layers");
        return cfg;
    }
    std::string str() const {
        std::string s;
        for (auto g : order) s += g == GateKind::Channel ? 'c' : 'p';
        return s;
    }
    bool operator==(const SffbConfig&) const = default;
};

template <typename T>
struct GateResult {
    SparseTensor<T> out;
    std::vector<T> attention;  // length N for point gates, C for channel gates
};

namespace kernels {

/// Logit of the point-gate perceptron for one row.
template <typename T>
T point_gate_logit(std::span<const T> x, const PointGateParams<T>& g, std::vector<T>& hidden) {
    const std::size_t c_n = g.channels;
    hidden.assign(g.b1.begin(), g.b1.end());
    for (std::size_t ci = 0; ci < c_n; ++ci) {
        const T xv = x[ci];
        const T* wr = g.w1.data() + ci * c_n;
        for (std::size_t h = 0; h < c_n; ++h) hidden[h] += xv * wr[h];
    }
    T z = g.b2;
    for (std::size_t h = 0; h < c_n; ++h) z += relu(hidden[h]) * g.w2[h];
    return z;
}

/// Row mean in fixed ascending-row order.
template <typename T>
std::vector<T> column_mean(const Matrix<T>& x) {
    std::vector<T> a(x.cols(), T(0));
    for (std::size_t n = 0; n < x.rows(); ++n) {
        auto r = x.row(n);
        for (std::size_t c = 0; c < a.size(); ++c) a[c] += r[c];
    }
    for (auto& v : a) v /= static_cast<T>(x.rows());
    return a;
}

template <typename T>
std::vector<T> channel_gate_scores(const std::vector<T>& mean, const ChannelGateParams<T>& g) {
    const std::size_t c_n = g.channels;
    std::vector<T> s(c_n);
    for (std::size_t i = 0; i < c_n; ++i) {
        T z = g.b[i];
        for (std::size_t j = 0; j < c_n; ++j) z += g.w[i * c_n + j] * mean[j];
        s[i] = sigmoid(z);
    }
    return s;
}

}  // namespace kernels

/// out_n = x_n * sigmoid(MLP(x_n)).
template <typename T>
GateResult<T> point_gate(const SparseTensor<T>& x, const PointGateParams<T>& g) {
    require(x.channels() == g.channels && g.w1.size() == g.channels * g.channels && g.b1.size() == g.channels &&
                g.w2.size() == g.channels,
            Errc::ChannelMismatch, "point gate parameters do not match channels");
    Matrix<T> out = x.features;
    std::vector<T> scores(x.rows());
    std::vector<T> hidden;
    for (std::size_t n = 0; n < x.rows(); ++n) {
        const T s = kernels::sigmoid(kernels::point_gate_logit<T>(x.features.row(n), g, hidden));
        scores[n] = s;
        for (auto& v : out.row(n)) v *= s;
    }
    return {{x.support, std::move(out)}, std::move(scores)};
}

/// out_n = x_n (Hadamard) sigmoid(W * mean(X) + b), one scale per channel.
template <typename T>
GateResult<T> channel_gate(const SparseTensor<T>& x, const ChannelGateParams<T>& g) {
    require(x.channels() == g.channels && g.w.size() == g.channels * g.channels && g.b.size() == g.channels,
            Errc::ChannelMismatch, "channel gate parameters do not match channels");
    require(x.rows() >= 1, Errc::EmptyTensor, "channel gate on an empty tensor");
    const auto s = kernels::channel_gate_scores(kernels::column_mean(x.features), g);
    Matrix<T> out = x.features;
    for (std::size_t n = 0; n < out.rows(); ++n) {
        auto r = out.row(n);
        for (std::size_t c = 0; c < r.size(); ++c) r[c] *= s[c];
    }
    return {{x.support, std::move(out)}, s};
}

template <typename T>
struct SffbParams {
    ChannelGateParams<T> channel;
    PointGateParams<T> point;

    static SffbParams zeros(std::size_t c) { return {ChannelGateParams<T>::zeros(c), PointGateParams<T>::zeros(c)}; }
};

template <typename T>
struct SffbResult {
    SparseTensor<T> out;
    std::vector<T> point_attention;    // empty if no point gate ran
    std::vector<T> channel_attention;  // empty if no channel gate ran
};

template <typename T>
SffbResult<T> sffb(const SparseTensor<T>& x, const SffbParams<T>& params, const SffbConfig& cfg) {
    SffbResult<T> r{x, {}, {}};
    for (auto kind : cfg.order) {
        if (kind == GateKind::Channel) {
            auto g = channel_gate(r.out, params.channel);
            r.out = std::move(g.out);
            r.channel_attention = std::move(g.attention);
        } else {
            auto g = point_gate(r.out, params.point);
            r.out = std::move(g.out);
            r.point_attention = std::move(g.attention);
        }
    }
    return r;
}

}  // namespace selfloc
