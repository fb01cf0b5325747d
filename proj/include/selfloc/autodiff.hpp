#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selfloc/error.hpp"
#include "selfloc/gating.hpp"
#include "selfloc/nn_ops.hpp"
#include "selfloc/tensor.hpp"

namespace selfloc {

/// Test hook: naming an op here makes its backward rule return a scaled
/// (wrong) gradient so harness sensitivity can be checked.
namespace testing_hooks {
inline std::string corrupted_backward;
inline double corruption(std::string_view op) { return corrupted_backward == op ? 1.5 : 1.0; }
}  // namespace testing_hooks

// ---------------------------------------------------------------------------
// Backward rules. Each accumulates (+=) into the gradient buffers it is given;
// null buffers are skipped.
// ---------------------------------------------------------------------------
namespace grad {

inline void conv(const Matrix<double>& x, std::span<const double> weights, const KernelMap& map, std::size_t d_out,
                 const Matrix<double>& gy, Matrix<double>* gx, std::span<double> gw) {
    const std::size_t d_in = x.cols();
    const double k = testing_hooks::corruption("conv");
    for (std::size_t o = 0; o < map.offsets.size(); ++o) {
        const double* w = weights.data() + o * d_in * d_out;
        double* gwo = gw.empty() ? nullptr : gw.data() + o * d_in * d_out;
        for (const auto& p : map.pairs[o]) {
            const double* g = gy.row(p.out).data();
            const double* xr = x.row(p.in).data();
            if (gx) {
                double* gxr = gx->row(p.in).data();
                for (std::size_t ci = 0; ci < d_in; ++ci) {
                    const double* wr = w + ci * d_out;
                    double s = 0;
                    for (std::size_t co = 0; co < d_out; ++co) s += g[co] * wr[co];
                    gxr[ci] += k * s;
                }
            }
            if (gwo)
                for (std::size_t ci = 0; ci < d_in; ++ci) {
                    const double xv = xr[ci];
                    if (xv == 0.0) continue;
                    double* gr = gwo + ci * d_out;
                    for (std::size_t co = 0; co < d_out; ++co) gr[co] += xv * g[co];
                }
        }
    }
}

inline void linear(const Matrix<double>& x, std::span<const double> w, std::size_t d_out, const Matrix<double>& gy,
                   Matrix<double>* gx, std::span<double> gw) {
    const std::size_t d_in = x.cols();
    for (std::size_t n = 0; n < x.rows(); ++n) {
        const double* g = gy.row(n).data();
        const double* xr = x.row(n).data();
        for (std::size_t ci = 0; ci < d_in; ++ci) {
            const double* wr = w.data() + ci * d_out;
            if (gx) {
                double s = 0;
                for (std::size_t co = 0; co < d_out; ++co) s += g[co] * wr[co];
                (*gx)(n, ci) += s;
            }
            if (!gw.empty())
                for (std::size_t co = 0; co < d_out; ++co) gw[ci * d_out + co] += xr[ci] * g[co];
        }
    }
}

/// `xhat` is the tensor the affine map saw: the standardized input in Stats
/// mode (with `inv_std` per channel) or the raw input in Affine mode (empty
/// `inv_std`).
inline void norm_act(const Matrix<double>& xhat, std::span<const double> inv_std, std::span<const double> scale,
                     std::span<const double> shift, Activation act, const Matrix<double>& gy, Matrix<double>* gx,
                     std::span<double> gscale, std::span<double> gshift) {
    const double k = testing_hooks::corruption("norm_act");
    const std::size_t rows = xhat.rows(), c_n = xhat.cols();
    Matrix<double> gh(rows, c_n);
    for (std::size_t n = 0; n < rows; ++n)
        for (std::size_t c = 0; c < c_n; ++c) {
            const double pre = scale[c] * xhat(n, c) + shift[c];
            if (act == Activation::Relu && pre <= 0.0) continue;
            const double g = gy(n, c) * k;
            gh(n, c) = g * scale[c];
            if (!gscale.empty()) gscale[c] += g * xhat(n, c);
            if (!gshift.empty()) gshift[c] += g;
        }
    if (!gx) return;
    if (inv_std.empty()) {
        for (std::size_t i = 0; i < gh.size(); ++i) gx->data()[i] += gh.data()[i];
        return;
    }
    std::vector<double> sum_g(c_n, 0.0), sum_gx(c_n, 0.0);
    for (std::size_t n = 0; n < rows; ++n)
        for (std::size_t c = 0; c < c_n; ++c) {
            sum_g[c] += gh(n, c);
            sum_gx[c] += gh(n, c) * xhat(n, c);
        }
    const double inv_n = 1.0 / static_cast<double>(rows);
    for (std::size_t n = 0; n < rows; ++n)
        for (std::size_t c = 0; c < c_n; ++c)
            (*gx)(n, c) += inv_std[c] * (gh(n, c) - inv_n * sum_g[c] - inv_n * xhat(n, c) * sum_gx[c]);
}

inline void point_gate(const Matrix<double>& x, const PointGateParams<double>& p, const Matrix<double>& gy,
                       Matrix<double>* gx, PointGateParams<double>* gp) {
    const std::size_t c_n = p.channels;
    const double k = testing_hooks::corruption("point_gate");
    std::vector<double> hidden, dh(c_n);
    for (std::size_t n = 0; n < x.rows(); ++n) {
        auto xr = x.row(n);
        auto g = gy.row(n);
        const double s = kernels::sigmoid(kernels::point_gate_logit<double>(xr, p, hidden));
        double ds = 0;
        for (std::size_t c = 0; c < c_n; ++c) ds += g[c] * xr[c];
        const double dz = ds * s * (1.0 - s) * k;
        if (gx)
            for (std::size_t c = 0; c < c_n; ++c) (*gx)(n, c) += g[c] * s;
        for (std::size_t h = 0; h < c_n; ++h) dh[h] = hidden[h] > 0.0 ? dz * p.w2[h] : 0.0;
        if (gp) {
            gp->b2 += dz;
            for (std::size_t h = 0; h < c_n; ++h) {
                gp->w2[h] += dz * kernels::relu(hidden[h]);
                gp->b1[h] += dh[h];
            }
            for (std::size_t ci = 0; ci < c_n; ++ci)
                for (std::size_t h = 0; h < c_n; ++h) gp->w1[ci * c_n + h] += xr[ci] * dh[h];
        }
        if (gx)
            for (std::size_t ci = 0; ci < c_n; ++ci) {
                double sum = 0;
                for (std::size_t h = 0; h < c_n; ++h) sum += p.w1[ci * c_n + h] * dh[h];
                (*gx)(n, ci) += sum;
            }
    }
}

inline void channel_gate(const Matrix<double>& x, const ChannelGateParams<double>& p, const Matrix<double>& gy,
                         Matrix<double>* gx, ChannelGateParams<double>* gp) {
    const std::size_t c_n = p.channels;
    const double k = testing_hooks::corruption("channel_gate");
    const auto mean = kernels::column_mean(x);
    const auto s = kernels::channel_gate_scores(mean, p);
    std::vector<double> dz(c_n, 0.0);
    for (std::size_t n = 0; n < x.rows(); ++n)
        for (std::size_t c = 0; c < c_n; ++c) dz[c] += gy(n, c) * x(n, c);
    for (std::size_t c = 0; c < c_n; ++c) dz[c] *= s[c] * (1.0 - s[c]) * k;
    std::vector<double> da(c_n, 0.0);
    for (std::size_t i = 0; i < c_n; ++i)
        for (std::size_t j = 0; j < c_n; ++j) da[j] += p.w[i * c_n + j] * dz[i];
    if (gp)
        for (std::size_t i = 0; i < c_n; ++i) {
            gp->b[i] += dz[i];
            for (std::size_t j = 0; j < c_n; ++j) gp->w[i * c_n + j] += dz[i] * mean[j];
        }
    if (gx) {
        const double inv_n = 1.0 / static_cast<double>(x.rows());
        for (std::size_t n = 0; n < x.rows(); ++n)
            for (std::size_t c = 0; c < c_n; ++c) (*gx)(n, c) += gy(n, c) * s[c] + da[c] * inv_n;
    }
}

/// Gradient of GeM pooling w.r.t. inputs and the exponent p.
inline void gem(const Matrix<double>& x, double p, double eps, std::span<const double> gg, Matrix<double>* gx,
                double* gp) {
    const std::size_t n_rows = x.rows(), c_n = x.cols();
    const double k = testing_hooks::corruption("gem");
    const double inv_n = 1.0 / static_cast<double>(n_rows);
    for (std::size_t c = 0; c < c_n; ++c) {
        double m = 0, mlog = 0;
        for (std::size_t n = 0; n < n_rows; ++n) {
            const double y = std::max(x(n, c), eps);
            const double yp = std::pow(y, p);
            m += yp;
            mlog += yp * std::log(y);
        }
        m *= inv_n;
        mlog *= inv_n;
        const double g_val = std::pow(m, 1.0 / p);
        if (gx) {
            const double coef = gg[c] * k * std::pow(m, 1.0 / p - 1.0) * inv_n;
            for (std::size_t n = 0; n < n_rows; ++n)
                if (x(n, c) > eps) (*gx)(n, c) += coef * std::pow(x(n, c), p - 1.0);
        }
        if (gp) *gp += gg[c] * k * g_val * (mlog / (p * m) - std::log(m) / (p * p));
    }
}

}  // namespace grad

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

using NodeId = std::size_t;

/// Records a forward pass over feature matrices so gradients can be pulled
/// back to the inputs and to the named parameters of a TensorStore. Nodes are
/// appended in execution order, which is a topological order; backward walks
/// them in reverse.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, NodeId)>;

    explicit Tape(const TensorStore* params = nullptr, bool record = true) : params_(params), record_(record) {}

    bool recording() const noexcept { return record_; }

    /// Called by Stats-mode norms with (prefix, per-channel mean, per-channel
    /// 1/sqrt(var + eps)) of their input.
    std::function<void(const std::string&, const std::vector<double>&, const std::vector<double>&)> norm_observer;

    NodeId input(Matrix<double> value, bool requires_grad = false) {
        nodes_.push_back({std::move(value), {}, nullptr, requires_grad});
        return nodes_.size() - 1;
    }

    NodeId push(Matrix<double> value, BackwardFn fn) {
        nodes_.push_back({std::move(value), {}, record_ ? std::move(fn) : nullptr, true});
        return nodes_.size() - 1;
    }

    const Matrix<double>& value(NodeId id) const { return node(id).value; }
    bool requires_grad(NodeId id) const { return node(id).requires_grad; }
    bool has_grad(NodeId id) const { return node(id).grad.size() != 0 || node(id).value.size() == 0; }

    /// Gradient buffer of `id`, allocated as zeros on first access.
    Matrix<double>& grad(NodeId id) {
        auto& n = node(id);
        if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols())
            n.grad = Matrix<double>(n.value.rows(), n.value.cols());
        return n.grad;
    }
    /// Gradient buffer for a parent, or null when that parent takes no gradient.
    Matrix<double>* grad_if_needed(NodeId id) { return requires_grad(id) ? &grad(id) : nullptr; }

    const Tensor& param(const std::string& name) const {
        require(params_ != nullptr, Errc::IncompleteWeights, "tape has no parameter store");
        return params_->at(name);
    }
    std::span<double> param_grad(const std::string& name) {
        return grads_.accumulator(name, param(name).shape).values;
    }
    const TensorStore& param_grads() const noexcept { return grads_; }
    TensorStore& param_grads() noexcept { return grads_; }

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Seeds d(loss)/d(value(id)) = seed and runs every recorded backward rule.
    void backward(NodeId id, const Matrix<double>& seed) {
        require(record_, Errc::UnrecordedNode, "backward on a tape that did not record");
        auto& g = grad(id);
        require(seed.rows() == g.rows() && seed.cols() == g.cols(), Errc::LengthMismatch, "seed shape");
        for (std::size_t i = 0; i < seed.size(); ++i) g.data()[i] += seed.data()[i];
        for (std::size_t n = id + 1; n-- > 0;) {
            auto& nd = nodes_[n];
            if (!nd.backward || nd.grad.size() == 0) continue;
            nd.backward(*this, n);
        }
    }

    /// Backward from a 1x1 scalar node.
    void backward(NodeId id) {
        require(value(id).size() == 1, Errc::LengthMismatch, "scalar backward needs a 1x1 node");
        backward(id, Matrix<double>(1, 1, 1.0));
    }

private:
    struct Node {
        Matrix<double> value;
        Matrix<double> grad;
        BackwardFn backward;
        bool requires_grad = true;
    };

    Node& node(NodeId id) {
        if (id >= nodes_.size()) fail(Errc::UnrecordedNode, "node " + std::to_string(id) + " not on tape");
        return nodes_[id];
    }
    const Node& node(NodeId id) const {
        if (id >= nodes_.size()) fail(Errc::UnrecordedNode, "node " + std::to_string(id) + " not on tape");
        return nodes_[id];
    }

    const TensorStore* params_;
    bool record_;
    std::vector<Node> nodes_;
    TensorStore grads_;
};

// ---------------------------------------------------------------------------
// Taped ops. Parameters are referenced by name in the tape's store.
// ---------------------------------------------------------------------------
namespace ad {

using MapPtr = std::shared_ptr<const KernelMap>;

inline NodeId conv(Tape& t, NodeId x, MapPtr map, const std::string& w, std::size_t d_out) {
    const auto& weights = t.param(w);
    auto y = kernels::conv_gather<double>(t.value(x), weights.values, *map, d_out);
    return t.push(std::move(y), [x, map, w, d_out](Tape& tp, NodeId self) {
        grad::conv(tp.value(x), tp.param(w).values, *map, d_out, tp.grad(self), tp.grad_if_needed(x),
                   tp.param_grad(w));
    });
}

inline NodeId linear(Tape& t, NodeId x, const std::string& w, std::size_t d_out) {
    auto y = kernels::matmul<double>(t.value(x), t.param(w).values, d_out);
    return t.push(std::move(y), [x, w, d_out](Tape& tp, NodeId self) {
        grad::linear(tp.value(x), tp.param(w).values, d_out, tp.grad(self), tp.grad_if_needed(x), tp.param_grad(w));
    });
}

inline NodeId norm_act(Tape& t, NodeId x, const std::string& prefix, Activation act,
                       NormMode mode = NormMode::Stats) {
    const std::string sn = prefix + ".scale", hn = prefix + ".shift";
    const auto& scale = t.param(sn).values;
    const auto& shift = t.param(hn).values;
    const auto& xv = t.value(x);
    require(scale.size() == xv.cols() && shift.size() == xv.cols(), Errc::ChannelMismatch, "norm '" + prefix + "'");
    auto xhat = std::make_shared<Matrix<double>>();
    auto inv_std = std::make_shared<std::vector<double>>();
    if (mode == NormMode::Stats) {
        std::vector<double> mean;
        kernels::column_stats(xv, mean, *inv_std);
        if (t.norm_observer) t.norm_observer(prefix, mean, *inv_std);
        *xhat = xv;
        for (std::size_t n = 0; n < xv.rows(); ++n)
            for (std::size_t c = 0; c < xv.cols(); ++c) (*xhat)(n, c) = (xv(n, c) - mean[c]) * (*inv_std)[c];
    }
    const Matrix<double>& src = mode == NormMode::Stats ? *xhat : xv;
    Matrix<double> y(xv.rows(), xv.cols());
    for (std::size_t n = 0; n < xv.rows(); ++n)
        for (std::size_t c = 0; c < xv.cols(); ++c) {
            const double v = scale[c] * src(n, c) + shift[c];
            y(n, c) = act == Activation::Relu ? kernels::relu(v) : v;
        }
    if (!t.recording()) return t.push(std::move(y), nullptr);
    return t.push(std::move(y), [x, sn, hn, act, xhat, inv_std](Tape& tp, NodeId self) {
        const Matrix<double>& h = inv_std->empty() ? tp.value(x) : *xhat;
        grad::norm_act(h, *inv_std, tp.param(sn).values, tp.param(hn).values, act, tp.grad(self),
                       tp.grad_if_needed(x), tp.param_grad(sn), tp.param_grad(hn));
    });
}

inline NodeId add(Tape& t, NodeId a, NodeId b) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    require(av.rows() == bv.rows() && av.cols() == bv.cols(), Errc::LengthMismatch, "add shape mismatch");
    Matrix<double> y = av;
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += bv.data()[i];
    return t.push(std::move(y), [a, b](Tape& tp, NodeId self) {
        const auto& g = tp.grad(self);
        for (NodeId p : {a, b})
            if (auto* gp = tp.grad_if_needed(p))
                for (std::size_t i = 0; i < g.size(); ++i) gp->data()[i] += g.data()[i];
    });
}

inline NodeId relu(Tape& t, NodeId x) {
    Matrix<double> y = t.value(x);
    for (auto& v : y.data()) v = kernels::relu(v);
    return t.push(std::move(y), [x](Tape& tp, NodeId self) {
        auto* gx = tp.grad_if_needed(x);
        if (!gx) return;
        const auto& xv = tp.value(x);
        const auto& g = tp.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv.data()[i] > 0.0) gx->data()[i] += g.data()[i];
    });
}

inline PointGateParams<double> point_gate_params(const Tape& t, const std::string& prefix) {
    const auto& w1 = t.param(prefix + ".w1");
    PointGateParams<double> p;
    p.channels = w1.shape.at(0);
    p.w1 = w1.values;
    p.b1 = t.param(prefix + ".b1").values;
    p.w2 = t.param(prefix + ".w2").values;
    p.b2 = t.param(prefix + ".b2").values.at(0);
    return p;
}

inline ChannelGateParams<double> channel_gate_params(const Tape& t, const std::string& prefix) {
    const auto& w = t.param(prefix + ".w");
    return {w.shape.at(0), w.values, t.param(prefix + ".b").values};
}

inline NodeId point_gate(Tape& t, NodeId x, const std::string& prefix, std::vector<double>* attention = nullptr) {
    auto params = point_gate_params(t, prefix);
    const auto& xv = t.value(x);
    require(xv.cols() == params.channels, Errc::ChannelMismatch, "point gate '" + prefix + "'");
    Matrix<double> y = xv;
    std::vector<double> hidden;
    if (attention) attention->assign(xv.rows(), 0.0);
    for (std::size_t n = 0; n < xv.rows(); ++n) {
        const double s = kernels::sigmoid(kernels::point_gate_logit<double>(xv.row(n), params, hidden));
        if (attention) (*attention)[n] = s;
        for (auto& v : y.row(n)) v *= s;
    }
    return t.push(std::move(y), [x, prefix](Tape& tp, NodeId self) {
        auto params = point_gate_params(tp, prefix);
        auto g = PointGateParams<double>::zeros(params.channels);
        grad::point_gate(tp.value(x), params, tp.grad(self), tp.grad_if_needed(x), &g);
        auto acc = [&](const std::string& n, std::span<const double> v) {
            auto dst = tp.param_grad(prefix + n);
            for (std::size_t i = 0; i < v.size(); ++i) dst[i] += v[i];
        };
        acc(".w1", g.w1);
        acc(".b1", g.b1);
        acc(".w2", g.w2);
        acc(".b2", std::span<const double>(&g.b2, 1));
    });
}

inline NodeId channel_gate(Tape& t, NodeId x, const std::string& prefix, std::vector<double>* attention = nullptr) {
    auto params = channel_gate_params(t, prefix);
    const auto& xv = t.value(x);
    require(xv.cols() == params.channels, Errc::ChannelMismatch, "channel gate '" + prefix + "'");
    require(xv.rows() >= 1, Errc::EmptyTensor, "channel gate on an empty tensor");
    const auto s = kernels::channel_gate_scores(kernels::column_mean(xv), params);
    if (attention) *attention = s;
    Matrix<double> y = xv;
    for (std::size_t n = 0; n < y.rows(); ++n)
        for (std::size_t c = 0; c < y.cols(); ++c) y(n, c) *= s[c];
    return t.push(std::move(y), [x, prefix](Tape& tp, NodeId self) {
        auto params = channel_gate_params(tp, prefix);
        auto g = ChannelGateParams<double>::zeros(params.channels);
        grad::channel_gate(tp.value(x), params, tp.grad(self), tp.grad_if_needed(x), &g);
        auto dw = tp.param_grad(prefix + ".w");
        auto db = tp.param_grad(prefix + ".b");
        for (std::size_t i = 0; i < g.w.size(); ++i) dw[i] += g.w[i];
        for (std::size_t i = 0; i < g.b.size(); ++i) db[i] += g.b[i];
    });
}

/// GeM pooling into a 1 x C node; the exponent is the single-element tensor `p_name`.
inline NodeId gem(Tape& t, NodeId x, const std::string& p_name, double eps) {
    const double p = t.param(p_name).values.at(0);
    auto g = gem_pool<double>(t.value(x), PoolingParams{p, eps});
    const std::size_t c_n = g.size();
    return t.push(Matrix<double>(1, c_n, std::move(g)), [x, p_name, eps](Tape& tp, NodeId self) {
        double gp = 0;
        grad::gem(tp.value(x), tp.param(p_name).values.at(0), eps, tp.grad(self).row(0), tp.grad_if_needed(x), &gp);
        tp.param_grad(p_name)[0] += gp;
    });
}

}  // namespace ad

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradcheckReport {
    double max_rel_err = 0;
    bool pass = true;
    std::size_t checked = 0;
    std::vector<std::size_t> excluded;  // kink sites
    std::size_t worst_index = 0;
};

struct GradcheckOptions {
    double tolerance = 1e-4;
    double step = 1e-5;
    /// A coordinate is treated as a kink site (excluded) when its one-sided
    /// slopes disagree by more than this fraction of their magnitude.
    double kink_rel = 1e-3;
};

/// Compares `analytic` against central differences of `f` at `x` over the
/// indices in `probe` (all indices when empty).
/// rel_err = |a - n| / max(1e-8, |a| + |n|).
inline GradcheckReport gradcheck(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                                 std::span<const double> analytic, const GradcheckOptions& opt = {},
                                 std::span<const std::size_t> probe = {}) {
    require(x.size() == analytic.size(), Errc::LengthMismatch, "gradient length");
    std::vector<double> xs(x.begin(), x.end());
    const double f0 = f(xs);
    GradcheckReport rep;
    std::vector<std::size_t> all;
    if (probe.empty()) {
        all.resize(x.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        probe = all;
    }
    const double h = opt.step;
    for (std::size_t i : probe) {
        const double orig = xs[i];
        xs[i] = orig + h;
        const double fp = f(xs);
        xs[i] = orig - h;
        const double fm = f(xs);
        xs[i] = orig;
        const double num = (fp - fm) / (2 * h);
        const double a = analytic[i];
        if (!std::isfinite(num) || !std::isfinite(a))
            fail(Errc::NonFiniteGradient, "non-finite gradient at index " + std::to_string(i));
        const double fwd = (fp - f0) / h, bwd = (f0 - fm) / h;
        if (std::abs(fwd - bwd) > opt.kink_rel * std::max(1e-4, std::abs(fwd) + std::abs(bwd))) {
            rep.excluded.push_back(i);
            continue;
        }
        const double err = std::abs(a - num) / std::max(1e-8, std::abs(a) + std::abs(num));
        ++rep.checked;
        if (err > rep.max_rel_err) {
            rep.max_rel_err = err;
            rep.worst_index = i;
        }
    }
    rep.pass = rep.max_rel_err < opt.tolerance;
    return rep;
}

// ---------------------------------------------------------------------------
// Triplet margin loss and optimizer
// ---------------------------------------------------------------------------

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), Errc::LengthMismatch, "descriptor lengths differ");
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// L = max(0, |a - p| - |a - n| + margin).
inline double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                           double margin) {
    require(a.size() == p.size() && a.size() == n.size(), Errc::LengthMismatch, "descriptor lengths differ");
    require(margin > 0, Errc::InvalidArgument, "margin must be positive");
    return std::max(0.0, l2_distance(a, p) - l2_distance(a, n) + margin);
}

struct TripletGrad {
    double loss = 0;
    std::vector<double> ga, gp, gn;
};

/// Loss plus its gradient w.r.t. each descriptor. A zero distance contributes
/// a zero subgradient.
inline TripletGrad triplet_loss_grad(std::span<const double> a, std::span<const double> p,
                                     std::span<const double> n, double margin) {
    TripletGrad r;
    r.loss = triplet_loss(a, p, n, margin);
    const std::size_t d = a.size();
    r.ga.assign(d, 0.0);
    r.gp.assign(d, 0.0);
    r.gn.assign(d, 0.0);
    if (r.loss <= 0.0) return r;
    const double dp = l2_distance(a, p), dn = l2_distance(a, n);
    for (std::size_t i = 0; i < d; ++i) {
        if (dp > 0) {
            const double u = (a[i] - p[i]) / dp;
            r.ga[i] += u;
            r.gp[i] -= u;
        }
        if (dn > 0) {
            const double v = (a[i] - n[i]) / dn;
            r.ga[i] -= v;
            r.gn[i] += v;
        }
    }
    return r;
}

/// Heavy-ball SGD: v = momentum * v + g; w -= lr * v.
class MomentumSgd {
public:
    MomentumSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void step(TensorStore& params, const TensorStore& grads) {
        for (auto& [name, w] : params) {
            if (!grads.contains(name)) continue;
            const auto& g = grads.at(name).values;
            auto& v = velocity_.accumulator(name, w.shape).values;
            for (std::size_t i = 0; i < w.values.size(); ++i) {
                v[i] = momentum_ * v[i] + g[i];
                w.values[i] -= lr_ * v[i];
            }
        }
    }

    double learning_rate() const noexcept { return lr_; }

private:
    double lr_, momentum_;
    TensorStore velocity_;
};

}  // namespace selfloc
