#pragma once

// Reverse-mode autodiff over whole tensors. A Tape owns the forward graph of
// one evaluation; backward() walks the nodes in reverse creation order.
// Backward lambdas only run for nodes whose gradient was actually touched, so
// unused sub-graphs (e.g. an unused decoder head) cost nothing on the way back.

#include <deque>
#include <functional>
#include <memory>

#include "gdvdm/kernels.hpp"
#include "gdvdm/tensor.hpp"

namespace gdvdm {

template <typename T>
class Tape {
  public:
    using Ref = int;

    struct Node {
        TensorT<T> own;
        const TensorT<T>* ext = nullptr;  // non-owning leaf (e.g. parameters)
        TensorT<T> grad;
        bool touched = false;
        std::function<void(Tape&)> back;
        std::shared_ptr<void> workspace;  // op scratch kept for the backward pass

        const TensorT<T>& val() const { return ext ? *ext : own; }
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    bool parallel() const { return kernels::parallel_default(); }

    Ref leaf(TensorT<T> value) {
        nodes_.emplace_back();
        nodes_.back().own = std::move(value);
        init_grad(nodes_.back());
        return static_cast<Ref>(nodes_.size() - 1);
    }

    // Leaf referencing external storage; the caller keeps `value` alive.
    Ref leaf_ref(const TensorT<T>& value) {
        nodes_.emplace_back();
        nodes_.back().ext = &value;
        init_grad(nodes_.back());
        return static_cast<Ref>(nodes_.size() - 1);
    }

    Ref op(TensorT<T> value) {
        nodes_.emplace_back();
        nodes_.back().own = std::move(value);
        init_grad(nodes_.back());
        return static_cast<Ref>(nodes_.size() - 1);
    }

    void set_back(Ref r, std::function<void(Tape&)> back) {
        if (grad_enabled_) nodes_[r].back = std::move(back);
    }
    void set_workspace(Ref r, std::shared_ptr<void> ws) {
        if (grad_enabled_) nodes_[r].workspace = std::move(ws);
    }
    template <typename W>
    const W& workspace(Ref r) const {
        return *static_cast<const W*>(nodes_[r].workspace.get());
    }

    const TensorT<T>& val(Ref r) const { return nodes_[r].val(); }
    const TensorT<T>& grad(Ref r) const { return nodes_[r].grad; }
    bool grad_touched(Ref r) const { return nodes_[r].touched; }

    void accumulate(Ref r, const TensorT<T>& g) {
        Node& n = nodes_[r];
        n.touched = true;
        for (std::size_t i = 0; i < g.v.size(); ++i) n.grad.v[i] += g.v[i];
    }

    // Seeds d(loss)/d(loss) = 1 at `loss` (a 1-element node) and propagates.
    void backward(Ref loss) {
        Node& ln = nodes_[loss];
        ln.grad.v.at(0) = T(1);
        ln.touched = true;
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.touched && n.back) n.back(*this);
        }
    }

    std::size_t size() const { return nodes_.size(); }

  private:
    void init_grad(Node& n) {
        if (grad_enabled_) {
            n.grad.shape = n.val().shape;
            n.grad.v.assign(n.val().numel(), T(0));
        }
    }

    std::deque<Node> nodes_;
    bool grad_enabled_;
};

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

template <typename T>
int op_conv3d(Tape<T>& tp, int x, int w, int b, int stride) {
    TensorT<T> out;
    kernels::conv3d_forward(tp.val(x), tp.val(w), tp.val(b), stride, out, tp.parallel());
    const int r = tp.op(std::move(out));
    tp.set_back(r, [r, x, w, b, stride](Tape<T>& t) {
        const auto& g = t.grad(r);
        const auto& xv = t.val(x);
        const auto& wv = t.val(w);
        TensorT<T> dx, dw, db;
        kernels::conv3d_backward_data(g, wv, xv.shape, stride, dx, t.parallel());
        kernels::conv3d_backward_weights(xv, g, wv.shape[0], wv.shape[1], wv.shape[2], stride,
                                         dw, db, t.parallel());
        t.accumulate(x, dx);
        t.accumulate(w, dw);
        t.accumulate(b, db);
    });
    return r;
}

template <typename T>
int op_chan_linear(Tape<T>& tp, int x, int w, int b) {
    TensorT<T> out;
    kernels::chan_linear_forward(tp.val(x), tp.val(w), tp.val(b), out, tp.parallel());
    const int r = tp.op(std::move(out));
    tp.set_back(r, [r, x, w, b](Tape<T>& t) {
        TensorT<T> dx, dw, db;
        kernels::chan_linear_backward(t.val(x), t.val(w), t.grad(r), dx, dw, db, t.parallel());
        t.accumulate(x, dx);
        t.accumulate(w, dw);
        t.accumulate(b, db);
    });
    return r;
}

template <typename T>
int op_add(Tape<T>& tp, int a, int b) {
    require_same_shape(tp.val(a).shape, tp.val(b).shape, "op_add");
    TensorT<T> out = tp.val(a);
    const auto& bv = tp.val(b);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
    const int r = tp.op(std::move(out));
    tp.set_back(r, [r, a, b](Tape<T>& t) {
        t.accumulate(a, t.grad(r));
        t.accumulate(b, t.grad(r));
    });
    return r;
}

// y[p][c] = x[p][c] + bias[c]
template <typename T>
int op_add_channel_bias(Tape<T>& tp, int x, int bias) {
    TensorT<T> out = tp.val(x);
    const auto& bv = tp.val(bias);
    const int C = static_cast<int>(bv.numel());
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i % C];
    const int r = tp.op(std::move(out));
    tp.set_back(r, [r, x, bias, C](Tape<T>& t) {
        const auto& g = t.grad(r);
        t.accumulate(x, g);
        TensorT<T> db({C});
        for (std::size_t i = 0; i < g.v.size(); ++i) db.v[i % C] += g.v[i];
        t.accumulate(bias, db);
    });
    return r;
}

template <typename T>
int op_silu(Tape<T>& tp, int x) {
    TensorT<T> out = tp.val(x);
    for (auto& v : out.v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        v = v * s;
    }
    const int r = tp.op(std::move(out));
    tp.set_back(r, [r, x](Tape<T>& t) {
        const auto& g = t.grad(r);
        const auto& xv = t.val(x);
        TensorT<T> dx(xv.shape);
        for (std::size_t i = 0; i < xv.v.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-xv.v[i]));
            dx.v[i] = g.v[i] * s * (T(1) + xv.v[i] * (T(1) - s));
        }
        t.accumulate(x, dx);
    });
    return r;
}

template <typename T>
struct GroupNormWs {
    std::vector<T> mean, inv_std;  // per group
};

// Normalizes over all positions and the channels of each group.
template <typename T>
int op_group_norm(Tape<T>& tp, int x, int gamma, int beta, int groups) {
    const auto& xv = tp.val(x);
    const int C = xv.shape.back();
    const int cg = C / groups;
    const std::size_t P = xv.numel() / C;
    const double n = static_cast<double>(P) * cg;
    const double eps = 1e-5;

    auto ws = std::make_shared<GroupNormWs<T>>();
    ws->mean.resize(groups);
    ws->inv_std.resize(groups);
    for (int g = 0; g < groups; ++g) {
        double sum = 0, sq = 0;
        for (std::size_t p = 0; p < P; ++p)
            for (int c = g * cg; c < (g + 1) * cg; ++c) {
                const double v = xv.v[p * C + c];
                sum += v;
                sq += v * v;
            }
        const double mu = sum / n;
        const double var = sq / n - mu * mu;
        ws->mean[g] = static_cast<T>(mu);
        ws->inv_std[g] = static_cast<T>(1.0 / std::sqrt(var + eps));
    }
    const auto& gv = tp.val(gamma);
    const auto& bv = tp.val(beta);
    TensorT<T> out(xv.shape);
    for (std::size_t p = 0; p < P; ++p)
        for (int c = 0; c < C; ++c) {
            const int g = c / cg;
            const T xh = (xv.v[p * C + c] - ws->mean[g]) * ws->inv_std[g];
            out.v[p * C + c] = gv.v[c] * xh + bv.v[c];
        }
    const int r = tp.op(std::move(out));
    tp.set_workspace(r, ws);
    tp.set_back(r, [r, x, gamma, beta, groups, C, cg, P, n](Tape<T>& t) {
        const auto& w = t.template workspace<GroupNormWs<T>>(r);
        const auto& g = t.grad(r);
        const auto& xv2 = t.val(x);
        const auto& gv2 = t.val(gamma);
        TensorT<T> dx(xv2.shape), dgamma({C}), dbeta({C});
        for (int grp = 0; grp < groups; ++grp) {
            double sum_dxh = 0, sum_dxh_xh = 0;
            for (std::size_t p = 0; p < P; ++p)
                for (int c = grp * cg; c < (grp + 1) * cg; ++c) {
                    const std::size_t i = p * C + c;
                    const T xh = (xv2.v[i] - w.mean[grp]) * w.inv_std[grp];
                    const T dxh = g.v[i] * gv2.v[c];
                    dgamma.v[c] += g.v[i] * xh;
                    dbeta.v[c] += g.v[i];
                    sum_dxh += dxh;
                    sum_dxh_xh += static_cast<double>(dxh) * xh;
                }
            const T m1 = static_cast<T>(sum_dxh / n);
            const T m2 = static_cast<T>(sum_dxh_xh / n);
            for (std::size_t p = 0; p < P; ++p)
                for (int c = grp * cg; c < (grp + 1) * cg; ++c) {
                    const std::size_t i = p * C + c;
                    const T xh = (xv2.v[i] - w.mean[grp]) * w.inv_std[grp];
                    const T dxh = g.v[i] * gv2.v[c];
                    dx.v[i] = w.inv_std[grp] * (dxh - m1 - xh * m2);
                }
        }
        t.accumulate(x, dx);
        t.accumulate(gamma, dgamma);
        t.accumulate(beta, dbeta);
    });
    return r;
}

template <typename T>
int op_concat_channels(Tape<T>& tp, int a, int b) {
    const auto& av = tp.val(a);
    const auto& bv = tp.val(b);
    const int Ca = av.shape.back(), Cb = bv.shape.back();
    std::vector<int> oshape = av.shape;
    oshape.back() = Ca + Cb;
    for (std::size_t d = 0; d + 1 < av.shape.size(); ++d)
        if (av.shape[d] != bv.shape[d])
            throw std::invalid_argument("op_concat_channels: shape mismatch " +
                                        shape_str(av.shape) + " vs " + shape_str(bv.shape));
    const std::size_t P = av.numel() / Ca;
    TensorT<T> out(oshape);
    for (std::size_t p = 0; p < P; ++p) {
        for (int c = 0; c < Ca; ++c) out.v[p * (Ca + Cb) + c] = av.v[p * Ca + c];
        for (int c = 0; c < Cb; ++c) out.v[p * (Ca + Cb) + Ca + c] = bv.v[p * Cb + c];
    }
    const int r = tp.op(std::move(out));
    tp.set_back(r, [r, a, b, Ca, Cb, P](Tape<T>& t) {
        const auto& g = t.grad(r);
        TensorT<T> da(t.val(a).shape), db(t.val(b).shape);
        for (std::size_t p = 0; p < P; ++p) {
            for (int c = 0; c < Ca; ++c) da.v[p * Ca + c] = g.v[p * (Ca + Cb) + c];
            for (int c = 0; c < Cb; ++c) db.v[p * Cb + c] = g.v[p * (Ca + Cb) + Ca + c];
        }
        t.accumulate(a, da);
        t.accumulate(b, db);
    });
    return r;
}

// nearest-neighbour 2x upsample on the two spatial dims
template <typename T>
int op_upsample2x(Tape<T>& tp, int x) {
    const auto& xv = tp.val(x);
    const int F = xv.shape[0], H = xv.shape[1], W = xv.shape[2], C = xv.shape[3];
    TensorT<T> out({F, 2 * H, 2 * W, C});
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx)
                for (int c = 0; c < C; ++c)
                    out.at4(f, y, xx, c) = xv.at4(f, y / 2, xx / 2, c);
    const int r = tp.op(std::move(out));
    tp.set_back(r, [r, x, F, H, W, C](Tape<T>& t) {
        const auto& g = t.grad(r);
        TensorT<T> dx({F, H, W, C});
        for (int f = 0; f < F; ++f)
            for (int y = 0; y < 2 * H; ++y)
                for (int xx = 0; xx < 2 * W; ++xx)
                    for (int c = 0; c < C; ++c)
                        dx.at4(f, y / 2, xx / 2, c) += g.at4(f, y, xx, c);
        t.accumulate(x, dx);
    });
    return r;
}

template <typename T>
int op_attention(Tape<T>& tp, int qkv, int heads, kernels::AttnAxis axis) {
    TensorT<T> out;
    auto ws = std::make_shared<kernels::AttnWorkspace<T>>();
    kernels::attention_forward(tp.val(qkv), heads, axis, out, *ws, tp.parallel());
    const int r = tp.op(std::move(out));
    tp.set_workspace(r, ws);
    tp.set_back(r, [r, qkv, heads, axis](Tape<T>& t) {
        TensorT<T> dqkv;
        kernels::attention_backward(t.val(qkv), heads, axis, t.grad(r),
                                    t.template workspace<kernels::AttnWorkspace<T>>(r), dqkv,
                                    t.parallel());
        t.accumulate(qkv, dqkv);
    });
    return r;
}

// mean squared error against a constant target; returns a 1-element node
template <typename T>
int op_mse(Tape<T>& tp, int pred, const TensorT<T>& target) {
    const auto& pv = tp.val(pred);
    require_same_shape(pv.shape, target.shape, "op_mse");
    double acc = 0;
    for (std::size_t i = 0; i < pv.v.size(); ++i) {
        const double d = static_cast<double>(pv.v[i]) - target.v[i];
        acc += d * d;
    }
    TensorT<T> out({1});
    out.v[0] = static_cast<T>(acc / static_cast<double>(pv.numel()));
    const int r = tp.op(std::move(out));
    // target is captured by value: the loss node must outlive the caller's buffer
    tp.set_back(r, [r, pred, target](Tape<T>& t) {
        const T s = t.grad(r).v[0];
        const auto& pv2 = t.val(pred);
        const T scale = s * T(2) / static_cast<T>(pv2.numel());
        TensorT<T> dp(pv2.shape);
        for (std::size_t i = 0; i < pv2.v.size(); ++i)
            dp.v[i] = scale * (pv2.v[i] - target.v[i]);
        t.accumulate(pred, dp);
    });
    return r;
}

}  // namespace gdvdm
