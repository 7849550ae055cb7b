#include <doctest.h>

#include "gdvdm/kernels.hpp"
#include "gdvdm/rng.hpp"

using namespace gdvdm;
namespace K = gdvdm::kernels;

namespace {

// Direct from-the-definition conv3d, independent of the library loop structure.
template <typename T>
TensorT<T> conv3d_naive(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                        int stride) {
    const int F = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3];
    const int KT = w.shape[0], KH = w.shape[1], KW = w.shape[2], Co = w.shape[4];
    const int Ho = (H + 2 * (KH / 2) - KH) / stride + 1;
    const int Wo = (W + 2 * (KW / 2) - KW) / stride + 1;
    TensorT<T> out({F, Ho, Wo, Co});
    for (int f = 0; f < F; ++f)
        for (int yo = 0; yo < Ho; ++yo)
            for (int xo = 0; xo < Wo; ++xo)
                for (int co = 0; co < Co; ++co) {
                    T acc = b.v[co];
                    for (int kt = 0; kt < KT; ++kt)
                        for (int kh = 0; kh < KH; ++kh)
                            for (int kw = 0; kw < KW; ++kw)
                                for (int ci = 0; ci < Ci; ++ci) {
                                    const int fi = f + kt - KT / 2;
                                    const int yi = yo * stride + kh - KH / 2;
                                    const int xi = xo * stride + kw - KW / 2;
                                    if (fi < 0 || fi >= F || yi < 0 || yi >= H || xi < 0 ||
                                        xi >= W)
                                        continue;
                                    acc += x.at4(fi, yi, xi, ci) *
                                           w.v[(((static_cast<std::size_t>(kt) * KH + kh) * KW +
                                                 kw) *
                                                    Ci +
                                                ci) *
                                                   Co +
                                               co];
                                }
                    out.at4(f, yo, xo, co) = acc;
                }
    return out;
}

template <typename F>
double scalar_loss(const TensorT<double>& t, F&& weight) {
    double s = 0;
    for (std::size_t i = 0; i < t.v.size(); ++i) s += weight(i) * t.v[i];
    return s;
}

// fixed pseudo-random weighting so the loss exercises every output element
double wgt(std::size_t i) { return std::sin(0.7 * static_cast<double>(i) + 0.3); }

}  // namespace

TEST_CASE("conv3d forward matches a direct from-definition implementation") {
    Rng rng(10);
    for (int stride : {1, 2}) {
        auto x = rng.normal_tensor<float>({3, 6, 5, 4});
        auto w = rng.normal_tensor<float>({3, 3, 3, 4, 7});
        auto b = rng.normal_tensor<float>({7});
        TensorT<float> out;
        K::conv3d_forward(x, w, b, stride, out, false);
        auto ref = conv3d_naive(x, w, b, stride);
        REQUIRE(out.shape == ref.shape);
        for (std::size_t i = 0; i < out.v.size(); ++i)
            CHECK(out.v[i] == doctest::Approx(ref.v[i]).epsilon(1e-4));
    }
}

TEST_CASE("conv3d: identity kernel, single-tap hand case") {
    // 1x1x1 kernel, one channel, weight 2, bias 0.5: out = 2x + 0.5
    TensorT<float> x({1, 2, 2, 1});
    x.v = {1.f, 2.f, 3.f, 4.f};
    TensorT<float> w({1, 1, 1, 1, 1}, 2.0f);
    TensorT<float> b({1}, 0.5f);
    TensorT<float> out;
    K::conv3d_forward(x, w, b, 1, out, false);
    for (int i = 0; i < 4; ++i) CHECK(out.v[i] == doctest::Approx(2 * x.v[i] + 0.5));
}

TEST_CASE("conv3d parallel path is bit-identical to serial") {
    Rng rng(11);
    for (int stride : {1, 2}) {
        auto x = rng.normal_tensor<float>({4, 8, 8, 3});
        auto w = rng.normal_tensor<float>({3, 3, 3, 3, 5});
        auto b = rng.normal_tensor<float>({5});
        TensorT<float> a, c;
        K::conv3d_forward(x, w, b, stride, a, false);
        K::conv3d_forward(x, w, b, stride, c, true);
        CHECK(a.v == c.v);

        TensorT<float> go = rng.normal_tensor<float>(a.shape);
        TensorT<float> dx1, dx2, dw1, dw2, db1, db2;
        K::conv3d_backward_data(go, w, x.shape, stride, dx1, false);
        K::conv3d_backward_data(go, w, x.shape, stride, dx2, true);
        CHECK(dx1.v == dx2.v);
        K::conv3d_backward_weights(x, go, 3, 3, 3, stride, dw1, db1, false);
        K::conv3d_backward_weights(x, go, 3, 3, 3, stride, dw2, db2, true);
        CHECK(dw1.v == dw2.v);
        CHECK(db1.v == db2.v);
    }
}

TEST_CASE("conv3d backward passes a finite-difference check (double)") {
    Rng rng(12);
    for (int stride : {1, 2}) {
        auto x = rng.normal_tensor<double>({2, 4, 4, 2});
        auto w = rng.normal_tensor<double>({3, 3, 3, 2, 3});
        auto b = rng.normal_tensor<double>({3});
        TensorT<double> out;
        K::conv3d_forward(x, w, b, stride, out, false);

        TensorT<double> go(out.shape);
        for (std::size_t i = 0; i < go.v.size(); ++i) go.v[i] = wgt(i);

        TensorT<double> dx, dw, db;
        K::conv3d_backward_data(go, w, x.shape, stride, dx, false);
        K::conv3d_backward_weights(x, go, 3, 3, 3, stride, dw, db, false);

        const double h = 1e-6;
        auto fd = [&](TensorT<double>& param, std::size_t i) {
            const double keep = param.v[i];
            param.v[i] = keep + h;
            TensorT<double> op;
            K::conv3d_forward(x, w, b, stride, op, false);
            const double fp = scalar_loss(op, wgt);
            param.v[i] = keep - h;
            K::conv3d_forward(x, w, b, stride, op, false);
            const double fm = scalar_loss(op, wgt);
            param.v[i] = keep;
            return (fp - fm) / (2 * h);
        };
        Rng pick(99);
        for (int k = 0; k < 12; ++k) {
            const std::size_t ix = pick.uniform_int(0, static_cast<long>(x.v.size()) - 1);
            CHECK(dx.v[ix] == doctest::Approx(fd(x, ix)).epsilon(1e-5));
            const std::size_t iw = pick.uniform_int(0, static_cast<long>(w.v.size()) - 1);
            CHECK(dw.v[iw] == doctest::Approx(fd(w, iw)).epsilon(1e-5));
        }
        for (std::size_t ib = 0; ib < b.v.size(); ++ib)
            CHECK(db.v[ib] == doctest::Approx(fd(b, ib)).epsilon(1e-5));
    }
}

TEST_CASE("chan_linear equals a 1x1x1 conv3d") {
    Rng rng(13);
    auto x = rng.normal_tensor<float>({2, 3, 3, 5});
    auto w = rng.normal_tensor<float>({5, 4});
    auto b = rng.normal_tensor<float>({4});
    TensorT<float> out;
    K::chan_linear_forward(x, w, b, out, false);

    TensorT<float> w5({1, 1, 1, 5, 4});
    w5.v = w.v;
    TensorT<float> ref;
    K::conv3d_forward(x, w5, b, 1, ref, false);
    CHECK(out.shape == ref.shape);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        CHECK(out.v[i] == doctest::Approx(ref.v[i]).epsilon(1e-5));

    TensorT<float> out_p;
    K::chan_linear_forward(x, w, b, out_p, true);
    CHECK(out.v == out_p.v);
}

TEST_CASE("chan_linear backward passes a finite-difference check (double)") {
    Rng rng(14);
    auto x = rng.normal_tensor<double>({2, 3, 2, 4});
    auto w = rng.normal_tensor<double>({4, 3});
    auto b = rng.normal_tensor<double>({3});
    TensorT<double> out;
    K::chan_linear_forward(x, w, b, out, false);
    TensorT<double> go(out.shape);
    for (std::size_t i = 0; i < go.v.size(); ++i) go.v[i] = wgt(i);

    TensorT<double> dx, dw, db;
    K::chan_linear_backward(x, w, go, dx, dw, db, false);

    TensorT<double> dx2, dw2, db2;
    K::chan_linear_backward(x, w, go, dx2, dw2, db2, true);
    CHECK(dx.v == dx2.v);
    CHECK(dw.v == dw2.v);

    const double h = 1e-6;
    auto fd = [&](TensorT<double>& param, std::size_t i) {
        const double keep = param.v[i];
        TensorT<double> op;
        param.v[i] = keep + h;
        K::chan_linear_forward(x, w, b, op, false);
        const double fp = scalar_loss(op, wgt);
        param.v[i] = keep - h;
        K::chan_linear_forward(x, w, b, op, false);
        const double fm = scalar_loss(op, wgt);
        param.v[i] = keep;
        return (fp - fm) / (2 * h);
    };
    for (std::size_t i = 0; i < x.v.size(); ++i)
        CHECK(dx.v[i] == doctest::Approx(fd(x, i)).epsilon(1e-6));
    for (std::size_t i = 0; i < w.v.size(); ++i)
        CHECK(dw.v[i] == doctest::Approx(fd(w, i)).epsilon(1e-6));
    for (std::size_t i = 0; i < b.v.size(); ++i)
        CHECK(db.v[i] == doctest::Approx(fd(b, i)).epsilon(1e-6));
}

TEST_CASE("attention: zero queries give the uniform average of values") {
    // Q = 0 -> all scores equal -> softmax uniform -> out = mean of V tokens
    const int F = 3, H = 2, W = 2, C = 4;
    TensorT<float> qkv({F, H, W, 3 * C});
    Rng rng(15);
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C; ++c) {
                    qkv.at4(f, y, x, C + c) = static_cast<float>(rng.normal());      // K
                    qkv.at4(f, y, x, 2 * C + c) = static_cast<float>(rng.normal());  // V
                }
    for (auto axis : {K::AttnAxis::Spatial, K::AttnAxis::Temporal}) {
        TensorT<float> out;
        K::AttnWorkspace<float> ws;
        K::attention_forward(qkv, 2, axis, out, ws, false);
        const int n_tok = (axis == K::AttnAxis::Spatial) ? H * W : F;
        for (int f = 0; f < F; ++f)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (int c = 0; c < C; ++c) {
                        double mean = 0;
                        for (int t = 0; t < n_tok; ++t) {
                            int tf = f, ty = y, tx = x;
                            if (axis == K::AttnAxis::Spatial) {
                                ty = t / W;
                                tx = t % W;
                            } else {
                                tf = t;
                            }
                            mean += qkv.at4(tf, ty, tx, 2 * C + c);
                        }
                        mean /= n_tok;
                        CHECK(out.at4(f, y, x, c) == doctest::Approx(mean).epsilon(1e-5));
                    }
    }
}

TEST_CASE("attention: softmax rows are stochastic and the parallel path matches") {
    Rng rng(16);
    auto qkv = rng.normal_tensor<float>({4, 3, 3, 3 * 8});
    for (auto axis : {K::AttnAxis::Spatial, K::AttnAxis::Temporal}) {
        TensorT<float> a, b;
        K::AttnWorkspace<float> wa, wb;
        K::attention_forward(qkv, 4, axis, a, wa, false);
        K::attention_forward(qkv, 4, axis, b, wb, true);
        CHECK(a.v == b.v);
        CHECK(wa.probs == wb.probs);
        const int n_tok = (axis == K::AttnAxis::Spatial) ? 9 : 4;
        for (std::size_t r = 0; r < wa.probs.size() / n_tok; ++r) {
            double sum = 0;
            for (int j = 0; j < n_tok; ++j) {
                const float p = wa.probs[r * n_tok + j];
                CHECK(p >= 0.0f);
                sum += p;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
        }

        auto go = rng.normal_tensor<float>(a.shape);
        TensorT<float> g1, g2;
        K::attention_backward(qkv, 4, axis, go, wa, g1, false);
        K::attention_backward(qkv, 4, axis, go, wa, g2, true);
        CHECK(g1.v == g2.v);
    }
}

TEST_CASE("spatial attention is equivariant to frame permutation") {
    Rng rng(17);
    const int F = 4, H = 3, W = 3, C3 = 3 * 8;
    auto qkv = rng.normal_tensor<float>({F, H, W, C3});
    TensorT<float> out;
    K::AttnWorkspace<float> ws;
    K::attention_forward(qkv, 4, K::AttnAxis::Spatial, out, ws, false);

    const int perm[F] = {2, 0, 3, 1};
    TensorT<float> qkv_p({F, H, W, C3});
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < C3; ++c) qkv_p.at4(f, y, x, c) = qkv.at4(perm[f], y, x, c);
    TensorT<float> out_p;
    K::AttnWorkspace<float> ws_p;
    K::attention_forward(qkv_p, 4, K::AttnAxis::Spatial, out_p, ws_p, false);
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 8; ++c)
                    CHECK(out_p.at4(f, y, x, c) == out.at4(perm[f], y, x, c));
}

TEST_CASE("attention backward passes a finite-difference check (double)") {
    Rng rng(18);
    auto qkv = rng.normal_tensor<double>({3, 2, 2, 3 * 4});
    for (auto axis : {K::AttnAxis::Spatial, K::AttnAxis::Temporal}) {
        TensorT<double> out;
        K::AttnWorkspace<double> ws;
        K::attention_forward(qkv, 2, axis, out, ws, false);
        TensorT<double> go(out.shape);
        for (std::size_t i = 0; i < go.v.size(); ++i) go.v[i] = wgt(i);
        TensorT<double> g;
        K::attention_backward(qkv, 2, axis, go, ws, g, false);

        const double h = 1e-6;
        Rng pick(7);
        for (int k = 0; k < 24; ++k) {
            const std::size_t i = pick.uniform_int(0, static_cast<long>(qkv.v.size()) - 1);
            const double keep = qkv.v[i];
            TensorT<double> op;
            K::AttnWorkspace<double> w2;
            qkv.v[i] = keep + h;
            K::attention_forward(qkv, 2, axis, op, w2, false);
            const double fp = scalar_loss(op, wgt);
            qkv.v[i] = keep - h;
            K::attention_forward(qkv, 2, axis, op, w2, false);
            const double fm = scalar_loss(op, wgt);
            qkv.v[i] = keep;
            CHECK(g.v[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4));
        }
    }
}
