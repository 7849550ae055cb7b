#pragma once

// Dense compute kernels for the 3D U-Net. Every kernel is partitioned over
// independent output elements, so the OpenMP path is bit-identical to the
// serial reference for any thread count. Tests compare the two directly and
// tools/bench_kernels times them against each other.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

#include "gdvdm/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gdvdm::kernels {

// Runtime switch; GDVDM_SERIAL=1 forces the serial reference everywhere.
inline bool parallel_default() {
    static const bool serial = [] {
        const char* e = std::getenv("GDVDM_SERIAL");
        return e && e[0] == '1';
    }();
    return !serial;
}

// ---------------------------------------------------------------------------
// 3D convolution, odd kernel, zero padding, temporal stride 1, spatial stride s
// x: (F,H,W,Ci)  w: (KT,KH,KW,Ci,Co)  b: (Co)  out: (F,Ho,Wo,Co)
// ---------------------------------------------------------------------------

template <typename T>
void conv3d_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                    int stride, TensorT<T>& out, bool parallel) {
    const int F = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3];
    const int KT = w.shape[0], KH = w.shape[1], KW = w.shape[2], Co = w.shape[4];
    const int pt = KT / 2, ph = KH / 2, pw = KW / 2;
    const int Ho = (H + 2 * ph - KH) / stride + 1;
    const int Wo = (W + 2 * pw - KW) / stride + 1;
    out = TensorT<T>({F, Ho, Wo, Co});

    const T* xp = x.data();
    const T* wp = w.data();
    const T* bp = b.data();
    T* op = out.data();
    const long rows = static_cast<long>(F) * Ho;
#pragma omp parallel for schedule(static) if (parallel)
    for (long row = 0; row < rows; ++row) {
        const int f = static_cast<int>(row / Ho);
        const int yo = static_cast<int>(row % Ho);
        for (int xo = 0; xo < Wo; ++xo) {
            T* o = op + ((static_cast<std::size_t>(f) * Ho + yo) * Wo + xo) * Co;
            for (int co = 0; co < Co; ++co) o[co] = bp[co];
            for (int kt = 0; kt < KT; ++kt) {
                const int fi = f + kt - pt;
                if (fi < 0 || fi >= F) continue;
                for (int kh = 0; kh < KH; ++kh) {
                    const int yi = yo * stride + kh - ph;
                    if (yi < 0 || yi >= H) continue;
                    for (int kw = 0; kw < KW; ++kw) {
                        const int xi = xo * stride + kw - pw;
                        if (xi < 0 || xi >= W) continue;
                        const T* in =
                            xp + ((static_cast<std::size_t>(fi) * H + yi) * W + xi) * Ci;
                        const T* wt =
                            wp + ((static_cast<std::size_t>(kt) * KH + kh) * KW + kw) * Ci * Co;
                        for (int ci = 0; ci < Ci; ++ci) {
                            const T a = in[ci];
                            const T* wr = wt + static_cast<std::size_t>(ci) * Co;
                            for (int co = 0; co < Co; ++co) o[co] += a * wr[co];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_data(const TensorT<T>& grad_out, const TensorT<T>& w,
                          const std::vector<int>& x_shape, int stride, TensorT<T>& grad_x,
                          bool parallel) {
    const int F = x_shape[0], H = x_shape[1], W = x_shape[2], Ci = x_shape[3];
    const int KT = w.shape[0], KH = w.shape[1], KW = w.shape[2], Co = w.shape[4];
    const int pt = KT / 2, ph = KH / 2, pw = KW / 2;
    const int Ho = grad_out.shape[1], Wo = grad_out.shape[2];
    grad_x = TensorT<T>({F, H, W, Ci});

    const T* gp = grad_out.data();
    const T* wp = w.data();
    T* dxp = grad_x.data();
    const long rows = static_cast<long>(F) * H;
#pragma omp parallel for schedule(static) if (parallel)
    for (long row = 0; row < rows; ++row) {
        const int fi = static_cast<int>(row / H);
        const int yi = static_cast<int>(row % H);
        for (int xi = 0; xi < W; ++xi) {
            T* dx = dxp + ((static_cast<std::size_t>(fi) * H + yi) * W + xi) * Ci;
            for (int kt = 0; kt < KT; ++kt) {
                const int f = fi - (kt - pt);
                if (f < 0 || f >= F) continue;
                for (int kh = 0; kh < KH; ++kh) {
                    const int ynum = yi + ph - kh;
                    if (ynum < 0 || ynum % stride != 0) continue;
                    const int yo = ynum / stride;
                    if (yo >= Ho) continue;
                    for (int kw = 0; kw < KW; ++kw) {
                        const int xnum = xi + pw - kw;
                        if (xnum < 0 || xnum % stride != 0) continue;
                        const int xo = xnum / stride;
                        if (xo >= Wo) continue;
                        const T* g =
                            gp + ((static_cast<std::size_t>(f) * Ho + yo) * Wo + xo) * Co;
                        const T* wt =
                            wp + ((static_cast<std::size_t>(kt) * KH + kh) * KW + kw) * Ci * Co;
                        for (int ci = 0; ci < Ci; ++ci) {
                            const T* wr = wt + static_cast<std::size_t>(ci) * Co;
                            T acc = 0;
                            for (int co = 0; co < Co; ++co) acc += g[co] * wr[co];
                            dx[ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv3d_backward_weights(const TensorT<T>& x, const TensorT<T>& grad_out, int KT, int KH,
                             int KW, int stride, TensorT<T>& grad_w, TensorT<T>& grad_b,
                             bool parallel) {
    const int F = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3];
    const int Ho = grad_out.shape[1], Wo = grad_out.shape[2], Co = grad_out.shape[3];
    const int pt = KT / 2, ph = KH / 2, pw = KW / 2;
    grad_w = TensorT<T>({KT, KH, KW, Ci, Co});
    grad_b = TensorT<T>({Co});

    const T* xp = x.data();
    const T* gp = grad_out.data();

    for (std::size_t i = 0; i < grad_out.numel(); ++i) grad_b.v[i % Co] += gp[i];

    const int taps = KT * KH * KW;
#pragma omp parallel for schedule(static) if (parallel)
    for (int tap = 0; tap < taps; ++tap) {
        const int kt = tap / (KH * KW);
        const int kh = (tap / KW) % KH;
        const int kw = tap % KW;
        T* dw = grad_w.data() + static_cast<std::size_t>(tap) * Ci * Co;
        for (int f = 0; f < F; ++f) {
            const int fi = f + kt - pt;
            if (fi < 0 || fi >= F) continue;
            for (int yo = 0; yo < Ho; ++yo) {
                const int yi = yo * stride + kh - ph;
                if (yi < 0 || yi >= H) continue;
                for (int xo = 0; xo < Wo; ++xo) {
                    const int xi = xo * stride + kw - pw;
                    if (xi < 0 || xi >= W) continue;
                    const T* in = xp + ((static_cast<std::size_t>(fi) * H + yi) * W + xi) * Ci;
                    const T* g = gp + ((static_cast<std::size_t>(f) * Ho + yo) * Wo + xo) * Co;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const T a = in[ci];
                        if (a == T(0)) continue;
                        T* dwr = dw + static_cast<std::size_t>(ci) * Co;
                        for (int co = 0; co < Co; ++co) dwr[co] += a * g[co];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Channel-wise linear map (1x1x1 conv): positions x Ci -> positions x Co
// ---------------------------------------------------------------------------

template <typename T>
void chan_linear_forward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b,
                         TensorT<T>& out, bool parallel) {
    const int Ci = x.shape.back();
    const int Co = w.shape[1];
    const long P = static_cast<long>(x.numel() / Ci);
    std::vector<int> oshape = x.shape;
    oshape.back() = Co;
    out = TensorT<T>(oshape);
    const T* xp = x.data();
    const T* wp = w.data();
    const T* bp = b.data();
    T* op = out.data();
#pragma omp parallel for schedule(static) if (parallel && P > 1)
    for (long p = 0; p < P; ++p) {
        const T* in = xp + static_cast<std::size_t>(p) * Ci;
        T* o = op + static_cast<std::size_t>(p) * Co;
        for (int co = 0; co < Co; ++co) o[co] = bp[co];
        for (int ci = 0; ci < Ci; ++ci) {
            const T a = in[ci];
            const T* wr = wp + static_cast<std::size_t>(ci) * Co;
            for (int co = 0; co < Co; ++co) o[co] += a * wr[co];
        }
    }
}

template <typename T>
void chan_linear_backward(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& grad_out,
                          TensorT<T>& grad_x, TensorT<T>& grad_w, TensorT<T>& grad_b,
                          bool parallel) {
    const int Ci = x.shape.back();
    const int Co = w.shape[1];
    const long P = static_cast<long>(x.numel() / Ci);
    grad_x = TensorT<T>(x.shape);
    grad_w = TensorT<T>(w.shape);
    grad_b = TensorT<T>({Co});
    const T* xp = x.data();
    const T* wp = w.data();
    const T* gp = grad_out.data();

#pragma omp parallel for schedule(static) if (parallel && P > 1)
    for (long p = 0; p < P; ++p) {
        const T* g = gp + static_cast<std::size_t>(p) * Co;
        T* dx = grad_x.data() + static_cast<std::size_t>(p) * Ci;
        for (int ci = 0; ci < Ci; ++ci) {
            const T* wr = wp + static_cast<std::size_t>(ci) * Co;
            T acc = 0;
            for (int co = 0; co < Co; ++co) acc += g[co] * wr[co];
            dx[ci] = acc;
        }
    }
#pragma omp parallel for schedule(static) if (parallel && Ci > 1)
    for (int ci = 0; ci < Ci; ++ci) {
        T* dwr = grad_w.data() + static_cast<std::size_t>(ci) * Co;
        for (long p = 0; p < P; ++p) {
            const T a = xp[static_cast<std::size_t>(p) * Ci + ci];
            if (a == T(0)) continue;
            const T* g = gp + static_cast<std::size_t>(p) * Co;
            for (int co = 0; co < Co; ++co) dwr[co] += a * g[co];
        }
    }
    for (long p = 0; p < P; ++p) {
        const T* g = gp + static_cast<std::size_t>(p) * Co;
        for (int co = 0; co < Co; ++co) grad_b.v[co] += g[co];
    }
}

// ---------------------------------------------------------------------------
// Multi-head self-attention over one axis of a video tensor.
// Spatial: one sequence per frame, tokens are the H*W positions.
// Temporal: one sequence per (y,x) position, tokens are the F frames.
// qkv: (F,H,W,3C) laid out [Q|K|V] along channels. out: (F,H,W,C).
// `probs` stores the softmax rows per (sequence, head) for the backward pass.
// ---------------------------------------------------------------------------

enum class AttnAxis { Spatial, Temporal };

template <typename T>
struct AttnWorkspace {
    std::vector<T> probs;  // n_seq * heads * n_tok * n_tok
};

template <typename T>
void gather_token(const TensorT<T>& qkv, AttnAxis axis, int seq, int tok, int head, int dh,
                  int part, T* dst) {
    const int Hh = qkv.shape[1], Wd = qkv.shape[2];
    const int C3 = qkv.shape[3];
    const int C = C3 / 3;
    int f, y, x;
    if (axis == AttnAxis::Spatial) {
        f = seq;
        y = tok / Wd;
        x = tok % Wd;
    } else {
        f = tok;
        y = seq / Wd;
        x = seq % Wd;
    }
    const T* p = qkv.data() + ((static_cast<std::size_t>(f) * Hh + y) * Wd + x) * C3 +
                 static_cast<std::size_t>(part) * C + static_cast<std::size_t>(head) * dh;
    for (int i = 0; i < dh; ++i) dst[i] = p[i];
}

template <typename T>
void attention_forward(const TensorT<T>& qkv, int heads, AttnAxis axis, TensorT<T>& out,
                       AttnWorkspace<T>& ws, bool parallel) {
    const int F = qkv.shape[0], H = qkv.shape[1], W = qkv.shape[2];
    const int C = qkv.shape[3] / 3;
    const int dh = C / heads;
    const int n_seq = (axis == AttnAxis::Spatial) ? F : H * W;
    const int n_tok = (axis == AttnAxis::Spatial) ? H * W : F;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    out = TensorT<T>({F, H, W, C});
    ws.probs.assign(static_cast<std::size_t>(n_seq) * heads * n_tok * n_tok, T(0));

#pragma omp parallel for schedule(static) if (parallel)
    for (int seq = 0; seq < n_seq; ++seq) {
        std::vector<T> Q(static_cast<std::size_t>(n_tok) * dh), K(Q.size()), V(Q.size());
        std::vector<T> row(n_tok);
        for (int h = 0; h < heads; ++h) {
            for (int t = 0; t < n_tok; ++t) {
                gather_token(qkv, axis, seq, t, h, dh, 0, Q.data() + static_cast<std::size_t>(t) * dh);
                gather_token(qkv, axis, seq, t, h, dh, 1, K.data() + static_cast<std::size_t>(t) * dh);
                gather_token(qkv, axis, seq, t, h, dh, 2, V.data() + static_cast<std::size_t>(t) * dh);
            }
            T* P = ws.probs.data() +
                   (static_cast<std::size_t>(seq) * heads + h) * n_tok * n_tok;
            for (int i = 0; i < n_tok; ++i) {
                const T* q = Q.data() + static_cast<std::size_t>(i) * dh;
                T mx = std::numeric_limits<T>::lowest();
                for (int j = 0; j < n_tok; ++j) {
                    const T* k = K.data() + static_cast<std::size_t>(j) * dh;
                    T s = 0;
                    for (int d = 0; d < dh; ++d) s += q[d] * k[d];
                    s *= scale;
                    row[j] = s;
                    mx = std::max(mx, s);
                }
                T sum = 0;
                for (int j = 0; j < n_tok; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                T* pr = P + static_cast<std::size_t>(i) * n_tok;
                for (int j = 0; j < n_tok; ++j) pr[j] = row[j] / sum;
                // O_i = sum_j P_ij V_j, scattered back to video layout
                int f, y, x;
                if (axis == AttnAxis::Spatial) {
                    f = seq; y = i / W; x = i % W;
                } else {
                    f = i; y = seq / W; x = seq % W;
                }
                T* o = out.data() + ((static_cast<std::size_t>(f) * H + y) * W + x) * C +
                       static_cast<std::size_t>(h) * dh;
                for (int d = 0; d < dh; ++d) o[d] = 0;
                for (int j = 0; j < n_tok; ++j) {
                    const T p = pr[j];
                    const T* v = V.data() + static_cast<std::size_t>(j) * dh;
                    for (int d = 0; d < dh; ++d) o[d] += p * v[d];
                }
            }
        }
    }
}

template <typename T>
void attention_backward(const TensorT<T>& qkv, int heads, AttnAxis axis,
                        const TensorT<T>& grad_out, const AttnWorkspace<T>& ws,
                        TensorT<T>& grad_qkv, bool parallel) {
    const int F = qkv.shape[0], H = qkv.shape[1], W = qkv.shape[2];
    const int C = qkv.shape[3] / 3;
    const int dh = C / heads;
    const int n_seq = (axis == AttnAxis::Spatial) ? F : H * W;
    const int n_tok = (axis == AttnAxis::Spatial) ? H * W : F;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    grad_qkv = TensorT<T>(qkv.shape);

#pragma omp parallel for schedule(static) if (parallel)
    for (int seq = 0; seq < n_seq; ++seq) {
        std::vector<T> Q(static_cast<std::size_t>(n_tok) * dh), K(Q.size()), V(Q.size());
        std::vector<T> dO(Q.size()), dQ(Q.size()), dK(Q.size()), dV(Q.size());
        std::vector<T> dP(static_cast<std::size_t>(n_tok) * n_tok);
        for (int h = 0; h < heads; ++h) {
            for (int t = 0; t < n_tok; ++t) {
                gather_token(qkv, axis, seq, t, h, dh, 0, Q.data() + static_cast<std::size_t>(t) * dh);
                gather_token(qkv, axis, seq, t, h, dh, 1, K.data() + static_cast<std::size_t>(t) * dh);
                gather_token(qkv, axis, seq, t, h, dh, 2, V.data() + static_cast<std::size_t>(t) * dh);
                int f, y, x;
                if (axis == AttnAxis::Spatial) {
                    f = seq; y = t / W; x = t % W;
                } else {
                    f = t; y = seq / W; x = seq % W;
                }
                const T* g = grad_out.data() +
                             ((static_cast<std::size_t>(f) * H + y) * W + x) * C +
                             static_cast<std::size_t>(h) * dh;
                for (int d = 0; d < dh; ++d) dO[static_cast<std::size_t>(t) * dh + d] = g[d];
            }
            const T* P = ws.probs.data() +
                         (static_cast<std::size_t>(seq) * heads + h) * n_tok * n_tok;
            std::fill(dQ.begin(), dQ.end(), T(0));
            std::fill(dK.begin(), dK.end(), T(0));
            std::fill(dV.begin(), dV.end(), T(0));
            // dV = P^T dO ; dP = dO V^T
            for (int i = 0; i < n_tok; ++i) {
                const T* pr = P + static_cast<std::size_t>(i) * n_tok;
                const T* go = dO.data() + static_cast<std::size_t>(i) * dh;
                for (int j = 0; j < n_tok; ++j) {
                    const T* v = V.data() + static_cast<std::size_t>(j) * dh;
                    T acc = 0;
                    for (int d = 0; d < dh; ++d) acc += go[d] * v[d];
                    dP[static_cast<std::size_t>(i) * n_tok + j] = acc;
                    T* dv = dV.data() + static_cast<std::size_t>(j) * dh;
                    const T p = pr[j];
                    for (int d = 0; d < dh; ++d) dv[d] += p * go[d];
                }
            }
            // dS = P o (dP - rowdot), dQ = dS K scale, dK = dS^T Q scale
            for (int i = 0; i < n_tok; ++i) {
                const T* pr = P + static_cast<std::size_t>(i) * n_tok;
                const T* dpr = dP.data() + static_cast<std::size_t>(i) * n_tok;
                T rowdot = 0;
                for (int j = 0; j < n_tok; ++j) rowdot += pr[j] * dpr[j];
                T* dq = dQ.data() + static_cast<std::size_t>(i) * dh;
                const T* q = Q.data() + static_cast<std::size_t>(i) * dh;
                for (int j = 0; j < n_tok; ++j) {
                    const T ds = pr[j] * (dpr[j] - rowdot) * scale;
                    if (ds == T(0)) continue;
                    const T* k = K.data() + static_cast<std::size_t>(j) * dh;
                    T* dk = dK.data() + static_cast<std::size_t>(j) * dh;
                    for (int d = 0; d < dh; ++d) {
                        dq[d] += ds * k[d];
                        dk[d] += ds * q[d];
                    }
                }
            }
            // scatter
            for (int t = 0; t < n_tok; ++t) {
                int f, y, x;
                if (axis == AttnAxis::Spatial) {
                    f = seq; y = t / W; x = t % W;
                } else {
                    f = t; y = seq / W; x = seq % W;
                }
                T* base = grad_qkv.data() +
                          ((static_cast<std::size_t>(f) * H + y) * W + x) * (3 * C) +
                          static_cast<std::size_t>(h) * dh;
                for (int d = 0; d < dh; ++d) {
                    base[d] += dQ[static_cast<std::size_t>(t) * dh + d];
                    base[C + d] += dK[static_cast<std::size_t>(t) * dh + d];
                    base[2 * C + d] += dV[static_cast<std::size_t>(t) * dh + d];
                }
            }
        }
    }
}

}  // namespace gdvdm::kernels
