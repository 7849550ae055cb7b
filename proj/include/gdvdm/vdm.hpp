#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "gdvdm/rng.hpp"
#include "gdvdm/schedule.hpp"
#include "gdvdm/unet3d.hpp"

namespace gdvdm {

// depth videos are stored single-channel and replicated at the model boundary
inline VideoTensor replicate_channels(const VideoTensor& x, int c_out) {
    if (x.c() == c_out) return x;
    if (x.c() != 1) throw std::invalid_argument("replicate_channels: expected C=1 input");
    VideoTensor out({x.f(), x.h(), x.w(), c_out});
    for (std::size_t p = 0; p < x.numel(); ++p)
        for (int c = 0; c < c_out; ++c) out.v[p * c_out + c] = x.v[p];
    return out;
}

inline VideoTensor mean_channels(const VideoTensor& x) {
    VideoTensor out({x.f(), x.h(), x.w(), 1});
    const int C = x.c();
    for (std::size_t p = 0; p < out.numel(); ++p) {
        float s = 0;
        for (int c = 0; c < C; ++c) s += x.v[p * C + c];
        out.v[p] = s / static_cast<float>(C);
    }
    return out;
}

inline void clamp_unit(VideoTensor& x) {
    for (auto& v : x.v) v = std::min(1.0f, std::max(-1.0f, v));
}

struct TrainSample {
    VideoTensor x0;
    int t = 1;
    VideoTensor eps;
};
using TrainBatch = std::vector<TrainSample>;

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global L2 norm
};

struct TrainHyper {
    double lr = 1e-4;
    int batch_size = 2;
    std::uint64_t seed = 0;
    double grad_clip = 1.0;
};

struct TrainState {
    ParameterSet params;
    std::map<std::string, Tensor> m, v;  // Adam moments
    long step = 0;
    std::vector<double> loss_history;
};

using GradMap = std::map<std::string, Tensor>;

inline void accumulate_grads(GradMap& acc, const std::map<std::string, int>& refs,
                             const Tape<float>& tp) {
    for (const auto& [name, ref] : refs) {
        if (!tp.grad_touched(ref)) continue;
        auto it = acc.find(name);
        if (it == acc.end()) it = acc.emplace(name, Tensor(tp.grad(ref).shape)).first;
        const auto& g = tp.grad(ref);
        for (std::size_t i = 0; i < g.v.size(); ++i) it->second.v[i] += g.v[i];
    }
}

inline void scale_grads(GradMap& g, double s) {
    for (auto& [k, t] : g)
        for (auto& v : t.v) v = static_cast<float>(v * s);
}

inline double grad_global_norm(const GradMap& g) {
    double sq = 0;
    for (const auto& [k, t] : g)
        for (float v : t.v) sq += static_cast<double>(v) * v;
    return std::sqrt(sq);
}

inline void clip_grads(GradMap& g, double max_norm) {
    if (max_norm <= 0) return;
    const double n = grad_global_norm(g);
    if (n > max_norm) scale_grads(g, max_norm / n);
}

inline void adam_update(ParameterSet& params, const GradMap& grads,
                        std::map<std::string, Tensor>& m, std::map<std::string, Tensor>& v,
                        long step, const AdamConfig& cfg) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        auto mi = m.find(name);
        if (mi == m.end()) mi = m.emplace(name, Tensor(g.shape)).first;
        auto vi = v.find(name);
        if (vi == v.end()) vi = v.emplace(name, Tensor(g.shape)).first;
        for (std::size_t i = 0; i < g.v.size(); ++i) {
            const double gi = g.v[i];
            const double mm = cfg.beta1 * mi->second.v[i] + (1.0 - cfg.beta1) * gi;
            const double vv = cfg.beta2 * vi->second.v[i] + (1.0 - cfg.beta2) * gi * gi;
            mi->second.v[i] = static_cast<float>(mm);
            vi->second.v[i] = static_cast<float>(vv);
            p.v[i] -= static_cast<float>(cfg.lr * (mm / bc1) /
                                         (std::sqrt(vv / bc2) + cfg.eps));
        }
    }
}

// E ||eps - eps_theta(x_t, t)||^2 averaged over the batch
inline double vdm_loss(const ParameterSet& params, const UNet3DConfig& cfg,
                       const TrainBatch& batch, const NoiseSchedule& sched) {
    double total = 0;
    for (const auto& s : batch) {
        const VideoTensor xt = forward_sample(s.x0, s.t, s.eps, sched);
        auto [eps_hat, feats] = unet_forward(params, cfg, xt, s.t);
        double acc = 0;
        for (std::size_t i = 0; i < eps_hat.v.size(); ++i) {
            const double d = static_cast<double>(eps_hat.v[i]) - s.eps.v[i];
            acc += d * d;
        }
        if (!std::isfinite(acc))
            throw std::runtime_error("vdm_loss: non-finite forward output");
        total += acc / static_cast<double>(eps_hat.numel());
    }
    return total / static_cast<double>(batch.size());
}

// One gradient step over `batch`; returns the batch loss.
inline double vdm_train_step(TrainState& st, const UNet3DConfig& cfg, const TrainBatch& batch,
                             const NoiseSchedule& sched, const AdamConfig& opt) {
    GradMap grads;
    double total = 0;
    for (const auto& s : batch) {
        const VideoTensor xt = forward_sample(s.x0, s.t, s.eps, sched);
        Tape<float> tp(true);
        const int xr = tp.leaf_ref(xt);
        std::map<std::string, int> refs;
        auto g = build_unet(tp, cfg, st.params, xr, s.t, nullptr, &refs);
        const int loss = op_mse(tp, g.eps_hat, s.eps);
        const double l = tp.val(loss).v[0];
        if (!std::isfinite(l))
            throw std::runtime_error("training diverged at step " + std::to_string(st.step));
        total += l;
        tp.backward(loss);
        accumulate_grads(grads, refs, tp);
    }
    scale_grads(grads, 1.0 / static_cast<double>(batch.size()));
    clip_grads(grads, opt.grad_clip);
    st.step += 1;
    adam_update(st.params, grads, st.m, st.v, st.step, opt);
    const double loss = total / static_cast<double>(batch.size());
    st.loss_history.push_back(loss);
    return loss;
}

// Full training loop on a list of (already channel-replicated) videos.
inline TrainState vdm_train(TrainState st, const UNet3DConfig& cfg,
                            const std::vector<VideoTensor>& videos, const NoiseSchedule& sched,
                            int steps, const TrainHyper& hp) {
    if (videos.empty()) throw std::invalid_argument("vdm_train: empty dataset");
    AdamConfig opt;
    opt.lr = hp.lr;
    opt.grad_clip = hp.grad_clip;
    for (int s = 0; s < steps; ++s) {
        Rng rng = Rng::derive(hp.seed, static_cast<std::uint64_t>(st.step));
        TrainBatch batch;
        for (int b = 0; b < hp.batch_size; ++b) {
            TrainSample ts;
            ts.x0 = videos[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(videos.size()) - 1))];
            ts.t = static_cast<int>(rng.uniform_int(1, sched.T));
            ts.eps = rng.normal_tensor<float>(ts.x0.shape);
            batch.push_back(std::move(ts));
        }
        vdm_train_step(st, cfg, batch, sched, opt);
    }
    return st;
}

// Ancestral sampling: x_T ~ N(0, I), reverse to x_0, clamp to [-1, 1].
inline std::vector<VideoTensor> vdm_sample(const ParameterSet& params, const UNet3DConfig& cfg,
                                           const NoiseSchedule& sched, int n,
                                           std::uint64_t seed) {
    std::vector<VideoTensor> out;
    const std::vector<int> shape = {cfg.frames, cfg.height, cfg.width, cfg.in_channels};
    for (int i = 0; i < n; ++i) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
        VideoTensor x = rng.normal_tensor<float>(shape);
        for (int t = sched.T; t >= 1; --t) {
            auto [eps_hat, feats] = unet_forward(params, cfg, x, t);
            VideoTensor z(shape);
            if (t > 1) rng.fill_normal(z);
            x = reverse_step(x, eps_hat, t, z, sched);
        }
        clamp_unit(x);
        out.push_back(std::move(x));
    }
    return out;
}

}  // namespace gdvdm
