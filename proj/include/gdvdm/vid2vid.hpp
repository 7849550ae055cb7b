#pragma once

#include "gdvdm/vdm.hpp"

namespace gdvdm {

// Context c for the conditional model, or the null token. The null token is
// represented as the all-zeros depth video and goes through the same path.
struct ConditioningContext {
    VideoTensor depth;  // (F,H,W,1)
    bool is_null = false;

    static ConditioningContext real(VideoTensor d) { return {std::move(d), false}; }
    static ConditioningContext null_token(int F, int H, int W) {
        ConditioningContext c;
        c.depth = VideoTensor({F, H, W, 1});
        c.is_null = true;
        return c;
    }
};

struct GuidanceConfig {
    double omega = 1.4;
    double dropout_p = 0.2;

    nlohmann::ordered_json to_json() const {
        return {{"omega", omega}, {"dropout_p", dropout_p}};
    }
    static GuidanceConfig from_json(const nlohmann::ordered_json& j) {
        return {j.at("omega").get<double>(), j.at("dropout_p").get<double>()};
    }
};

struct DualParams {
    ParameterSet depth_branch;
    ParameterSet video_branch;
};

struct DualConfig {
    UNet3DConfig depth_cfg;  // conditioned = false
    UNet3DConfig video_cfg;  // conditioned = true, same base/mults as depth_cfg

    void validate() const {
        depth_cfg.validate();
        video_cfg.validate();
        if (!video_cfg.conditioned)
            throw std::invalid_argument("DualConfig: video branch must be conditioned");
        if (depth_cfg.base_channels != video_cfg.base_channels ||
            depth_cfg.channel_mults != video_cfg.channel_mults)
            throw std::invalid_argument(
                "DualConfig: branch widths disagree, feature pyramid would not line up");
    }
};

// Video branch of the dual model conditioned on the depth branch's encoder
// features. The timestep embedding t is shared by both branches.
inline VideoTensor conditional_eps(const DualParams& params, const DualConfig& cfg,
                                   const VideoTensor& x_t, const ConditioningContext& ctx,
                                   int t) {
    const VideoTensor depth3 = replicate_channels(ctx.depth, cfg.depth_cfg.in_channels);
    const FeaturePyramid feats =
        unet_encoder_features(params.depth_branch, cfg.depth_cfg, depth3, t);
    auto [eps_hat, vfeats] = unet_forward(params.video_branch, cfg.video_cfg, x_t, t, &feats);
    return eps_hat;
}

// eps_c + omega * (eps_c - eps_null), computed as (1+omega)*eps_c - omega*eps_null
inline VideoTensor guidance_combine(const VideoTensor& eps_c, const VideoTensor& eps_null,
                                    double omega) {
    require_same_shape(eps_c.shape, eps_null.shape, "guidance_combine");
    const float a = static_cast<float>(1.0 + omega);
    const float b = static_cast<float>(omega);
    VideoTensor out(eps_c.shape);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = a * eps_c.v[i] - b * eps_null.v[i];
    return out;
}

inline VideoTensor guided_eps(const DualParams& params, const DualConfig& cfg,
                              const VideoTensor& x_t, const ConditioningContext& ctx, int t,
                              double omega) {
    if (ctx.is_null)
        throw std::invalid_argument("guided_eps: context must be a real conditioning video");
    const VideoTensor eps_c = conditional_eps(params, cfg, x_t, ctx, t);
    const auto null_ctx = ConditioningContext::null_token(ctx.depth.f(), ctx.depth.h(),
                                                          ctx.depth.w());
    const VideoTensor eps_null = conditional_eps(params, cfg, x_t, null_ctx, t);
    return guidance_combine(eps_c, eps_null, omega);
}

struct DualTrainState {
    DualParams params;
    std::map<std::string, Tensor> m_depth, v_depth, m_video, v_video;
    long step = 0;
    std::vector<double> loss_history;
};

struct PairedBatchItem {
    VideoTensor rgb;    // x0, (F,H,W,3)
    VideoTensor depth;  // context, (F,H,W,1)
    int t = 1;
    VideoTensor eps;
    double u = 1.0;  // dropout draw; u < p replaces the context by the null token
};

// One gradient step; gradients flow into both branches.
inline double vid2vid_train_step(DualTrainState& st, const DualConfig& cfg,
                                 const std::vector<PairedBatchItem>& batch,
                                 const NoiseSchedule& sched, const GuidanceConfig& guidance,
                                 const AdamConfig& opt) {
    GradMap gd, gv;
    double total = 0;
    for (const auto& s : batch) {
        const bool null_ctx = s.u < guidance.dropout_p;
        VideoTensor depth3;
        if (null_ctx)
            depth3 = VideoTensor(
                {s.depth.f(), s.depth.h(), s.depth.w(), cfg.depth_cfg.in_channels});
        else
            depth3 = replicate_channels(s.depth, cfg.depth_cfg.in_channels);
        const VideoTensor xt = forward_sample(s.rgb, s.t, s.eps, sched);

        Tape<float> tp(true);
        const int dref = tp.leaf_ref(depth3);
        std::map<std::string, int> drefs, vrefs;
        auto dg = build_unet(tp, cfg.depth_cfg, st.params.depth_branch, dref, s.t, nullptr,
                             &drefs, /*encoder_only=*/true);
        const int xref = tp.leaf_ref(xt);
        auto vg = build_unet(tp, cfg.video_cfg, st.params.video_branch, xref, s.t, &dg.feats,
                             &vrefs);
        const int loss = op_mse(tp, vg.eps_hat, s.eps);
        const double l = tp.val(loss).v[0];
        if (!std::isfinite(l))
            throw std::runtime_error("vid2vid training diverged at step " +
                                     std::to_string(st.step));
        total += l;
        tp.backward(loss);
        accumulate_grads(gd, drefs, tp);
        accumulate_grads(gv, vrefs, tp);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    scale_grads(gd, inv);
    scale_grads(gv, inv);
    // one global clip across both branches
    if (opt.grad_clip > 0) {
        const double n = std::sqrt(std::pow(grad_global_norm(gd), 2) +
                                   std::pow(grad_global_norm(gv), 2));
        if (n > opt.grad_clip) {
            scale_grads(gd, opt.grad_clip / n);
            scale_grads(gv, opt.grad_clip / n);
        }
    }
    st.step += 1;
    adam_update(st.params.depth_branch, gd, st.m_depth, st.v_depth, st.step, opt);
    adam_update(st.params.video_branch, gv, st.m_video, st.v_video, st.step, opt);
    const double loss = total * inv;
    st.loss_history.push_back(loss);
    return loss;
}

inline DualTrainState vid2vid_train(DualTrainState st, const DualConfig& cfg,
                                    const std::vector<std::pair<VideoTensor, VideoTensor>>&
                                        pairs /* (rgb, depth) */,
                                    const NoiseSchedule& sched, const GuidanceConfig& guidance,
                                    int steps, const TrainHyper& hp) {
    if (pairs.empty()) throw std::invalid_argument("vid2vid_train: empty dataset");
    AdamConfig opt;
    opt.lr = hp.lr;
    opt.grad_clip = hp.grad_clip;
    for (int s = 0; s < steps; ++s) {
        Rng rng = Rng::derive(hp.seed ^ 0x76696432ULL, static_cast<std::uint64_t>(st.step));
        std::vector<PairedBatchItem> batch;
        for (int b = 0; b < hp.batch_size; ++b) {
            const auto& pr = pairs[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(pairs.size()) - 1))];
            PairedBatchItem it;
            it.rgb = pr.first;
            it.depth = pr.second;
            it.t = static_cast<int>(rng.uniform_int(1, sched.T));
            it.eps = rng.normal_tensor<float>(it.rgb.shape);
            it.u = rng.uniform();
            batch.push_back(std::move(it));
        }
        vid2vid_train_step(st, cfg, batch, sched, guidance, opt);
    }
    return st;
}

// Ancestral chain driven by classifier-free guidance at every step.
inline VideoTensor sample_conditional(const DualParams& params, const DualConfig& cfg,
                                      const VideoTensor& depth, const NoiseSchedule& sched,
                                      double omega, std::uint64_t seed) {
    const auto& vc = cfg.video_cfg;
    if (depth.shape != std::vector<int>{vc.frames, vc.height, vc.width, 1})
        throw std::invalid_argument("sample_conditional: depth shape " +
                                    shape_str(depth.shape) + " does not match config");
    const auto ctx = ConditioningContext::real(depth);
    Rng rng(seed);
    const std::vector<int> shape = {vc.frames, vc.height, vc.width, vc.in_channels};
    VideoTensor x = rng.normal_tensor<float>(shape);
    for (int t = sched.T; t >= 1; --t) {
        const VideoTensor eps_hat = guided_eps(params, cfg, x, ctx, t, omega);
        VideoTensor z(shape);
        if (t > 1) rng.fill_normal(z);
        x = reverse_step(x, eps_hat, t, z, sched);
    }
    clamp_unit(x);
    return x;
}

}  // namespace gdvdm
