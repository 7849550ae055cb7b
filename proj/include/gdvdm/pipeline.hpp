#pragma once

#include <filesystem>

#include "gdvdm/data.hpp"
#include "gdvdm/vid2vid.hpp"

namespace gdvdm {

struct ScheduleConfig {
    std::string kind = "cosine";
    int T = 1000;
    double cosine_s = 0.008;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule make() const {
        if (kind == "cosine") return make_cosine_schedule(T, cosine_s);
        if (kind == "linear") return make_linear_schedule(T, beta_start, beta_end);
        throw std::invalid_argument("unknown schedule kind: " + kind);
    }
    json to_json() const {
        return {{"kind", kind},
                {"T", T},
                {"cosine_s", cosine_s},
                {"beta_start", beta_start},
                {"beta_end", beta_end}};
    }
    static ScheduleConfig from_json(const json& j) {
        ScheduleConfig c;
        c.kind = j.at("kind").get<std::string>();
        c.T = j.at("T").get<int>();
        c.cosine_s = j.value("cosine_s", 0.008);
        c.beta_start = j.value("beta_start", 1e-4);
        c.beta_end = j.value("beta_end", 0.02);
        return c;
    }
};

// ---------------------------------------------------------------------------
// Checkpoints (.gdt named-tensor container, config in the header meta)
// ---------------------------------------------------------------------------

struct Checkpoint {
    ParameterSet params;
    UNet3DConfig model;
    ScheduleConfig sched;
    long step = 0;
    json extra = json::object();
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    NamedTensors nt;
    for (const auto& [name, t] : ck.params) nt.items.emplace_back(name, t);
    nt.meta = {{"kind", "checkpoint"},
               {"model", ck.model.to_json()},
               {"schedule", ck.sched.to_json()},
               {"step", ck.step}};
    if (!ck.extra.empty()) nt.meta["extra"] = ck.extra;
    save_tensors(path, nt);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    NamedTensors nt = load_tensors(path);
    Checkpoint ck;
    ck.model = UNet3DConfig::from_json(nt.meta.at("model"));
    ck.sched = ScheduleConfig::from_json(nt.meta.at("schedule"));
    ck.step = nt.meta.at("step").get<long>();
    if (nt.meta.contains("extra")) ck.extra = nt.meta["extra"];
    for (auto& [name, t] : nt.items) ck.params.emplace(name, std::move(t));
    return ck;
}

struct DualCheckpoint {
    DualParams params;
    DualConfig model;
    ScheduleConfig sched;
    GuidanceConfig guidance;
    long step = 0;
};

inline void save_dual_checkpoint(const std::filesystem::path& path, const DualCheckpoint& ck) {
    NamedTensors nt;
    for (const auto& [name, t] : ck.params.depth_branch)
        nt.items.emplace_back("depth." + name, t);
    for (const auto& [name, t] : ck.params.video_branch)
        nt.items.emplace_back("video." + name, t);
    nt.meta = {{"kind", "dual_checkpoint"},
               {"depth_model", ck.model.depth_cfg.to_json()},
               {"video_model", ck.model.video_cfg.to_json()},
               {"schedule", ck.sched.to_json()},
               {"guidance", ck.guidance.to_json()},
               {"step", ck.step}};
    save_tensors(path, nt);
}

inline DualCheckpoint load_dual_checkpoint(const std::filesystem::path& path) {
    NamedTensors nt = load_tensors(path);
    DualCheckpoint ck;
    ck.model.depth_cfg = UNet3DConfig::from_json(nt.meta.at("depth_model"));
    ck.model.video_cfg = UNet3DConfig::from_json(nt.meta.at("video_model"));
    ck.sched = ScheduleConfig::from_json(nt.meta.at("schedule"));
    ck.guidance = GuidanceConfig::from_json(nt.meta.at("guidance"));
    ck.step = nt.meta.at("step").get<long>();
    for (auto& [name, t] : nt.items) {
        if (name.rfind("depth.", 0) == 0)
            ck.params.depth_branch.emplace(name.substr(6), std::move(t));
        else if (name.rfind("video.", 0) == 0)
            ck.params.video_branch.emplace(name.substr(6), std::move(t));
        else
            throw std::runtime_error("dual checkpoint: unexpected entry '" + name + "'");
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Stage configuration and orchestration
// ---------------------------------------------------------------------------

struct StageConfig {
    ScheduleConfig sched;
    UNet3DConfig model;  // depth VDM architecture; the video branch mirrors it
    GuidanceConfig guidance;
    TrainHyper stage1;
    TrainHyper stage2;
    int stage1_steps = 2000;
    int stage2_steps = 2000;
    int t_star = -1;  // noising level of the denoised-depth builder; -1 -> T/4
    bool use_denoised = true;
    double denoised_mix = 1.0;  // fraction of stage-2 samples taking denoised depth
    std::uint64_t init_seed = 0;

    int effective_t_star() const { return t_star < 0 ? sched.T / 4 : t_star; }
};

// Forward-noises each depth video to t_star and runs the reverse chain back,
// producing the training distribution the depth model itself generates.
// RGB halves pass through untouched. Pure producer: the input is not mutated.
inline Dataset build_denoised_depth(const Dataset& depth_ds, const ParameterSet& depth_model,
                                    const UNet3DConfig& cfg, const NoiseSchedule& sched,
                                    int t_star, std::uint64_t seed) {
    if (t_star < 0 || t_star > sched.T)
        throw std::invalid_argument("build_denoised_depth: t_star out of [0, T]");
    Dataset out;
    out.samples.resize(depth_ds.samples.size());
    for (std::size_t i = 0; i < depth_ds.samples.size(); ++i) {
        const PairedSample& src = depth_ds.samples[i];
        PairedSample dst;
        dst.rgb = src.rgb;
        if (t_star == 0) {
            dst.depth = src.depth;
        } else {
            Rng rng = Rng::derive(seed, i);
            VideoTensor x = replicate_channels(src.depth, cfg.in_channels);
            const VideoTensor eps = rng.normal_tensor<float>(x.shape);
            x = forward_sample(x, t_star, eps, sched);
            for (int t = t_star; t >= 1; --t) {
                auto [eps_hat, feats] = unet_forward(depth_model, cfg, x, t);
                VideoTensor z(x.shape);
                if (t > 1) rng.fill_normal(z);
                x = reverse_step(x, eps_hat, t, z, sched);
            }
            clamp_unit(x);
            dst.depth = mean_channels(x);
        }
        dst.meta = {{"source_index", i}, {"t_star", t_star}, {"seed", seed}};
        out.samples[i] = std::move(dst);
    }
    out.manifest = depth_ds.manifest;
    out.manifest["kind"] = "denoised_depth";
    out.manifest["t_star"] = t_star;
    out.manifest["denoise_seed"] = seed;
    return out;
}

struct TwoStageResult {
    Checkpoint depth;
    DualCheckpoint dual;
    Dataset denoised;  // stage-2 conditioning dataset actually used
};

inline TwoStageResult two_stage_train(const StageConfig& cfg, const Dataset& ds) {
    if (ds.samples.empty()) throw std::invalid_argument("two_stage_train: empty dataset");
    const NoiseSchedule sched = cfg.sched.make();

    // stage 1: unconditional depth VDM
    std::vector<VideoTensor> depth_videos;
    for (const auto& s : ds.samples)
        depth_videos.push_back(replicate_channels(s.depth, cfg.model.in_channels));
    TrainState st1;
    st1.params = init_params(cfg.model, cfg.init_seed);
    st1 = vdm_train(std::move(st1), cfg.model, depth_videos, sched, cfg.stage1_steps,
                    cfg.stage1);

    Checkpoint depth_ck{st1.params, cfg.model, cfg.sched, st1.step,
                        json{{"loss_history_tail",
                              st1.loss_history.empty() ? 0.0 : st1.loss_history.back()}}};

    // stage-2 conditioning data: denoised depth (or raw, one-flag ablation)
    Dataset cond_ds = cfg.use_denoised
                          ? build_denoised_depth(ds, st1.params, cfg.model, sched,
                                                 cfg.effective_t_star(), cfg.init_seed + 1)
                          : ds;

    std::vector<std::pair<VideoTensor, VideoTensor>> pairs;
    {
        Rng mix_rng(cfg.init_seed ^ 0x6d697872ULL);
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            const bool take_denoised =
                cfg.use_denoised && mix_rng.uniform() < cfg.denoised_mix;
            pairs.emplace_back(ds.samples[i].rgb, take_denoised ? cond_ds.samples[i].depth
                                                                : ds.samples[i].depth);
        }
    }

    // stage 2: dual U-Net, depth branch initialized from stage 1 and trainable
    DualConfig dual_cfg;
    dual_cfg.depth_cfg = cfg.model;
    dual_cfg.video_cfg = cfg.model;
    dual_cfg.video_cfg.conditioned = true;
    DualTrainState st2;
    st2.params.depth_branch = st1.params;
    st2.params.video_branch = init_params(dual_cfg.video_cfg, cfg.init_seed + 2);
    st2 = vid2vid_train(std::move(st2), dual_cfg, pairs, sched, cfg.guidance,
                        cfg.stage2_steps, cfg.stage2);

    DualCheckpoint dual_ck{st2.params, dual_cfg, cfg.sched, cfg.guidance, st2.step};
    return {std::move(depth_ck), std::move(dual_ck), std::move(cond_ds)};
}

// Generate n depth videos unconditionally, then translate each to RGB.
inline std::vector<std::pair<VideoTensor, VideoTensor>> generate(
    const Checkpoint& depth_ck, const DualCheckpoint& dual_ck, int n, double omega,
    std::uint64_t seed) {
    if (depth_ck.model.to_json() != dual_ck.model.depth_cfg.to_json())
        throw std::invalid_argument(
            "generate: depth checkpoint architecture does not match the dual depth branch");
    const NoiseSchedule sched = depth_ck.sched.make();
    std::vector<std::pair<VideoTensor, VideoTensor>> out;
    const auto depth_samples = vdm_sample(depth_ck.params, depth_ck.model, sched, n, seed);
    for (int i = 0; i < n; ++i) {
        const VideoTensor depth1 = mean_channels(depth_samples[i]);
        VideoTensor rgb = sample_conditional(dual_ck.params, dual_ck.model, depth1, sched,
                                             omega, seed ^ (0x72676200ULL + i));
        out.emplace_back(depth1, std::move(rgb));
    }
    return out;
}

}  // namespace gdvdm
