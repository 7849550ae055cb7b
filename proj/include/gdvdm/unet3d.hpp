#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdvdm/rng.hpp"
#include "gdvdm/tape.hpp"
#include "gdvdm/tensor.hpp"

namespace gdvdm {

template <typename T>
using ParamsT = std::map<std::string, TensorT<T>>;
using ParameterSet = ParamsT<float>;

struct UNet3DConfig {
    int base_channels = 64;
    std::vector<int> channel_mults = {1, 2, 4, 8};
    int blocks_per_resolution = 2;
    int attn_head_dim = 32;
    int in_channels = 3;
    int out_channels = 3;
    int frames = 10;
    int height = 64;
    int width = 64;
    int time_embed_dim = 256;
    std::vector<int> attn_scales;  // empty -> the two coarsest scales
    bool conditioned = false;      // video branch of the vid2vid model

    int num_scales() const { return static_cast<int>(channel_mults.size()); }
    int channels(int k) const { return base_channels * channel_mults[k]; }

    std::vector<int> effective_attn_scales() const {
        if (!attn_scales.empty()) return attn_scales;
        const int K = num_scales();
        if (K >= 2) return {K - 2, K - 1};
        return {K - 1};
    }
    bool attn_at(int k) const {
        for (int s : effective_attn_scales())
            if (s == k) return true;
        return false;
    }

    void validate() const {
        const int K = num_scales();
        if (K < 1) throw std::invalid_argument("UNet3DConfig: need at least one scale");
        const int div = 1 << (K - 1);
        if (height % div != 0 || width % div != 0)
            throw std::invalid_argument("UNet3DConfig: H and W must be divisible by 2^" +
                                        std::to_string(K - 1));
        if (time_embed_dim % 2 != 0)
            throw std::invalid_argument("UNet3DConfig: time_embed_dim must be even");
        for (int k : effective_attn_scales())
            if (channels(k) % attn_head_dim != 0)
                throw std::invalid_argument("UNet3DConfig: channels at attention scale " +
                                            std::to_string(k) +
                                            " not divisible by attn_head_dim");
    }

    nlohmann::ordered_json to_json() const {
        return {{"base_channels", base_channels},
                {"channel_mults", channel_mults},
                {"blocks_per_resolution", blocks_per_resolution},
                {"attn_head_dim", attn_head_dim},
                {"in_channels", in_channels},
                {"out_channels", out_channels},
                {"frames", frames},
                {"height", height},
                {"width", width},
                {"time_embed_dim", time_embed_dim},
                {"attn_scales", attn_scales},
                {"conditioned", conditioned}};
    }
    static UNet3DConfig from_json(const nlohmann::ordered_json& j) {
        UNet3DConfig c;
        c.base_channels = j.at("base_channels").get<int>();
        c.channel_mults = j.at("channel_mults").get<std::vector<int>>();
        c.blocks_per_resolution = j.at("blocks_per_resolution").get<int>();
        c.attn_head_dim = j.at("attn_head_dim").get<int>();
        c.in_channels = j.at("in_channels").get<int>();
        c.out_channels = j.at("out_channels").get<int>();
        c.frames = j.at("frames").get<int>();
        c.height = j.at("height").get<int>();
        c.width = j.at("width").get<int>();
        c.time_embed_dim = j.at("time_embed_dim").get<int>();
        c.attn_scales = j.value("attn_scales", std::vector<int>{});
        c.conditioned = j.value("conditioned", false);
        return c;
    }
};

// largest divisor of c not exceeding 8
inline int norm_groups_for(int c) {
    for (int g = std::min(8, c); g >= 1; --g)
        if (c % g == 0) return g;
    return 1;
}

enum class InitKind { FanInNormal, Zero, One };

// Walks every parameter tensor in graph order. The same walk drives
// initialization, counting, and (indirectly, by name) the forward pass.
inline void for_each_param(
    const UNet3DConfig& cfg,
    const std::function<void(const std::string&, const std::vector<int>&, InitKind)>& fn) {
    const int K = cfg.num_scales();
    const int R = cfg.blocks_per_resolution;
    const int TE = cfg.time_embed_dim;

    auto resblock = [&](const std::string& p, int cin, int cout) {
        fn(p + "gn1.g", {cin}, InitKind::One);
        fn(p + "gn1.b", {cin}, InitKind::Zero);
        fn(p + "conv1.w", {3, 3, 3, cin, cout}, InitKind::FanInNormal);
        fn(p + "conv1.b", {cout}, InitKind::Zero);
        fn(p + "emb.w", {TE, cout}, InitKind::FanInNormal);
        fn(p + "emb.b", {cout}, InitKind::Zero);
        fn(p + "gn2.g", {cout}, InitKind::One);
        fn(p + "gn2.b", {cout}, InitKind::Zero);
        fn(p + "conv2.w", {3, 3, 3, cout, cout}, InitKind::FanInNormal);
        fn(p + "conv2.b", {cout}, InitKind::Zero);
        if (cin != cout) {
            fn(p + "skip.w", {1, 1, 1, cin, cout}, InitKind::FanInNormal);
            fn(p + "skip.b", {cout}, InitKind::Zero);
        }
    };
    auto attnblock = [&](const std::string& p, int c) {
        fn(p + "gn1.g", {c}, InitKind::One);
        fn(p + "gn1.b", {c}, InitKind::Zero);
        fn(p + "qkv1.w", {c, 3 * c}, InitKind::FanInNormal);
        fn(p + "qkv1.b", {3 * c}, InitKind::Zero);
        fn(p + "proj1.w", {c, c}, InitKind::FanInNormal);
        fn(p + "proj1.b", {c}, InitKind::Zero);
        fn(p + "gn2.g", {c}, InitKind::One);
        fn(p + "gn2.b", {c}, InitKind::Zero);
        fn(p + "qkv2.w", {c, 3 * c}, InitKind::FanInNormal);
        fn(p + "qkv2.b", {3 * c}, InitKind::Zero);
        fn(p + "proj2.w", {c, c}, InitKind::FanInNormal);
        fn(p + "proj2.b", {c}, InitKind::Zero);
    };

    fn("time.mlp1.w", {TE, TE}, InitKind::FanInNormal);
    fn("time.mlp1.b", {TE}, InitKind::Zero);
    fn("time.mlp2.w", {TE, TE}, InitKind::FanInNormal);
    fn("time.mlp2.b", {TE}, InitKind::Zero);

    fn("stem.w", {3, 3, 3, cfg.in_channels, cfg.channels(0)}, InitKind::FanInNormal);
    fn("stem.b", {cfg.channels(0)}, InitKind::Zero);

    for (int k = 0; k < K; ++k) {
        const int ck = cfg.channels(k);
        const int entry = ck + (cfg.conditioned ? ck : 0);
        for (int r = 0; r < R; ++r) {
            const std::string p = "enc." + std::to_string(k) + ".res" + std::to_string(r) + ".";
            resblock(p, r == 0 ? entry : ck, ck);
            if (cfg.attn_at(k))
                attnblock("enc." + std::to_string(k) + ".attn" + std::to_string(r) + ".", ck);
        }
        if (k < K - 1) {
            fn("enc." + std::to_string(k) + ".down.w", {3, 3, 3, ck, cfg.channels(k + 1)},
               InitKind::FanInNormal);
            fn("enc." + std::to_string(k) + ".down.b", {cfg.channels(k + 1)}, InitKind::Zero);
        }
    }

    const int cm = cfg.channels(K - 1);
    resblock("mid.res0.", cm, cm);
    attnblock("mid.attn.", cm);
    resblock("mid.res1.", cm, cm);

    for (int k = K - 1; k >= 0; --k) {
        const int ck = cfg.channels(k);
        for (int r = 0; r < R; ++r) {
            const std::string p = "dec." + std::to_string(k) + ".res" + std::to_string(r) + ".";
            resblock(p, 2 * ck, ck);
            if (cfg.attn_at(k))
                attnblock("dec." + std::to_string(k) + ".attn" + std::to_string(r) + ".", ck);
        }
        if (k > 0) {
            fn("dec." + std::to_string(k) + ".up.w", {3, 3, 3, ck, cfg.channels(k - 1)},
               InitKind::FanInNormal);
            fn("dec." + std::to_string(k) + ".up.b", {cfg.channels(k - 1)}, InitKind::Zero);
        }
    }

    fn("out.gn.g", {cfg.channels(0)}, InitKind::One);
    fn("out.gn.b", {cfg.channels(0)}, InitKind::Zero);
    fn("out.w", {3, 3, 3, cfg.channels(0), cfg.out_channels}, InitKind::Zero);
    fn("out.b", {cfg.out_channels}, InitKind::Zero);
}

inline std::size_t param_count(const UNet3DConfig& cfg) {
    std::size_t n = 0;
    for_each_param(cfg, [&](const std::string&, const std::vector<int>& s, InitKind) {
        n += Tensor::numel_of(s);
    });
    return n;
}

inline ParameterSet init_params(const UNet3DConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParameterSet ps;
    Rng rng(seed);
    for_each_param(cfg, [&](const std::string& name, const std::vector<int>& shape,
                            InitKind kind) {
        Tensor t(shape);
        switch (kind) {
            case InitKind::Zero:
                break;
            case InitKind::One:
                std::fill(t.v.begin(), t.v.end(), 1.0f);
                break;
            case InitKind::FanInNormal: {
                std::size_t fan_in = 1;
                for (std::size_t d = 0; d + 1 < shape.size(); ++d)
                    fan_in *= static_cast<std::size_t>(shape[d]);
                const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
                for (auto& v : t.v) v = static_cast<float>(rng.normal() * std_dev);
                break;
            }
        }
        ps.emplace(name, std::move(t));
    });
    return ps;
}

template <typename T>
ParamsT<T> cast_params(const ParameterSet& ps) {
    ParamsT<T> out;
    for (const auto& [k, v] : ps) out.emplace(k, v.template cast<T>());
    return out;
}

// sin/cos of t against a geometric frequency ladder; dim/2 frequencies
template <typename T>
TensorT<T> timestep_embedding(int t, int dim) {
    if (dim % 2 != 0) throw std::invalid_argument("timestep_embedding: dim must be even");
    const int half = dim / 2;
    TensorT<T> e({dim});
    for (int i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(i) / std::max(1, half - 1));
        e.v[i] = static_cast<T>(std::sin(t * freq));
        e.v[half + i] = static_cast<T>(std::cos(t * freq));
    }
    return e;
}

struct FeaturePyramid {
    std::vector<Tensor> scales;  // scale k: (F, H>>k, W>>k, base*mult_k)
};

template <typename T>
struct UNetGraph {
    int eps_hat = -1;             // tape ref; -1 in encoder-only mode
    std::vector<int> feats;      // tape refs, one per scale
};

// Builds the forward graph on `tp`. `param_refs`, when given, receives the
// tape ref of every parameter leaf so callers can read gradients.
template <typename T>
UNetGraph<T> build_unet(Tape<T>& tp, const UNet3DConfig& cfg, const ParamsT<T>& params,
                        int x_ref, int t, const std::vector<int>* cond_feats,
                        std::map<std::string, int>* param_refs = nullptr,
                        bool encoder_only = false) {
    cfg.validate();
    const int K = cfg.num_scales();
    const int R = cfg.blocks_per_resolution;

    auto P = [&](const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw std::runtime_error("missing parameter: " + name);
        const int r = tp.leaf_ref(it->second);
        if (param_refs) (*param_refs)[name] = r;
        return r;
    };

    if (cfg.conditioned) {
        if (!cond_feats || static_cast<int>(cond_feats->size()) != K)
            throw std::invalid_argument("conditioned U-Net requires a feature pyramid with " +
                                        std::to_string(K) + " scales");
    }

    // time embedding MLP
    int emb = tp.leaf(timestep_embedding<T>(t, cfg.time_embed_dim));
    emb = op_chan_linear(tp, emb, P("time.mlp1.w"), P("time.mlp1.b"));
    emb = op_silu(tp, emb);
    emb = op_chan_linear(tp, emb, P("time.mlp2.w"), P("time.mlp2.b"));
    const int emb_act = op_silu(tp, emb);

    auto resblock = [&](const std::string& p, int h, int cin, int cout) {
        int r = op_group_norm(tp, h, P(p + "gn1.g"), P(p + "gn1.b"), norm_groups_for(cin));
        r = op_silu(tp, r);
        r = op_conv3d(tp, r, P(p + "conv1.w"), P(p + "conv1.b"), 1);
        const int bias = op_chan_linear(tp, emb_act, P(p + "emb.w"), P(p + "emb.b"));
        r = op_add_channel_bias(tp, r, bias);
        r = op_group_norm(tp, r, P(p + "gn2.g"), P(p + "gn2.b"), norm_groups_for(cout));
        r = op_silu(tp, r);
        r = op_conv3d(tp, r, P(p + "conv2.w"), P(p + "conv2.b"), 1);
        int skip = h;
        if (cin != cout) skip = op_conv3d(tp, h, P(p + "skip.w"), P(p + "skip.b"), 1);
        return op_add(tp, r, skip);
    };
    auto attnblock = [&](const std::string& p, int h, int c) {
        const int heads = c / cfg.attn_head_dim;
        int a = op_group_norm(tp, h, P(p + "gn1.g"), P(p + "gn1.b"), norm_groups_for(c));
        a = op_chan_linear(tp, a, P(p + "qkv1.w"), P(p + "qkv1.b"));
        a = op_attention(tp, a, heads, kernels::AttnAxis::Spatial);
        a = op_chan_linear(tp, a, P(p + "proj1.w"), P(p + "proj1.b"));
        h = op_add(tp, h, a);
        a = op_group_norm(tp, h, P(p + "gn2.g"), P(p + "gn2.b"), norm_groups_for(c));
        a = op_chan_linear(tp, a, P(p + "qkv2.w"), P(p + "qkv2.b"));
        a = op_attention(tp, a, heads, kernels::AttnAxis::Temporal);
        a = op_chan_linear(tp, a, P(p + "proj2.w"), P(p + "proj2.b"));
        return op_add(tp, h, a);
    };

    UNetGraph<T> g;
    int h = op_conv3d(tp, x_ref, P("stem.w"), P("stem.b"), 1);
    std::vector<int> skips;
    for (int k = 0; k < K; ++k) {
        const int ck = cfg.channels(k);
        if (cfg.conditioned) {
            const auto& cf = tp.val((*cond_feats)[k]);
            const std::vector<int> want = {cfg.frames, cfg.height >> k, cfg.width >> k, ck};
            if (cf.shape != want)
                throw std::invalid_argument("conditioning features at scale " +
                                            std::to_string(k) + ": expected " +
                                            shape_str(want) + ", got " + shape_str(cf.shape));
            h = op_concat_channels(tp, h, (*cond_feats)[k]);
        }
        const int entry = ck + (cfg.conditioned ? ck : 0);
        for (int r = 0; r < R; ++r) {
            const std::string p = "enc." + std::to_string(k) + ".res" + std::to_string(r) + ".";
            h = resblock(p, h, r == 0 ? entry : ck, ck);
            if (cfg.attn_at(k))
                h = attnblock("enc." + std::to_string(k) + ".attn" + std::to_string(r) + ".", h,
                              ck);
            skips.push_back(h);
        }
        g.feats.push_back(h);
        if (k < K - 1)
            h = op_conv3d(tp, h, P("enc." + std::to_string(k) + ".down.w"),
                          P("enc." + std::to_string(k) + ".down.b"), 2);
    }
    if (encoder_only) return g;

    const int cm = cfg.channels(K - 1);
    h = resblock("mid.res0.", h, cm, cm);
    h = attnblock("mid.attn.", h, cm);
    h = resblock("mid.res1.", h, cm, cm);

    for (int k = K - 1; k >= 0; --k) {
        const int ck = cfg.channels(k);
        for (int r = 0; r < R; ++r) {
            h = op_concat_channels(tp, h, skips.back());
            skips.pop_back();
            const std::string p = "dec." + std::to_string(k) + ".res" + std::to_string(r) + ".";
            h = resblock(p, h, 2 * ck, ck);
            if (cfg.attn_at(k))
                h = attnblock("dec." + std::to_string(k) + ".attn" + std::to_string(r) + ".", h,
                              ck);
        }
        if (k > 0) {
            h = op_upsample2x(tp, h);
            h = op_conv3d(tp, h, P("dec." + std::to_string(k) + ".up.w"),
                          P("dec." + std::to_string(k) + ".up.b"), 1);
        }
    }

    h = op_group_norm(tp, h, P("out.gn.g"), P("out.gn.b"), norm_groups_for(cfg.channels(0)));
    h = op_silu(tp, h);
    g.eps_hat = op_conv3d(tp, h, P("out.w"), P("out.b"), 1);
    return g;
}

// Convenience forward pass without gradients.
inline std::pair<VideoTensor, FeaturePyramid> unet_forward(
    const ParameterSet& params, const UNet3DConfig& cfg, const VideoTensor& x, int t,
    const FeaturePyramid* cond_feats = nullptr) {
    if (x.shape != std::vector<int>{cfg.frames, cfg.height, cfg.width, cfg.in_channels})
        throw std::invalid_argument("unet_forward: input shape " + shape_str(x.shape) +
                                    " does not match config");
    Tape<float> tp(/*grad_enabled=*/false);
    const int xr = tp.leaf_ref(x);
    std::vector<int> cf_refs;
    if (cond_feats)
        for (const auto& f : cond_feats->scales) cf_refs.push_back(tp.leaf_ref(f));
    auto g = build_unet(tp, cfg, params, xr, t, cond_feats ? &cf_refs : nullptr);
    FeaturePyramid feats;
    for (int fr : g.feats) feats.scales.push_back(tp.val(fr));
    return {tp.val(g.eps_hat), std::move(feats)};
}

inline FeaturePyramid unet_encoder_features(const ParameterSet& params, const UNet3DConfig& cfg,
                                            const VideoTensor& x, int t) {
    Tape<float> tp(/*grad_enabled=*/false);
    const int xr = tp.leaf_ref(x);
    auto g = build_unet(tp, cfg, params, xr, t, nullptr, nullptr, /*encoder_only=*/true);
    FeaturePyramid feats;
    for (int fr : g.feats) feats.scales.push_back(tp.val(fr));
    return feats;
}

}  // namespace gdvdm
