// Command-line surface for the two-stage depth->video diffusion pipeline.
// One JSON run config is the single source of truth; flags are overrides.
// Every command writes only under a run directory named by a content hash of
// the resolved config, so reruns with the same config are byte-identical.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "gdvdm/metrics.hpp"
#include "gdvdm/pipeline.hpp"

using namespace gdvdm;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// RunConfig: schema-validated JSON, unknown keys rejected with their path
// ---------------------------------------------------------------------------

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_keys(const json& j, const std::string& path,
                  const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError("config: '" + path + "' must be an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k))
            throw ConfigError("config: unknown key '" + (path.empty() ? k : path + "." + k) +
                              "'");
}

template <typename T>
void take(const json& j, const std::string& key, T& dst) {
    if (j.contains(key)) dst = j.at(key).get<T>();
}

struct StageHyper {
    int steps = 2000;
    TrainHyper hp;
};

struct RunConfig {
    json raw;  // resolved config, the hashed artifact
    ToyConfig toy;
    int data_n = 8;
    std::uint64_t data_seed = 1;
    ScheduleConfig sched;
    UNet3DConfig model;
    GuidanceConfig guidance;
    StageHyper stage1, stage2;
    int t_star = -1;
    bool use_denoised = true;
    double denoised_mix = 1.0;
    std::uint64_t builder_seed = 0;
    std::uint64_t init_seed = 0;
    int sample_n = 4;
    std::uint64_t sample_seed = 0;
    double sample_omega = 1.4;
    int feature_dim = 8;
    std::uint64_t feature_seed = 17;
    int grid_rows = 0;  // 0 -> one row per video
    std::string path_dataset, path_denoised, path_depth_ckpt, path_dual_ckpt;
};

void parse_stage(const json& j, const std::string& path, StageHyper& s) {
    require_keys(j, path, {"steps", "lr", "batch_size", "seed", "grad_clip"});
    take(j, "steps", s.steps);
    take(j, "lr", s.hp.lr);
    take(j, "batch_size", s.hp.batch_size);
    take(j, "seed", s.hp.seed);
    take(j, "grad_clip", s.hp.grad_clip);
}

RunConfig parse_config(const json& j) {
    require_keys(j, "", {"data", "schedule", "model", "guidance", "stage1", "stage2", "builder",
                         "sample", "metrics", "paths", "init_seed", "export"});
    RunConfig c;
    c.raw = j;
    if (j.contains("data")) {
        const auto& d = j.at("data");
        require_keys(d, "data", {"n", "seed", "toy"});
        take(d, "n", c.data_n);
        take(d, "seed", c.data_seed);
        if (d.contains("toy")) {
            require_keys(d.at("toy"), "data.toy",
                         {"frames", "height", "width", "min_objects", "max_objects",
                          "max_speed"});
            json t = c.toy.to_json();
            t.update(d.at("toy"));
            c.toy = ToyConfig::from_json(t);
        }
    }
    if (j.contains("schedule")) {
        require_keys(j.at("schedule"), "schedule",
                     {"kind", "T", "cosine_s", "beta_start", "beta_end"});
        json s = c.sched.to_json();
        s.update(j.at("schedule"));
        c.sched = ScheduleConfig::from_json(s);
    }
    if (j.contains("model")) {
        require_keys(j.at("model"), "model",
                     {"base_channels", "channel_mults", "blocks_per_resolution",
                      "attn_head_dim", "in_channels", "out_channels", "frames", "height",
                      "width", "time_embed_dim", "attn_scales", "conditioned"});
        json m = c.model.to_json();
        m.update(j.at("model"));
        c.model = UNet3DConfig::from_json(m);
    }
    if (j.contains("guidance")) {
        require_keys(j.at("guidance"), "guidance", {"omega", "dropout_p"});
        take(j.at("guidance"), "omega", c.guidance.omega);
        take(j.at("guidance"), "dropout_p", c.guidance.dropout_p);
        c.sample_omega = c.guidance.omega;
    }
    if (j.contains("stage1")) parse_stage(j.at("stage1"), "stage1", c.stage1);
    if (j.contains("stage2")) parse_stage(j.at("stage2"), "stage2", c.stage2);
    if (j.contains("builder")) {
        const auto& b = j.at("builder");
        require_keys(b, "builder", {"t_star", "use_denoised", "denoised_mix", "seed"});
        take(b, "t_star", c.t_star);
        take(b, "use_denoised", c.use_denoised);
        take(b, "denoised_mix", c.denoised_mix);
        take(b, "seed", c.builder_seed);
    }
    if (j.contains("sample")) {
        const auto& s = j.at("sample");
        require_keys(s, "sample", {"n", "seed", "omega"});
        take(s, "n", c.sample_n);
        take(s, "seed", c.sample_seed);
        take(s, "omega", c.sample_omega);
    }
    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        require_keys(m, "metrics", {"feature_dim", "feature_seed"});
        take(m, "feature_dim", c.feature_dim);
        take(m, "feature_seed", c.feature_seed);
    }
    if (j.contains("export")) {
        require_keys(j.at("export"), "export", {"rows"});
        take(j.at("export"), "rows", c.grid_rows);
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        require_keys(p, "paths", {"dataset", "denoised", "depth_ckpt", "dual_ckpt"});
        take(p, "dataset", c.path_dataset);
        take(p, "denoised", c.path_denoised);
        take(p, "depth_ckpt", c.path_depth_ckpt);
        take(p, "dual_ckpt", c.path_dual_ckpt);
    }
    take(j, "init_seed", c.init_seed);

    const int f = c.toy.frames, h = c.toy.height, w = c.toy.width;
    if (c.model.frames != f || c.model.height != h || c.model.width != w)
        throw ConfigError("config: model frames/height/width (" + std::to_string(c.model.frames) +
                          "," + std::to_string(c.model.height) + "," +
                          std::to_string(c.model.width) + ") disagree with data.toy (" +
                          std::to_string(f) + "," + std::to_string(h) + "," +
                          std::to_string(w) + ")");
    if (c.model.conditioned)
        throw ConfigError("config: model.conditioned must be false; the video branch is "
                          "derived internally");
    c.model.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Run directories: <root>/<command>-<fnv1a64(resolved config + code version)>
// ---------------------------------------------------------------------------

constexpr const char* kCodeVersion = "gdvdm-1";

std::string content_hash(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

fs::path run_dir_for(const std::string& command, const json& resolved,
                     const std::string& out_override) {
    fs::path root;
    if (!out_override.empty())
        root = out_override;
    else if (const char* e = std::getenv("GDVDM_RUN_ROOT"))
        root = e;
    else
        root = "runs";
    const std::string id = content_hash(command + "\n" + kCodeVersion + "\n" + resolved.dump());
    return root / (command + "-" + id);
}

fs::path prepare_run_dir(const std::string& command, const json& resolved,
                         const std::string& out_override) {
    const fs::path dir = run_dir_for(command, resolved, out_override);
    fs::create_directories(dir);
    std::ofstream os(dir / "resolved_config.json");
    os << resolved.dump(2) << "\n";
    return dir;
}

Dataset load_input_dataset(const std::string& path, const char* what) {
    if (path.empty())
        throw std::runtime_error(std::string("missing upstream artifact: paths.") + what +
                                 " is not set in the config");
    return load_dataset(path);
}

// ---------------------------------------------------------------------------
// export_frames: one row of 8-bit frames per video + grid manifest.
// Depth (C=1) uses the linear grayscale mapping -1 -> 0, +1 -> 255.
// ---------------------------------------------------------------------------

void export_frames(const std::vector<std::pair<std::string, VideoTensor>>& videos,
                   const fs::path& dir) {
    if (videos.empty()) throw std::invalid_argument("export_frames: no videos");
    fs::create_directories(dir);
    json rows = json::array();
    for (const auto& [name, v] : videos) {
        json files = json::array();
        for (int f = 0; f < v.f(); ++f) {
            char fn[128];
            std::snprintf(fn, sizeof(fn), "%s_f%02d.%s", name.c_str(), f,
                          v.c() == 1 ? "pgm" : "ppm");
            write_image(dir / fn, frame_to_image(v, f));
            files.push_back(fn);
        }
        rows.push_back({{"name", name},
                        {"frames", files},
                        {"height", v.h()},
                        {"width", v.w()},
                        {"channels", v.c()}});
    }
    json manifest = {{"layout", {{"rows", videos.size()}, {"cols", videos[0].second.f()}}},
                     {"depth_mapping", "linear: -1 -> 0, +1 -> 255"},
                     {"rows", rows}};
    std::ofstream os(dir / "grid.json");
    if (!os) throw std::runtime_error("unwritable path: " + dir.string());
    os << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& c, const std::string& out) {
    const fs::path dir = prepare_run_dir("gen-data", c.raw, out);
    Dataset ds = generate_toy_dataset(c.data_n, c.data_seed, c.toy);
    save_dataset(dir / "dataset", ds);
    std::cout << dir.string() << "\n";
    return 0;
}

int cmd_train_depth(const RunConfig& c, const std::string& out, bool resume) {
    const fs::path dir = prepare_run_dir("train-depth", c.raw, out);
    const fs::path ckpt_path = dir / "depth.gdt";
    Dataset ds = load_input_dataset(c.path_dataset, "dataset");
    const NoiseSchedule sched = c.sched.make();

    std::vector<VideoTensor> videos;
    for (const auto& s : ds.samples)
        videos.push_back(replicate_channels(s.depth, c.model.in_channels));

    TrainState st;
    double prev_loss = 0.0;
    if (resume && fs::exists(ckpt_path)) {
        Checkpoint prev = load_checkpoint(ckpt_path);
        st.params = std::move(prev.params);
        st.step = prev.step;
        prev_loss = prev.extra.value("final_loss", 0.0);
        std::cerr << "resuming from step " << st.step << "\n";
    } else {
        st.params = init_params(c.model, c.init_seed);
    }
    const int remaining = std::max(0, c.stage1.steps - static_cast<int>(st.step));
    st = vdm_train(std::move(st), c.model, videos, sched, remaining, c.stage1.hp);

    Checkpoint ck{st.params, c.model, c.sched, st.step,
                  json{{"final_loss",
                        st.loss_history.empty() ? prev_loss : st.loss_history.back()}}};
    save_checkpoint(ckpt_path, ck);
    std::cout << ckpt_path.string() << "\n";
    return 0;
}

int cmd_build_denoised(const RunConfig& c, const std::string& out) {
    const fs::path dir = prepare_run_dir("build-denoised", c.raw, out);
    Dataset ds = load_input_dataset(c.path_dataset, "dataset");
    if (c.path_depth_ckpt.empty())
        throw std::runtime_error("missing upstream artifact: paths.depth_ckpt is not set");
    Checkpoint ck = load_checkpoint(c.path_depth_ckpt);
    const NoiseSchedule sched = ck.sched.make();
    const int t_star = c.t_star < 0 ? sched.T / 4 : c.t_star;
    Dataset den = build_denoised_depth(ds, ck.params, ck.model, sched, t_star, c.builder_seed);
    save_dataset(dir / "dataset", den);
    std::cout << (dir / "dataset").string() << "\n";
    return 0;
}

int cmd_train_vid2vid(const RunConfig& c, const std::string& out, bool resume) {
    const fs::path dir = prepare_run_dir("train-vid2vid", c.raw, out);
    const fs::path ckpt_path = dir / "dual.gdt";
    Dataset ds = load_input_dataset(c.path_dataset, "dataset");
    const NoiseSchedule sched = c.sched.make();

    std::optional<Dataset> den;
    if (c.use_denoised)
        den = load_input_dataset(c.path_denoised, "denoised");
    if (den && den->samples.size() != ds.samples.size())
        throw std::runtime_error("denoised dataset size does not match the raw dataset");

    std::vector<std::pair<VideoTensor, VideoTensor>> pairs;
    Rng mix_rng(c.init_seed ^ 0x6d697872ULL);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const bool take_den = den && mix_rng.uniform() < c.denoised_mix;
        pairs.emplace_back(ds.samples[i].rgb,
                           take_den ? den->samples[i].depth : ds.samples[i].depth);
    }

    DualConfig dual_cfg;
    dual_cfg.depth_cfg = c.model;
    dual_cfg.video_cfg = c.model;
    dual_cfg.video_cfg.conditioned = true;
    dual_cfg.validate();

    DualTrainState st;
    if (resume && fs::exists(ckpt_path)) {
        DualCheckpoint ck = load_dual_checkpoint(ckpt_path);
        st.params = std::move(ck.params);
        st.step = ck.step;
        std::cerr << "resuming from step " << st.step << "\n";
    } else {
        if (c.path_depth_ckpt.empty())
            throw std::runtime_error("missing upstream artifact: paths.depth_ckpt is not set");
        Checkpoint dck = load_checkpoint(c.path_depth_ckpt);
        if (dck.model.to_json() != dual_cfg.depth_cfg.to_json())
            throw std::runtime_error(
                "depth checkpoint architecture does not match the configured model");
        st.params.depth_branch = std::move(dck.params);
        st.params.video_branch = init_params(dual_cfg.video_cfg, c.init_seed + 2);
    }
    const int remaining = std::max(0, c.stage2.steps - static_cast<int>(st.step));
    st = vid2vid_train(std::move(st), dual_cfg, pairs, sched, c.guidance, remaining,
                       c.stage2.hp);

    DualCheckpoint ck{st.params, dual_cfg, c.sched, c.guidance, st.step};
    save_dual_checkpoint(ckpt_path, ck);
    std::cout << ckpt_path.string() << "\n";
    return 0;
}

int cmd_sample(const RunConfig& c, const std::string& out) {
    const fs::path dir = prepare_run_dir("sample", c.raw, out);
    if (c.path_depth_ckpt.empty() || c.path_dual_ckpt.empty())
        throw std::runtime_error(
            "missing upstream artifact: paths.depth_ckpt and paths.dual_ckpt are required");
    Checkpoint depth_ck = load_checkpoint(c.path_depth_ckpt);
    DualCheckpoint dual_ck = load_dual_checkpoint(c.path_dual_ckpt);

    auto videos = generate(depth_ck, dual_ck, c.sample_n, c.sample_omega, c.sample_seed);

    NamedTensors nt;
    std::vector<std::pair<std::string, VideoTensor>> rows;
    for (int i = 0; i < c.sample_n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "depth_%05d", i);
        nt.items.emplace_back(name, videos[i].first);
        rows.emplace_back(name, videos[i].first);
        std::snprintf(name, sizeof(name), "rgb_%05d", i);
        nt.items.emplace_back(name, videos[i].second);
        rows.emplace_back(name, videos[i].second);
    }
    nt.meta = {{"kind", "samples"}, {"n", c.sample_n}, {"omega", c.sample_omega},
               {"seed", c.sample_seed}};
    save_tensors(dir / "videos.gdt", nt);
    export_frames(rows, dir / "frames");
    std::cout << dir.string() << "\n";
    return 0;
}

std::vector<std::pair<VideoTensor, VideoTensor>> load_generated(const fs::path& gen) {
    // a sample run dir (videos.gdt inside) or a videos.gdt path
    fs::path p = gen;
    if (fs::is_directory(p)) p = p / "videos.gdt";
    NamedTensors nt = load_tensors(p);
    std::vector<std::pair<VideoTensor, VideoTensor>> out;
    const int n = nt.meta.at("n").get<int>();
    for (int i = 0; i < n; ++i) {
        char d[32], r[32];
        std::snprintf(d, sizeof(d), "depth_%05d", i);
        std::snprintf(r, sizeof(r), "rgb_%05d", i);
        out.emplace_back(nt.get(d), nt.get(r));
    }
    return out;
}

int cmd_evaluate(const RunConfig& c, const std::string& out, const std::string& real_path,
                 const std::string& gen_path) {
    json resolved = c.raw;
    resolved["__evaluate"] = {{"real", real_path}, {"gen", gen_path}};
    const fs::path dir = prepare_run_dir("evaluate", resolved, out);

    Dataset real = load_dataset(real_path);
    auto gen = load_generated(gen_path);
    if (gen.empty()) throw std::runtime_error("no generated videos in " + gen_path);

    std::vector<VideoTensor> real_rgb, gen_rgb;
    for (const auto& s : real.samples) real_rgb.push_back(s.rgb);
    for (const auto& g : gen) gen_rgb.push_back(g.second);

    const int d = std::min<int>(c.feature_dim,
                                static_cast<int>(std::min(real_rgb.size(), gen_rgb.size())) - 1);
    if (d < 1)
        throw std::runtime_error("evaluate: need at least 2 videos per side for fvd");
    const double score = fvd(real_rgb, gen_rgb, make_surrogate_feature_fn(c.feature_seed, d));

    double fidelity = 0;
    for (const auto& g : gen) fidelity += depth_fidelity(g.second, g.first);
    fidelity /= static_cast<double>(gen.size());

    json report = {{"fvd", score},
                   {"depth_fidelity", fidelity},
                   {"feature_dim", d},
                   {"feature_seed", c.feature_seed},
                   {"n_real", real_rgb.size()},
                   {"n_gen", gen_rgb.size()}};
    std::ofstream os(dir / "report.json");
    os << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_export_frames(const RunConfig& c, const std::string& out, const std::string& gen_path) {
    json resolved = c.raw;
    resolved["__export"] = {{"gen", gen_path}};
    const fs::path dir = prepare_run_dir("export-frames", resolved, out);
    auto gen = load_generated(gen_path);
    std::vector<std::pair<std::string, VideoTensor>> rows;
    for (std::size_t i = 0; i < gen.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "depth_%05zu", i);
        rows.emplace_back(name, gen[i].first);
        std::snprintf(name, sizeof(name), "rgb_%05zu", i);
        rows.emplace_back(name, gen[i].second);
    }
    export_frames(rows, dir / "frames");
    std::cout << (dir / "frames").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage depth->video diffusion pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_override, real_path, gen_path;
    bool resume = false;
    long long seed_flag = -1;
    int n_flag = -1, t_star_flag = -2, steps_flag = -1;
    double omega_flag = std::numeric_limits<double>::quiet_NaN();

    app.add_option("--config", config_path, "run config file (JSON)")->required();
    app.add_option("--seed", seed_flag, "override the command's seed");
    app.add_option("--out", out_override, "output root (default $GDVDM_RUN_ROOT or ./runs)");
    app.add_option("--n", n_flag, "override sample/dataset count");
    app.add_option("--omega", omega_flag, "override guidance weight");
    app.add_option("--t-star", t_star_flag, "override the denoised-builder noise level");
    app.add_option("--steps", steps_flag, "override the command's training steps");
    app.add_flag("--resume", resume, "resume training from the run's checkpoint");

    auto* c_gen = app.add_subcommand("gen-data", "generate the toy paired dataset");
    auto* c_td = app.add_subcommand("train-depth", "stage 1: unconditional depth model");
    auto* c_bd = app.add_subcommand("build-denoised", "denoise depth through the stage-1 model");
    auto* c_tv = app.add_subcommand("train-vid2vid", "stage 2: conditional video model");
    auto* c_sm = app.add_subcommand("sample", "generate depth then video end to end");
    auto* c_ev = app.add_subcommand("evaluate", "fvd + depth fidelity report");
    auto* c_ex = app.add_subcommand("export-frames", "write frame grids as 8-bit images");
    c_ev->add_option("--real", real_path, "real dataset directory")->required();
    c_ev->add_option("--gen", gen_path, "sample run directory or videos.gdt")->required();
    c_ex->add_option("--gen", gen_path, "sample run directory or videos.gdt")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        json raw;
        {
            std::ifstream is(config_path);
            if (!is) throw ConfigError("cannot open config file: " + config_path);
            try {
                is >> raw;
            } catch (const json::parse_error& e) {
                throw ConfigError("config is not valid JSON: " + std::string(e.what()));
            }
        }
        const std::string cmd = app.get_subcommands()[0]->get_name();

        // apply overrides into the raw config so the run id covers them
        auto set = [&raw](const char* sec, const char* key, json v) {
            raw[sec][key] = std::move(v);
        };
        if (seed_flag >= 0) {
            if (cmd == "gen-data") set("data", "seed", seed_flag);
            else if (cmd == "train-depth") set("stage1", "seed", seed_flag);
            else if (cmd == "train-vid2vid") set("stage2", "seed", seed_flag);
            else if (cmd == "build-denoised") set("builder", "seed", seed_flag);
            else set("sample", "seed", seed_flag);
        }
        if (n_flag >= 0) set(cmd == "gen-data" ? "data" : "sample", "n", n_flag);
        if (!std::isnan(omega_flag)) set("sample", "omega", omega_flag);
        if (t_star_flag >= -1) set("builder", "t_star", t_star_flag);
        if (steps_flag >= 0)
            set(cmd == "train-vid2vid" ? "stage2" : "stage1", "steps", steps_flag);

        RunConfig cfg = parse_config(raw);

        if (cmd == "gen-data") return cmd_gen_data(cfg, out_override);
        if (cmd == "train-depth") return cmd_train_depth(cfg, out_override, resume);
        if (cmd == "build-denoised") return cmd_build_denoised(cfg, out_override);
        if (cmd == "train-vid2vid") return cmd_train_vid2vid(cfg, out_override, resume);
        if (cmd == "sample") return cmd_sample(cfg, out_override);
        if (cmd == "evaluate") return cmd_evaluate(cfg, out_override, real_path, gen_path);
        if (cmd == "export-frames") return cmd_export_frames(cfg, out_override, gen_path);
        throw ConfigError("unknown command: " + cmd);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
