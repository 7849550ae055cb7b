#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int code;
    std::string out;
    std::string err;
};

fs::path work_root() {
    static fs::path p = [] {
        auto d = fs::temp_directory_path() / "gdvdm_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

RunResult run_cli(const std::string& args) {
    const fs::path out = work_root() / "stdout.txt";
    const fs::path err = work_root() / "stderr.txt";
    const std::string cmd = std::string(GDVDM_CLI_PATH) + " " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int raw = std::system(cmd.c_str());
    auto slurp = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    };
    RunResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::string first_line(const std::string& s) {
    return s.substr(0, s.find('\n'));
}

json base_config() {
    return {
        {"data", {{"n", 4}, {"seed", 1}, {"toy", {{"frames", 2}, {"height", 8}, {"width", 8}}}}},
        {"schedule", {{"kind", "cosine"}, {"T", 4}}},
        {"model",
         {{"base_channels", 4},
          {"channel_mults", {1, 2}},
          {"blocks_per_resolution", 1},
          {"attn_head_dim", 4},
          {"in_channels", 3},
          {"out_channels", 3},
          {"frames", 2},
          {"height", 8},
          {"width", 8},
          {"time_embed_dim", 8},
          {"attn_scales", {1}}}},
        {"stage1", {{"steps", 2}, {"lr", 1e-3}, {"batch_size", 1}}},
        {"stage2", {{"steps", 2}, {"lr", 1e-3}, {"batch_size", 1}}},
        {"builder", {{"t_star", 1}}},
        {"sample", {{"n", 2}, {"seed", 3}}},
        {"metrics", {{"feature_dim", 2}}},
    };
}

fs::path write_config(const std::string& name, const json& j) {
    const fs::path p = work_root() / name;
    std::ofstream os(p);
    os << j.dump(2) << "\n";
    return p;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// every regular file under the directory, as a (relative path, bytes) map
std::map<std::string, std::string> dir_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            out[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
    return out;
}

}  // namespace

TEST_CASE("cli rejects bad invocations and bad configs") {
    CHECK(run_cli("gen-data").code == 1);  // --config is required
    CHECK(run_cli("--config /nonexistent.json gen-data").code == 1);

    auto cfg = base_config();
    CHECK(run_cli("--config " + write_config("ok.json", cfg).string() +
                  " frobnicate").code == 1);

    cfg["data"]["bogus"] = 1;
    auto r = run_cli("--config " + write_config("bad_key.json", cfg).string() + " gen-data");
    CHECK(r.code == 1);
    CHECK(r.err.find("data.bogus") != std::string::npos);

    auto mism = base_config();
    mism["model"]["height"] = 16;  // disagrees with data.toy
    CHECK(run_cli("--config " + write_config("mismatch.json", mism).string() +
                  " gen-data").code == 1);

    auto cond = base_config();
    cond["model"]["conditioned"] = true;
    CHECK(run_cli("--config " + write_config("cond.json", cond).string() +
                  " gen-data").code == 1);

    const fs::path bad_json = work_root() / "not_json.json";
    std::ofstream(bad_json) << "{ nope";
    CHECK(run_cli("--config " + bad_json.string() + " gen-data").code == 1);
}

TEST_CASE("gen-data: artifacts, rerun byte-identity, seed override") {
    const auto cfg_path = write_config("gen.json", base_config());
    const std::string out = (work_root() / "runs_gen").string();

    auto r1 = run_cli("--config " + cfg_path.string() + " --out " + out + " gen-data");
    REQUIRE(r1.code == 0);
    const fs::path dir = first_line(r1.out);
    CHECK(fs::exists(dir / "resolved_config.json"));
    CHECK(fs::exists(dir / "dataset" / "manifest.json"));
    CHECK(fs::exists(dir / "dataset" / "sample_00003.gdt"));

    const auto before = dir_bytes(dir);
    auto r2 = run_cli("--config " + cfg_path.string() + " --out " + out + " gen-data");
    REQUIRE(r2.code == 0);
    CHECK(first_line(r2.out) == dir.string());
    CHECK(dir_bytes(dir) == before);

    auto r3 = run_cli("--config " + cfg_path.string() + " --out " + out +
                      " --seed 99 gen-data");
    REQUIRE(r3.code == 0);
    CHECK(first_line(r3.out) != dir.string());  // override is part of the run id
    const json manifest = json::parse(read_bytes(fs::path(first_line(r3.out)) /
                                                 "dataset" / "manifest.json"));
    CHECK(manifest.at("seed") == 99);
}

TEST_CASE("full pipeline chain through the cli") {
    const std::string out = (work_root() / "runs_chain").string();
    auto cfg = base_config();

    auto r_gen = run_cli("--config " + write_config("c0.json", cfg).string() + " --out " + out +
                         " gen-data");
    REQUIRE(r_gen.code == 0);
    const std::string dataset = (fs::path(first_line(r_gen.out)) / "dataset").string();

    // train-depth needs paths.dataset; without it the run fails cleanly
    auto r_missing = run_cli("--config " + write_config("c0.json", cfg).string() + " --out " +
                             out + " train-depth");
    CHECK(r_missing.code == 2);
    CHECK(r_missing.err.find("paths.dataset") != std::string::npos);

    cfg["paths"]["dataset"] = dataset;
    auto r_td = run_cli("--config " + write_config("c1.json", cfg).string() + " --out " + out +
                        " train-depth");
    REQUIRE(r_td.code == 0);
    const std::string depth_ckpt = first_line(r_td.out);
    CHECK(fs::exists(depth_ckpt));

    // rerunning the finished run resumes at the target step and leaves it intact
    const auto ckpt_before = read_bytes(depth_ckpt);
    auto r_td2 = run_cli("--config " + write_config("c1.json", cfg).string() + " --out " + out +
                         " --resume train-depth");
    REQUIRE(r_td2.code == 0);
    CHECK(read_bytes(depth_ckpt) == ckpt_before);

    cfg["paths"]["depth_ckpt"] = depth_ckpt;
    auto r_bd = run_cli("--config " + write_config("c2.json", cfg).string() + " --out " + out +
                        " build-denoised");
    REQUIRE(r_bd.code == 0);
    const std::string denoised = first_line(r_bd.out);
    CHECK(json::parse(read_bytes(fs::path(denoised) / "manifest.json")).at("kind") ==
          "denoised_depth");

    cfg["paths"]["denoised"] = denoised;
    auto r_tv = run_cli("--config " + write_config("c3.json", cfg).string() + " --out " + out +
                        " train-vid2vid");
    REQUIRE(r_tv.code == 0);
    const std::string dual_ckpt = first_line(r_tv.out);
    CHECK(fs::exists(dual_ckpt));

    cfg["paths"]["dual_ckpt"] = dual_ckpt;
    const auto sample_cfg = write_config("c4.json", cfg);
    auto r_sm = run_cli("--config " + sample_cfg.string() + " --out " + out + " sample");
    REQUIRE(r_sm.code == 0);
    const fs::path sample_dir = first_line(r_sm.out);
    CHECK(fs::exists(sample_dir / "videos.gdt"));
    CHECK(fs::exists(sample_dir / "frames" / "grid.json"));
    CHECK(fs::exists(sample_dir / "frames" / "depth_00000_f00.pgm"));
    CHECK(fs::exists(sample_dir / "frames" / "rgb_00001_f01.ppm"));

    // sampling is deterministic end to end: rerun is byte-identical
    const auto sample_before = dir_bytes(sample_dir);
    auto r_sm2 = run_cli("--config " + sample_cfg.string() + " --out " + out + " sample");
    REQUIRE(r_sm2.code == 0);
    CHECK(dir_bytes(sample_dir) == sample_before);

    auto r_ev = run_cli("--config " + sample_cfg.string() + " --out " + out +
                        " evaluate --real " + dataset + " --gen " + sample_dir.string());
    REQUIRE(r_ev.code == 0);
    const json report = json::parse(r_ev.out);
    CHECK(report.contains("fvd"));
    CHECK(report.at("fvd").get<double>() >= 0.0);
    CHECK(report.at("depth_fidelity").get<double>() >= 0.0);
    CHECK(report.at("depth_fidelity").get<double>() <= 1.0);
    CHECK(report.at("n_real") == 4);
    CHECK(report.at("n_gen") == 2);

    auto r_ex = run_cli("--config " + sample_cfg.string() + " --out " + out +
                        " export-frames --gen " + sample_dir.string());
    REQUIRE(r_ex.code == 0);
    const fs::path frames = first_line(r_ex.out);
    CHECK(fs::exists(frames / "grid.json"));
    const json grid = json::parse(read_bytes(frames / "grid.json"));
    CHECK(grid.at("layout").at("rows") == 4);  // depth + rgb rows for 2 samples
    CHECK(grid.at("layout").at("cols") == 2);
}

TEST_CASE("flag overrides flow into the run config") {
    const std::string out = (work_root() / "runs_flags").string();
    auto cfg = base_config();

    auto r = run_cli("--config " + write_config("f0.json", cfg).string() + " --out " + out +
                     " --n 3 gen-data");
    REQUIRE(r.code == 0);
    const fs::path dir = first_line(r.out);
    const json resolved = json::parse(read_bytes(dir / "resolved_config.json"));
    CHECK(resolved.at("data").at("n") == 3);
    CHECK(fs::exists(dir / "dataset" / "sample_00002.gdt"));
    CHECK(!fs::exists(dir / "dataset" / "sample_00003.gdt"));
}
