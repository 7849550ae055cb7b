#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gdvdm/rng.hpp"
#include "gdvdm/tensor.hpp"

namespace gdvdm {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// ".gdt" tensor container
//
// bytes 0-3   magic "GDT1"
// bytes 4-7   little-endian u32 header length L
// bytes 8..   UTF-8 JSON header: {"entries":[{"name","dtype":"f32","shape":[..]},...],
//             "meta":{...}} with entries in payload order
// payload     concatenated little-endian f32 blobs, no padding
// ---------------------------------------------------------------------------

struct NamedTensors {
    std::vector<std::pair<std::string, Tensor>> items;
    json meta = json::object();

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

void save_tensors(const std::filesystem::path& path, const NamedTensors& nt);
NamedTensors load_tensors(const std::filesystem::path& path);

void save_tensor(const std::filesystem::path& path, const Tensor& t,
                 const std::string& name = "tensor");
Tensor load_tensor(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct PairedSample {
    VideoTensor rgb;    // (F,H,W,3)
    VideoTensor depth;  // (F,H,W,1)
    json meta = json::object();
};

struct Dataset {
    std::vector<PairedSample> samples;
    json manifest = json::object();
};

struct ToyConfig {
    int frames = 4;
    int height = 16;
    int width = 16;
    int min_objects = 1;
    int max_objects = 3;
    int max_speed = 2;  // pixels per frame, per axis, integer

    json to_json() const;
    static ToyConfig from_json(const json& j);
};

// Depth convention: near = small value; background fixed at +0.9.
// Object colors are a fixed function of object depth; background red channel
// is kBgRed so RGB-side object masks can be recovered by thresholding red.
inline constexpr float kBgDepth = 0.9f;
inline constexpr float kBgRed = -0.8f;
inline constexpr float kDepthMaskThreshold = 0.45f;  // between object max and bg
inline constexpr float kRedMaskThreshold = -0.4f;

float object_red_for_depth(float depth);

Dataset generate_toy_dataset(int n, std::uint64_t seed, const ToyConfig& cfg);

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Frame-directory ingestion (binary PPM/PGM frames, lexicographic order)
// ---------------------------------------------------------------------------

VideoTensor load_frame_dir(const std::filesystem::path& dir, int F, int H, int W);

// 8-bit image I/O. `pixels` is row-major (H,W,C) with C=3 (PPM) or C=1 (PGM).
struct Image8 {
    int h = 0, w = 0, c = 0;
    std::vector<std::uint8_t> pixels;
};

void write_image(const std::filesystem::path& path, const Image8& img);
Image8 read_image(const std::filesystem::path& path);

// [-1,1] <-> 8-bit lattice, exact affine bijection on {0..255}
inline float from_u8(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }
inline std::uint8_t to_u8(float x) {
    float y = (x + 1.0f) * 127.5f;
    y = std::min(255.0f, std::max(0.0f, y));
    return static_cast<std::uint8_t>(y + 0.5f);
}

// Frame fi of a video as an 8-bit image (C=3 kept, C=1 kept single-channel).
Image8 frame_to_image(const VideoTensor& video, int fi);

}  // namespace gdvdm
