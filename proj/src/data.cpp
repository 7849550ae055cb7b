#include "gdvdm/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace gdvdm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// .gdt container
// ---------------------------------------------------------------------------

const Tensor& NamedTensors::get(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return t;
    throw std::runtime_error("NamedTensors: missing entry '" + name + "'");
}

bool NamedTensors::has(const std::string& name) const {
    for (const auto& [n, t] : items)
        if (n == name) return true;
    return false;
}

static void write_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

static std::uint32_t read_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void save_tensors(const fs::path& path, const NamedTensors& nt) {
    json header;
    json entries = json::array();
    for (const auto& [name, t] : nt.items)
        entries.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape}});
    header["entries"] = entries;
    if (!nt.meta.empty()) header["meta"] = nt.meta;
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    os.write("GDT1", 4);
    write_u32_le(os, static_cast<std::uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    static_assert(sizeof(float) == 4);
    for (const auto& [name, t] : nt.items)
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * 4));
    if (!os) throw std::runtime_error("write failed: " + path.string());
}

NamedTensors load_tensors(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GDT1", 4) != 0)
        throw std::runtime_error("bad magic / version mismatch: " + path.string());
    const std::uint32_t hlen = read_u32_le(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    if (!is) throw std::runtime_error("truncated header: " + path.string());
    json header = json::parse(hs);

    NamedTensors nt;
    if (header.contains("meta")) nt.meta = header["meta"];
    for (const auto& e : header.at("entries")) {
        Tensor t;
        t.shape = e.at("shape").get<std::vector<int>>();
        if (e.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("unsupported dtype in " + path.string());
        const std::size_t n = Tensor::numel_of(t.shape);
        t.v.resize(n);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * 4));
        if (!is)
            throw std::runtime_error("payload/header length disagreement in " + path.string() +
                                     " at entry '" + e.at("name").get<std::string>() + "'");
        nt.items.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    // no trailing bytes allowed
    is.peek();
    if (!is.eof()) throw std::runtime_error("trailing bytes after payload in " + path.string());
    return nt;
}

void save_tensor(const fs::path& path, const Tensor& t, const std::string& name) {
    NamedTensors nt;
    nt.items.emplace_back(name, t);
    save_tensors(path, nt);
}

Tensor load_tensor(const fs::path& path) {
    NamedTensors nt = load_tensors(path);
    if (nt.items.size() != 1)
        throw std::runtime_error("expected a single tensor in " + path.string());
    return nt.items[0].second;
}

// ---------------------------------------------------------------------------
// Toy dataset
// ---------------------------------------------------------------------------

json ToyConfig::to_json() const {
    return {{"frames", frames},   {"height", height},
            {"width", width},     {"min_objects", min_objects},
            {"max_objects", max_objects}, {"max_speed", max_speed}};
}

ToyConfig ToyConfig::from_json(const json& j) {
    ToyConfig c;
    c.frames = j.at("frames").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.min_objects = j.value("min_objects", 1);
    c.max_objects = j.value("max_objects", 3);
    c.max_speed = j.value("max_speed", 2);
    return c;
}

float object_red_for_depth(float depth) {
    // depth in [-0.9, 0.4] maps to red in [0.2, 1.0], far from kBgRed
    float r = 0.2f + 0.8f * (0.4f - depth) / 1.3f;
    return std::min(1.0f, std::max(0.2f, r));
}

namespace {

struct ToyObject {
    float depth;
    int size_h, size_w;
    int start_y, start_x;
    int vel_y, vel_x;
};

PairedSample make_sample(std::uint64_t seed, std::uint64_t index, const ToyConfig& cfg) {
    Rng rng = Rng::derive(seed, index);
    const int F = cfg.frames, H = cfg.height, W = cfg.width;

    PairedSample s;
    s.rgb = VideoTensor({F, H, W, 3});
    s.depth = VideoTensor({F, H, W, 1});

    // static layered background: 4 horizontal bands in green/blue, red fixed
    for (int f = 0; f < F; ++f)
        for (int y = 0; y < H; ++y) {
            const int band = (y * 4) / H;
            const float g = -0.6f + 0.25f * static_cast<float>(band);
            const float b = -0.1f - 0.15f * static_cast<float>(band % 2);
            for (int x = 0; x < W; ++x) {
                s.rgb.at4(f, y, x, 0) = kBgRed;
                s.rgb.at4(f, y, x, 1) = g;
                s.rgb.at4(f, y, x, 2) = b;
                s.depth.at4(f, y, x, 0) = kBgDepth;
            }
        }

    const int n_obj =
        static_cast<int>(rng.uniform_int(cfg.min_objects, cfg.max_objects));
    std::vector<ToyObject> objs;
    for (int j = 0; j < n_obj; ++j) {
        ToyObject o;
        o.depth = static_cast<float>(-0.9 + 1.3 * rng.uniform());  // in [-0.9, 0.4)
        const int smin = std::max(2, H / 6);
        const int smax = std::max(smin + 1, H / 3);
        o.size_h = static_cast<int>(rng.uniform_int(smin, smax));
        o.size_w = static_cast<int>(rng.uniform_int(smin, smax));
        o.start_y = static_cast<int>(rng.uniform_int(0, std::max(0, H - o.size_h)));
        o.start_x = static_cast<int>(rng.uniform_int(0, std::max(0, W - o.size_w)));
        o.vel_y = static_cast<int>(rng.uniform_int(-cfg.max_speed, cfg.max_speed));
        o.vel_x = static_cast<int>(rng.uniform_int(-cfg.max_speed, cfg.max_speed));
        objs.push_back(o);
    }
    // painter order: far first, near last
    std::stable_sort(objs.begin(), objs.end(),
                     [](const ToyObject& a, const ToyObject& b) { return a.depth > b.depth; });

    json meta_objs = json::array();
    for (const auto& o : objs) {
        for (int f = 0; f < F; ++f) {
            const int oy = o.start_y + o.vel_y * f;
            const int ox = o.start_x + o.vel_x * f;
            const int y0 = std::max(0, oy), y1 = std::min(H, oy + o.size_h);
            const int x0 = std::max(0, ox), x1 = std::min(W, ox + o.size_w);
            const float red = object_red_for_depth(o.depth);
            const float green = 0.6f - 0.5f * (o.depth + 0.9f) / 1.3f;
            const float blue = o.depth;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) {
                    s.rgb.at4(f, y, x, 0) = red;
                    s.rgb.at4(f, y, x, 1) = green;
                    s.rgb.at4(f, y, x, 2) = blue;
                    s.depth.at4(f, y, x, 0) = o.depth;
                }
        }
        meta_objs.push_back({{"depth", o.depth},
                             {"size", {o.size_h, o.size_w}},
                             {"start", {o.start_y, o.start_x}},
                             {"vel", {o.vel_y, o.vel_x}}});
    }
    s.meta = {{"seed", seed}, {"index", index}, {"objects", meta_objs}};
    return s;
}

}  // namespace

Dataset generate_toy_dataset(int n, std::uint64_t seed, const ToyConfig& cfg) {
    if (n < 1) throw std::invalid_argument("generate_toy_dataset: n must be >= 1");
    if (cfg.frames < 1 || cfg.height < 6 || cfg.width < 6)
        throw std::invalid_argument("generate_toy_dataset: degenerate dimensions");
    Dataset ds;
    ds.samples.resize(n);
    // independent derived seeds: parallel generation equals serial bit-for-bit
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) ds.samples[i] = make_sample(seed, i, cfg);
    ds.manifest = {{"format_version", 1},
                   {"kind", "toy"},
                   {"seed", seed},
                   {"count", n},
                   {"cfg", cfg.to_json()}};
    return ds;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
    fs::create_directories(dir);
    {
        std::ofstream os(dir / "manifest.json");
        os << ds.manifest.dump(2) << "\n";
    }
    char name[64];
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        std::snprintf(name, sizeof(name), "sample_%05zu.gdt", i);
        NamedTensors nt;
        nt.items.emplace_back("rgb", ds.samples[i].rgb);
        nt.items.emplace_back("depth", ds.samples[i].depth);
        nt.meta = ds.samples[i].meta;
        save_tensors(dir / name, nt);
    }
}

Dataset load_dataset(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("dataset dir missing: " + dir.string());
    Dataset ds;
    {
        std::ifstream is(dir / "manifest.json");
        if (!is) throw std::runtime_error("dataset manifest missing in " + dir.string());
        is >> ds.manifest;
    }
    const int n = ds.manifest.at("count").get<int>();
    char name[64];
    for (int i = 0; i < n; ++i) {
        std::snprintf(name, sizeof(name), "sample_%05d.gdt", i);
        NamedTensors nt = load_tensors(dir / name);
        PairedSample s;
        s.rgb = nt.get("rgb");
        s.depth = nt.get("depth");
        s.meta = nt.meta;
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw std::runtime_error("empty dataset in " + dir.string());
    return ds;
}

// ---------------------------------------------------------------------------
// PPM/PGM
// ---------------------------------------------------------------------------

void write_image(const fs::path& path, const Image8& img) {
    if (img.c != 1 && img.c != 3) throw std::invalid_argument("image channels must be 1 or 3");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path.string());
    os << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
}

Image8 read_image(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path.string());
    std::string magic;
    is >> magic;
    Image8 img;
    if (magic == "P6")
        img.c = 3;
    else if (magic == "P5")
        img.c = 1;
    else
        throw std::runtime_error("unsupported image format (need binary PPM/PGM): " +
                                 path.string());
    int maxval;
    is >> img.w >> img.h >> maxval;
    if (!is || maxval != 255 || img.w < 1 || img.h < 1)
        throw std::runtime_error("undecodable image header: " + path.string());
    is.get();  // single whitespace after maxval
    img.pixels.resize(static_cast<std::size_t>(img.h) * img.w * img.c);
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw std::runtime_error("truncated image payload: " + path.string());
    return img;
}

Image8 frame_to_image(const VideoTensor& video, int fi) {
    Image8 img;
    img.h = video.h();
    img.w = video.w();
    img.c = video.c();
    if (img.c != 1 && img.c != 3)
        throw std::invalid_argument("frame_to_image: channels must be 1 or 3");
    img.pixels.resize(static_cast<std::size_t>(img.h) * img.w * img.c);
    std::size_t k = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) img.pixels[k++] = to_u8(video.at4(fi, y, x, c));
    return img;
}

namespace {

// bilinear, half-pixel centers
float sample_bilinear(const Image8& img, float y, float x, int c) {
    const int y0 = std::max(0, std::min(img.h - 1, static_cast<int>(std::floor(y))));
    const int x0 = std::max(0, std::min(img.w - 1, static_cast<int>(std::floor(x))));
    const int y1 = std::min(img.h - 1, y0 + 1);
    const int x1 = std::min(img.w - 1, x0 + 1);
    const float fy = std::max(0.0f, std::min(1.0f, y - static_cast<float>(y0)));
    const float fx = std::max(0.0f, std::min(1.0f, x - static_cast<float>(x0)));
    auto px = [&](int yy, int xx) {
        return static_cast<float>(
            img.pixels[(static_cast<std::size_t>(yy) * img.w + xx) * img.c + c]);
    };
    const float top = px(y0, x0) * (1 - fx) + px(y0, x1) * fx;
    const float bot = px(y1, x0) * (1 - fx) + px(y1, x1) * fx;
    return top * (1 - fy) + bot * fy;
}

}  // namespace

VideoTensor load_frame_dir(const fs::path& dir, int F, int H, int W) {
    if (!fs::is_directory(dir)) throw std::runtime_error("frame directory missing: " + dir.string());
    std::vector<fs::path> frames;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension().string();
        if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) frames.push_back(e.path());
    }
    std::sort(frames.begin(), frames.end());
    if (static_cast<int>(frames.size()) < F)
        throw std::runtime_error("frame directory " + dir.string() + " holds " +
                                 std::to_string(frames.size()) + " frames, need " +
                                 std::to_string(F));
    VideoTensor out;
    for (int f = 0; f < F; ++f) {
        Image8 img;
        try {
            img = read_image(frames[f]);
        } catch (const std::exception& e) {
            throw std::runtime_error("frame " + std::to_string(f) + ": " + e.what());
        }
        if (f == 0) out = VideoTensor({F, H, W, img.c});
        if (img.c != out.c())
            throw std::runtime_error("frame " + std::to_string(f) + ": channel count changed");
        const float sy = static_cast<float>(img.h) / H;
        const float sx = static_cast<float>(img.w) / W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const float srcy = (y + 0.5f) * sy - 0.5f;
                const float srcx = (x + 0.5f) * sx - 0.5f;
                for (int c = 0; c < out.c(); ++c)
                    out.at4(f, y, x, c) =
                        sample_bilinear(img, srcy, srcx, c) / 127.5f - 1.0f;
            }
    }
    return out;
}

}  // namespace gdvdm
