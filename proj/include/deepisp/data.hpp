#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "deepisp/color.hpp"
#include "deepisp/image_io.hpp"
#include "deepisp/rng.hpp"
#include "deepisp/tensor.hpp"

namespace deepisp {

struct PairMeta {
    double exposure = 1.0;   // in (0,1]; 0.25 emulates the quarter-exposure low-light capture
    double sigma8 = 0.0;     // noise STD on the 8-bit scale
    std::string source = "synth";
};

/// Aligned (degraded raw, clean RGB) training example.
struct ImagePair {
    RawImage raw;
    Tensor target;  // H x W x 3 in [0,1]
    PairMeta meta;
    std::string name;

    int height() const { return raw.height(); }
    int width() const { return raw.width(); }
};

struct Dataset {
    std::vector<ImagePair> pairs;
    std::string split = "train";

    size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
};

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

/// Deterministic synthetic scene: smooth gradient background, random
/// ellipses/rectangles, band-limited texture, and one high-frequency stripe
/// band (the Moire-prone content demosaicing struggles with).
inline Tensor synth_scene(uint64_t seed, int h, int w) {
    if (h < 32 || w < 32 || h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("synth_scene: extents must be even and >= 32");
    Rng rng(hash_combine(seed, 0x7363656e65ULL));
    Tensor img({h, w, 3});

    // gradient background
    double theta = rng.uniform(0.0, 6.28318530717958648);
    double gx = std::cos(theta) / w, gy = std::sin(theta) / h;
    double base[3], slope[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = rng.uniform(0.35, 0.6);
        slope[c] = rng.uniform(-0.25, 0.25);
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double t = gx * x + gy * y;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = base[c] + slope[c] * t * 2.0;
        }

    // opaque shapes
    int shapes = 6 + rng.uniform_int(6);
    for (int s = 0; s < shapes; ++s) {
        bool ellipse = rng.coin();
        double cx = rng.uniform(0.1, 0.9) * w, cy = rng.uniform(0.1, 0.9) * h;
        double rx = rng.uniform(0.06, 0.25) * w, ry = rng.uniform(0.06, 0.25) * h;
        double col[3];
        for (int c = 0; c < 3; ++c) col[c] = rng.uniform(0.05, 0.95);
        int y0 = std::max(0, static_cast<int>(cy - ry)), y1 = std::min(h - 1, static_cast<int>(cy + ry));
        int x0 = std::max(0, static_cast<int>(cx - rx)), x1 = std::min(w - 1, static_cast<int>(cx + rx));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (ellipse) {
                    double dx = (x - cx) / rx, dy = (y - cy) / ry;
                    if (dx * dx + dy * dy > 1.0) continue;
                }
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
            }
    }

    // band-limited texture: a few low-frequency sinusoids
    int waves = 3;
    double fx[3], fy[3], ph[3], amp[3];
    for (int i = 0; i < waves; ++i) {
        fx[i] = rng.uniform(1.0, 4.0) * 6.28318530717958648 / w;
        fy[i] = rng.uniform(1.0, 4.0) * 6.28318530717958648 / h;
        ph[i] = rng.uniform(0.0, 6.28318530717958648);
        amp[i] = rng.uniform(0.02, 0.06);
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double t = 0.0;
            for (int i = 0; i < waves; ++i) t += amp[i] * std::sin(fx[i] * x + fy[i] * y + ph[i]);
            for (int c = 0; c < 3; ++c) img.at(y, x, c) += t;
        }

    // high-frequency stripe band, alternating near-black/near-white columns
    // or rows at single-pixel pitch
    bool vertical = rng.coin();
    int band = std::max(4, (vertical ? w : h) / 8);
    int start = rng.uniform_int((vertical ? w : h) - band);
    double lo = 0.02, hi = 0.98;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int along = vertical ? x : y;
            int across = vertical ? y : x;
            if (along < start || along >= start + band) continue;
            double v = (across % 2 == 0) ? hi : lo;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }

    for (int i = 0; i < img.size(); ++i) img[i] = std::min(1.0, std::max(0.0, img[i]));
    return img;
}

// ---------------------------------------------------------------------------
// degradation
// ---------------------------------------------------------------------------

/// Simulated capture: exposure-scaled mosaic plus additive Gaussian read
/// noise at sigma/255, clamped to [0,1]. Noise is seeded deterministically.
inline ImagePair degrade(const Tensor& clean, double exposure, double sigma8, BayerPattern pattern, uint64_t seed) {
    require_image(clean, "degrade", 3);
    if (exposure <= 0.0 || exposure > 1.0) throw std::invalid_argument("degrade: exposure must be in (0,1]");
    if (sigma8 < 0.0) throw std::invalid_argument("degrade: sigma must be nonnegative");

    Tensor scaled(clean.shape());
    for (int i = 0; i < clean.size(); ++i) scaled[i] = clean[i] * exposure;
    ImagePair pair;
    pair.raw = mosaic(scaled, pattern);
    if (sigma8 > 0.0) {
        Rng rng(hash_combine(seed, 0x6e6f697365ULL));
        double sigma = sigma8 / 255.0;
        for (int i = 0; i < pair.raw.data.size(); ++i)
            pair.raw.data[i] = std::min(1.0, std::max(0.0, pair.raw.data[i] + sigma * rng.gaussian()));
    }
    pair.target = clean;
    pair.meta.exposure = exposure;
    pair.meta.sigma8 = sigma8;
    return pair;
}

// ---------------------------------------------------------------------------
// patch sampling and augmentation
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor flip_image(const Tensor& img, bool hflip, bool vflip) {
    int h = img.extent(0), w = img.extent(1), c = img.extent(2);
    Tensor out(img.shape());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int sy = vflip ? h - 1 - y : y;
            int sx = hflip ? w - 1 - x : x;
            for (int ch = 0; ch < c; ++ch) out.at(y, x, ch) = img.at(sy, sx, ch);
        }
    return out;
}

}  // namespace detail

/// Aligned even-offset crop (preserving Bayer phase) with seed-determined
/// flips; the pattern tag tracks the flipped phase. Everything is a pure
/// function of the key, so replaying a run reproduces the example stream.
inline ImagePair sample_patch(const ImagePair& pair, int size, uint64_t key, bool allow_hflip, bool allow_vflip) {
    if (size < 2 || size % 2 != 0) throw std::invalid_argument("sample_patch: size must be even and >= 2");
    int h = pair.height(), w = pair.width();
    if (size > h || size > w)
        throw std::invalid_argument("sample_patch: size " + std::to_string(size) + " exceeds image " +
                                    std::to_string(h) + "x" + std::to_string(w));
    Rng rng(hash_combine(key, 0x7061746368ULL));
    int oy = 2 * rng.uniform_int((h - size) / 2 + 1);
    int ox = 2 * rng.uniform_int((w - size) / 2 + 1);
    bool hflip = allow_hflip && rng.coin();
    bool vflip = allow_vflip && rng.coin();

    ImagePair out;
    out.meta = pair.meta;
    out.name = pair.name;
    Tensor raw_crop({size, size, 1});
    Tensor tgt_crop({size, size, 3});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            raw_crop.at(y, x, 0) = pair.raw.data.at(oy + y, ox + x, 0);
            for (int c = 0; c < 3; ++c) tgt_crop.at(y, x, c) = pair.target.at(oy + y, ox + x, c);
        }
    BayerPattern pattern = pair.raw.pattern;
    if (hflip || vflip) {
        raw_crop = detail::flip_image(raw_crop, hflip, vflip);
        tgt_crop = detail::flip_image(tgt_crop, hflip, vflip);
        if (hflip) pattern = bayer_flip_h(pattern);
        if (vflip) pattern = bayer_flip_v(pattern);
    }
    out.raw = {std::move(raw_crop), pattern};
    out.target = std::move(tgt_crop);
    return out;
}

/// Deterministic synthetic dataset (count pairs of h x w scenes, sigma drawn
/// uniformly from [sigma_lo, sigma_hi] per pair).
inline Dataset make_synth_dataset(uint64_t seed, int count, int h, int w, double exposure, double sigma_lo,
                                  double sigma_hi, BayerPattern pattern = BayerPattern::RGGB) {
    Dataset ds;
    for (int i = 0; i < count; ++i) {
        uint64_t pair_seed = hash_combine(seed, static_cast<uint64_t>(i));
        Tensor clean = synth_scene(pair_seed, h, w);
        Rng rng(hash_combine(pair_seed, 0x7369676d61ULL));
        double sigma = sigma_lo + (sigma_hi - sigma_lo) * rng.uniform();
        ImagePair pair = degrade(clean, exposure, sigma, pattern, pair_seed);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d", i);
        pair.name = buf;
        ds.pairs.push_back(std::move(pair));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// on-disk layouts
// ---------------------------------------------------------------------------

enum class PairLayout { flat, msr, s7isp };

inline PairLayout layout_parse(const std::string& s) {
    if (s == "flat") return PairLayout::flat;
    if (s == "msr") return PairLayout::msr;
    if (s == "s7isp") return PairLayout::s7isp;
    throw std::invalid_argument("unknown dataset layout '" + s + "' (expected flat/msr/s7isp)");
}

inline PairMeta read_meta_file(const std::string& path, BayerPattern* pattern) {
    PairMeta meta;
    std::ifstream f(path);
    std::string line;
    while (std::getline(f, line)) {
        size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "pattern" && pattern) *pattern = bayer_parse(value);
        else if (key == "exposure") meta.exposure = std::stod(value);
        else if (key == "sigma") meta.sigma8 = std::stod(value);
        else if (key == "source") meta.source = value;
    }
    return meta;
}

inline void write_meta_file(const std::string& path, const PairMeta& meta, BayerPattern pattern) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write metadata file " + path);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "pattern=%s\nexposure=%.17g\nsigma=%.17g\nsource=%s\n",
                  bayer_name(pattern).c_str(), meta.exposure, meta.sigma8, meta.source.c_str());
    f << buf;
}

/// Writes one pair in the flat layout: NAME_input.png (16-bit raw),
/// NAME_target.png (16-bit RGB), NAME_meta.txt.
inline void save_pair_flat(const std::string& dir, const ImagePair& pair) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::string stem = (fs::path(dir) / pair.name).string();
    write_png(stem + "_input.png", pair.raw.data, 16);
    write_png(stem + "_target.png", pair.target, 16);
    write_meta_file(stem + "_meta.txt", pair.meta, pair.raw.pattern);
}

namespace detail {

inline ImagePair load_one_pair(const std::string& input_path, const std::string& target_path,
                               const std::string& meta_path, const std::string& name, const PairMeta& defaults) {
    ImagePair pair;
    pair.name = name;
    BayerPattern pattern = BayerPattern::RGGB;
    pair.meta = defaults;
    if (!meta_path.empty() && std::filesystem::exists(meta_path)) pair.meta = read_meta_file(meta_path, &pattern);
    if (pair.meta.exposure <= 0.0 || pair.meta.exposure > 1.0)
        throw std::runtime_error("load_pair_dir: exposure must be in (0,1] for " + name);

    Tensor input = read_image(input_path);
    if (input.extent(2) == 1) {
        pair.raw = {std::move(input), pattern};
    } else {
        // mosaiced-but-stored-as-RGB input (each pixel's sampled channel holds
        // the value); re-sampling through the CFA recovers the raw plane
        pair.raw = mosaic(input, pattern);
    }
    pair.target = read_image(target_path);
    if (pair.target.extent(2) != 3)
        throw std::runtime_error("load_pair_dir: target must be RGB: " + target_path);
    if (pair.target.extent(0) != pair.raw.height() || pair.target.extent(1) != pair.raw.width())
        throw std::runtime_error("load_pair_dir: input/target extent mismatch for " + name);
    return pair;
}

}  // namespace detail

/// Enumerates pairs under the given layout, in lexicographic filename order.
/// Missing counterpart files are skipped with a warning; unreadable files
/// raise an error naming the path.
inline Dataset load_pair_dir(const std::string& root, PairLayout layout,
                             std::vector<std::string>* warnings = nullptr) {
    namespace fs = std::filesystem;
    auto warn = [&](const std::string& msg) {
        if (warnings) warnings->push_back(msg);
    };
    if (!fs::exists(root)) throw std::runtime_error("load_pair_dir: no such directory: " + root);

    Dataset ds;
    auto sorted_entries = [](const std::string& dir) {
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(dir)) names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        return names;
    };

    if (layout == PairLayout::flat) {
        const std::string tag = "_input";
        for (const std::string& fname : sorted_entries(root)) {
            std::string stem = fs::path(fname).stem().string();
            std::string ext = fs::path(fname).extension().string();
            if (stem.size() <= tag.size() || stem.compare(stem.size() - tag.size(), tag.size(), tag) != 0) continue;
            std::string name = stem.substr(0, stem.size() - tag.size());
            std::string input_path = (fs::path(root) / fname).string();
            std::string target_path = (fs::path(root) / (name + "_target" + ext)).string();
            std::string meta_path = (fs::path(root) / (name + "_meta.txt")).string();
            if (!fs::exists(target_path)) {
                warn("skipping " + name + ": missing target " + target_path);
                continue;
            }
            ds.pairs.push_back(detail::load_one_pair(input_path, target_path, meta_path, name, PairMeta{}));
        }
    } else if (layout == PairLayout::msr) {
        // <root>/input/NAME.png + <root>/groundtruth/NAME.png
        std::string input_dir = (fs::path(root) / "input").string();
        std::string gt_dir = (fs::path(root) / "groundtruth").string();
        if (!fs::exists(input_dir) || !fs::exists(gt_dir))
            throw std::runtime_error("load_pair_dir: msr layout needs input/ and groundtruth/ under " + root);
        for (const std::string& fname : sorted_entries(input_dir)) {
            std::string target_path = (fs::path(gt_dir) / fname).string();
            if (!fs::exists(target_path)) {
                warn("skipping " + fname + ": missing groundtruth counterpart");
                continue;
            }
            PairMeta defaults;
            defaults.source = "msr";
            ds.pairs.push_back(detail::load_one_pair((fs::path(input_dir) / fname).string(), target_path, "",
                                                     fs::path(fname).stem().string(), defaults));
        }
    } else {
        // <root>/<scene>/short_exposure.png + medium_exposure.png
        for (const std::string& scene : sorted_entries(root)) {
            std::string scene_dir = (fs::path(root) / scene).string();
            if (!fs::is_directory(scene_dir)) continue;
            std::string input_path, target_path;
            for (const char* ext : {".png", ".ppm", ".pgm"}) {
                std::string cand = (fs::path(scene_dir) / ("short_exposure" + std::string(ext))).string();
                if (input_path.empty() && fs::exists(cand)) input_path = cand;
                cand = (fs::path(scene_dir) / ("medium_exposure" + std::string(ext))).string();
                if (target_path.empty() && fs::exists(cand)) target_path = cand;
            }
            if (input_path.empty() || target_path.empty()) {
                warn("skipping scene " + scene + ": missing short/medium exposure file");
                continue;
            }
            PairMeta defaults;
            defaults.source = "s7isp";
            defaults.exposure = 0.25;  // quarter-exposure capture protocol
            std::string meta_path = (fs::path(scene_dir) / "meta.txt").string();
            ds.pairs.push_back(detail::load_one_pair(input_path, target_path, meta_path, scene, defaults));
        }
    }
    if (ds.pairs.empty()) warn("load_pair_dir: no pairs found under " + root);
    return ds;
}

}  // namespace deepisp
