#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "deepisp/tensor.hpp"

namespace deepisp {

// Minimal PNG support: 8/16-bit, grayscale or RGB, non-interlaced. Raw dumps
// also go through PGM/PPM. http://www.libpng.org/pub/png/spec/1.2/
namespace pngio {

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void write_chunk(std::vector<uint8_t>& out, const char* type, const std::vector<uint8_t>& payload) {
    put_u32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = static_cast<uint32_t>(::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
    put_u32(out, crc);
}

inline int paeth(int a, int b, int c) {
    int p = a + b - c;
    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

}  // namespace pngio

/// Encodes H x W x {1,3} values in [0,1] as a PNG (bit_depth 8 or 16).
inline void write_png(const std::string& path, const Tensor& image, int bit_depth = 8) {
    require_image(image, "write_png");
    int channels = image.extent(2);
    if (channels != 1 && channels != 3)
        throw std::invalid_argument("write_png: only 1- or 3-channel images, got " + shape_str(image.shape()));
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");

    int h = image.extent(0), w = image.extent(1);
    int bytes_per_sample = bit_depth / 8;
    size_t stride = static_cast<size_t>(w) * channels * bytes_per_sample;
    double maxval = bit_depth == 8 ? 255.0 : 65535.0;

    std::vector<uint8_t> raw((stride + 1) * static_cast<size_t>(h));
    for (int y = 0; y < h; ++y) {
        uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
        row[0] = 0;  // filter: none
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                double v = std::min(1.0, std::max(0.0, image.at(y, x, c)));
                uint32_t q = static_cast<uint32_t>(std::lround(v * maxval));
                uint8_t* dst = row + 1 + (static_cast<size_t>(x) * channels + c) * bytes_per_sample;
                if (bit_depth == 8) {
                    dst[0] = static_cast<uint8_t>(q);
                } else {
                    dst[0] = static_cast<uint8_t>(q >> 8);
                    dst[1] = static_cast<uint8_t>(q & 0xff);
                }
            }
    }

    uLongf comp_bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(comp_bound);
    if (compress2(compressed.data(), &comp_bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw std::runtime_error("write_png: deflate failed for " + path);
    compressed.resize(comp_bound);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<uint8_t> ihdr;
    pngio::put_u32(ihdr, static_cast<uint32_t>(w));
    pngio::put_u32(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(static_cast<uint8_t>(bit_depth));
    ihdr.push_back(channels == 1 ? 0 : 2);  // gray or truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    pngio::write_chunk(out, "IHDR", ihdr);
    pngio::write_chunk(out, "IDAT", compressed);
    pngio::write_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_png: cannot open " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("write_png: write failed for " + path);
}

/// Decodes an 8/16-bit grayscale or RGB non-interlaced PNG to [0,1] values.
inline Tensor read_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_png: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
        throw std::runtime_error("read_png: not a PNG file: " + path);

    uint32_t w = 0, h = 0;
    int bit_depth = 0, color_type = -1;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= bytes.size()) {
        uint32_t len = pngio::get_u32(bytes.data() + pos);
        if (pos + 12 + len > bytes.size()) throw std::runtime_error("read_png: truncated chunk in " + path);
        std::string type(reinterpret_cast<const char*>(bytes.data() + pos + 4), 4);
        const uint8_t* payload = bytes.data() + pos + 8;
        if (type == "IHDR") {
            w = pngio::get_u32(payload);
            h = pngio::get_u32(payload + 4);
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[10] != 0 || payload[11] != 0 || payload[12] != 0)
                throw std::runtime_error("read_png: unsupported compression/filter/interlace in " + path);
        } else if (type == "IDAT") {
            idat.insert(idat.end(), payload, payload + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (w == 0 || h == 0) throw std::runtime_error("read_png: missing IHDR in " + path);
    if ((bit_depth != 8 && bit_depth != 16) || (color_type != 0 && color_type != 2))
        throw std::runtime_error("read_png: only 8/16-bit grayscale or RGB supported: " + path);

    int channels = color_type == 0 ? 1 : 3;
    int bps = bit_depth / 8;
    size_t stride = static_cast<size_t>(w) * channels * bps;
    std::vector<uint8_t> raw((stride + 1) * h);
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("read_png: inflate failed for " + path);

    // undo scanline filters in place
    int bpp = channels * bps;
    for (uint32_t y = 0; y < h; ++y) {
        uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
        uint8_t filter = row[0];
        uint8_t* cur = row + 1;
        const uint8_t* prev = y > 0 ? raw.data() + static_cast<size_t>(y - 1) * (stride + 1) + 1 : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            int a = i >= static_cast<size_t>(bpp) ? cur[i - static_cast<size_t>(bpp)] : 0;
            int b = prev ? prev[i] : 0;
            int c = (prev && i >= static_cast<size_t>(bpp)) ? prev[i - static_cast<size_t>(bpp)] : 0;
            int x = cur[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: x += pngio::paeth(a, b, c); break;
                default: throw std::runtime_error("read_png: bad filter type in " + path);
            }
            cur[i] = static_cast<uint8_t>(x);
        }
    }

    double maxval = bit_depth == 8 ? 255.0 : 65535.0;
    Tensor out({static_cast<int>(h), static_cast<int>(w), channels});
    for (uint32_t y = 0; y < h; ++y) {
        const uint8_t* row = raw.data() + static_cast<size_t>(y) * (stride + 1) + 1;
        for (uint32_t x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                const uint8_t* src = row + (static_cast<size_t>(x) * channels + c) * bps;
                uint32_t q = bit_depth == 8 ? src[0] : (static_cast<uint32_t>(src[0]) << 8) | src[1];
                out.at(static_cast<int>(y), static_cast<int>(x), c) = q / maxval;
            }
    }
    return out;
}

/// Binary PGM (P5, 1 channel) / PPM (P6, 3 channels); 16-bit is big-endian.
inline void write_pnm(const std::string& path, const Tensor& image, int bit_depth = 8) {
    require_image(image, "write_pnm");
    int channels = image.extent(2);
    if (channels != 1 && channels != 3)
        throw std::invalid_argument("write_pnm: only 1- or 3-channel images, got " + shape_str(image.shape()));
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_pnm: bit depth must be 8 or 16");
    int h = image.extent(0), w = image.extent(1);
    int maxval = bit_depth == 8 ? 255 : 65535;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_pnm: cannot open " + path);
    f << (channels == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n" << maxval << "\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                double v = std::min(1.0, std::max(0.0, image.at(y, x, c)));
                uint32_t q = static_cast<uint32_t>(std::lround(v * maxval));
                if (bit_depth == 16) f.put(static_cast<char>(q >> 8));
                f.put(static_cast<char>(q & 0xff));
            }
    if (!f) throw std::runtime_error("write_pnm: write failed for " + path);
}

inline Tensor read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_pnm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P5" && magic != "P6") throw std::runtime_error("read_pnm: unsupported format '" + magic + "' in " + path);
    auto next_int = [&]() {
        int v;
        f >> std::ws;
        while (f.peek() == '#') f.ignore(1 << 20, '\n'), f >> std::ws;
        if (!(f >> v)) throw std::runtime_error("read_pnm: malformed header in " + path);
        return v;
    };
    int w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255 && maxval != 65535) throw std::runtime_error("read_pnm: unsupported maxval in " + path);
    f.get();  // single whitespace after maxval
    int channels = magic == "P5" ? 1 : 3;
    Tensor out({h, w, channels});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                int q = f.get();
                if (maxval == 65535) q = (q << 8) | f.get();
                if (!f) throw std::runtime_error("read_pnm: truncated pixel data in " + path);
                out.at(y, x, c) = static_cast<double>(q) / maxval;
            }
    return out;
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline Tensor read_image(const std::string& path) {
    if (has_suffix(path, ".png")) return read_png(path);
    if (has_suffix(path, ".pgm") || has_suffix(path, ".ppm") || has_suffix(path, ".pnm")) return read_pnm(path);
    throw std::runtime_error("read_image: unsupported extension: " + path);
}

inline void write_image(const std::string& path, const Tensor& image, int bit_depth = 8) {
    if (has_suffix(path, ".png")) return write_png(path, image, bit_depth);
    if (has_suffix(path, ".pgm") || has_suffix(path, ".ppm") || has_suffix(path, ".pnm"))
        return write_pnm(path, image, bit_depth);
    throw std::runtime_error("write_image: unsupported extension: " + path);
}

}  // namespace deepisp
