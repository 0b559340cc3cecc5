#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "deepisp/ops.hpp"
#include "deepisp/tape.hpp"
#include "deepisp/tensor.hpp"

namespace deepisp {

// ---------------------------------------------------------------------------
// Bayer CFA
// ---------------------------------------------------------------------------

enum class BayerPattern { RGGB, GRBG, GBRG, BGGR };

/// Channel index (0=R,1=G,2=B) sampled at pixel (y,x) under the pattern.
inline int bayer_channel_at(BayerPattern p, int y, int x) {
    static constexpr int cell[4][4] = {
        {0, 1, 1, 2},  // RGGB
        {1, 0, 2, 1},  // GRBG
        {1, 2, 0, 1},  // GBRG
        {2, 1, 1, 0},  // BGGR
    };
    return cell[static_cast<int>(p)][(y & 1) * 2 + (x & 1)];
}

/// Pattern seen after mirroring the image horizontally (even width).
inline BayerPattern bayer_flip_h(BayerPattern p) {
    switch (p) {
        case BayerPattern::RGGB: return BayerPattern::GRBG;
        case BayerPattern::GRBG: return BayerPattern::RGGB;
        case BayerPattern::GBRG: return BayerPattern::BGGR;
        case BayerPattern::BGGR: return BayerPattern::GBRG;
    }
    return p;
}

/// Pattern seen after mirroring the image vertically (even height).
inline BayerPattern bayer_flip_v(BayerPattern p) {
    switch (p) {
        case BayerPattern::RGGB: return BayerPattern::GBRG;
        case BayerPattern::GBRG: return BayerPattern::RGGB;
        case BayerPattern::GRBG: return BayerPattern::BGGR;
        case BayerPattern::BGGR: return BayerPattern::GRBG;
    }
    return p;
}

inline std::string bayer_name(BayerPattern p) {
    switch (p) {
        case BayerPattern::RGGB: return "RGGB";
        case BayerPattern::GRBG: return "GRBG";
        case BayerPattern::GBRG: return "GBRG";
        case BayerPattern::BGGR: return "BGGR";
    }
    return "RGGB";
}

inline BayerPattern bayer_parse(const std::string& s) {
    if (s == "RGGB") return BayerPattern::RGGB;
    if (s == "GRBG") return BayerPattern::GRBG;
    if (s == "GBRG") return BayerPattern::GBRG;
    if (s == "BGGR") return BayerPattern::BGGR;
    throw std::invalid_argument("unknown Bayer pattern '" + s + "' (expected RGGB/GRBG/GBRG/BGGR)");
}

/// Single-channel CFA-sampled image, values in [0,1], even extents.
struct RawImage {
    Tensor data;  // H x W x 1
    BayerPattern pattern = BayerPattern::RGGB;

    int height() const { return data.extent(0); }
    int width() const { return data.extent(1); }
};

/// Samples an RGB image through the CFA.
inline RawImage mosaic(const Tensor& rgb, BayerPattern pattern) {
    require_image(rgb, "mosaic", 3);
    int h = rgb.extent(0), w = rgb.extent(1);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("mosaic: extents must be even, got " + shape_str(rgb.shape()));
    RawImage out{Tensor({h, w, 1}), pattern};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.data.at(y, x, 0) = rgb.at(y, x, bayer_channel_at(pattern, y, x));
    return out;
}

/// Fills missing channels by averaging the nearest sampled neighbors of that
/// channel: 2 along a row/column for the near sites, 4 in a cross for G at
/// R/B sites, 4 diagonals for the opposite color. Borders reflect.
inline Tensor bilinear_demosaic(const RawImage& raw) {
    require_image(raw.data, "bilinear_demosaic", 1);
    int h = raw.height(), w = raw.width();
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("bilinear_demosaic: extents must be even, got " + shape_str(raw.data.shape()));
    BayerPattern p = raw.pattern;
    auto sample = [&](int y, int x) {
        return raw.data.at(detail::reflect_index(y, h), detail::reflect_index(x, w), 0);
    };
    Tensor out({h, w, 3});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int own = bayer_channel_at(p, y, x);
            int horiz = bayer_channel_at(p, y, x + 1);
            int vert = bayer_channel_at(p, y + 1, x);
            for (int c = 0; c < 3; ++c) {
                double v;
                if (c == own) {
                    v = raw.data.at(y, x, 0);
                } else if (own != 1 && c == 1) {
                    // G at an R/B site: 4-neighbor cross
                    v = 0.25 * (sample(y - 1, x) + sample(y + 1, x) + sample(y, x - 1) + sample(y, x + 1));
                } else if (c == horiz) {
                    v = 0.5 * (sample(y, x - 1) + sample(y, x + 1));
                } else if (c == vert) {
                    v = 0.5 * (sample(y - 1, x) + sample(y + 1, x));
                } else {
                    // opposite color at an R/B site: 4 diagonals
                    v = 0.25 * (sample(y - 1, x - 1) + sample(y - 1, x + 1) + sample(y + 1, x - 1) +
                                sample(y + 1, x + 1));
                }
                out.at(y, x, c) = v;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// sRGB -> CIELAB (D65)
// ---------------------------------------------------------------------------

namespace srgb {

// sRGB -> XYZ matrix; the white point is taken as the exact row sums so that
// neutral grays land on a = b = 0.
constexpr double M[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};
constexpr double WHITE_X = M[0][0] + M[0][1] + M[0][2];
constexpr double WHITE_Y = M[1][0] + M[1][1] + M[1][2];
constexpr double WHITE_Z = M[2][0] + M[2][1] + M[2][2];

// The linear segment extends naturally below zero, and the power branch is
// finite above one, so the conversion is total: out-of-range values fed by
// the training graph produce finite Lab values and finite gradients instead
// of NaNs or dead pixels.
inline double gamma_expand(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }

inline double gamma_expand_deriv(double c) {
    return c <= 0.04045 ? 1.0 / 12.92 : (2.4 / 1.055) * std::pow((c + 0.055) / 1.055, 1.4);
}

inline double gamma_encode(double c) {
    c = std::min(1.0, std::max(0.0, c));
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

// CIE f(); C1-continuous across the knee (the slopes match at delta^3)
constexpr double DELTA = 6.0 / 29.0;
constexpr double DELTA3 = DELTA * DELTA * DELTA;

inline double lab_f(double t) { return t > DELTA3 ? std::cbrt(t) : t / (3.0 * DELTA * DELTA) + 4.0 / 29.0; }

inline double lab_f_deriv(double t) {
    if (t > DELTA3) {
        double c = std::cbrt(t);
        return 1.0 / (3.0 * c * c);
    }
    return 1.0 / (3.0 * DELTA * DELTA);
}

}  // namespace srgb

/// One pixel sRGB [0,1] -> Lab (the conversion extends smoothly outside the
/// nominal range; see the gamma notes above). When jac is non-null, also
/// writes the 3x3 Jacobian d(L,a,b)/d(r,g,b), row-major.
inline std::array<double, 3> rgb_pixel_to_lab(const double* rgb, double* jac = nullptr) {
    using namespace srgb;
    double lin[3], dlin[3];
    for (int i = 0; i < 3; ++i) {
        lin[i] = gamma_expand(rgb[i]);
        if (jac) dlin[i] = gamma_expand_deriv(rgb[i]);
    }
    double xyz[3] = {0, 0, 0};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) xyz[i] += M[i][j] * lin[j];
    const double white[3] = {WHITE_X, WHITE_Y, WHITE_Z};
    double fv[3], dfv[3];
    for (int i = 0; i < 3; ++i) {
        double t = xyz[i] / white[i];
        fv[i] = lab_f(t);
        if (jac) dfv[i] = lab_f_deriv(t) / white[i];
    }
    std::array<double, 3> lab = {116.0 * fv[1] - 16.0, 500.0 * (fv[0] - fv[1]), 200.0 * (fv[1] - fv[2])};
    if (jac) {
        // d(lab_i)/d(rgb_j) = sum_k d(lab_i)/d(f_k) * dfv_k * M[k][j] * dlin_j
        const double dlab_df[3][3] = {{0.0, 116.0, 0.0}, {500.0, -500.0, 0.0}, {0.0, 200.0, -200.0}};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += dlab_df[i][k] * dfv[k] * M[k][j];
                jac[i * 3 + j] = s * dlin[j];
            }
    }
    return lab;
}

/// Image-level sRGB -> CIELAB. Inputs are clamped to [0,1] first.
inline Tensor rgb_to_lab(const Tensor& rgb) {
    require_image(rgb, "rgb_to_lab", 3);
    Tensor out(rgb.shape());
    int n = rgb.extent(0) * rgb.extent(1);
    for (int p = 0; p < n; ++p) {
        auto lab = rgb_pixel_to_lab(rgb.data() + static_cast<size_t>(p) * 3);
        double* o = out.data() + static_cast<size_t>(p) * 3;
        o[0] = lab[0];
        o[1] = lab[1];
        o[2] = lab[2];
    }
    return out;
}

/// Differentiable Lab conversion for the loss graph.
inline Value rgb_to_lab_node(Tape& t, Value rgb) {
    const Tensor& tin = t.value(rgb);
    require_image(tin, "rgb_to_lab", 3);
    return t.record(rgb_to_lab(tin), {rgb}, [](const BackwardCtx& c) {
        const Tensor& in = *c.inputs[0];
        Tensor& g = *c.input_grads[0];
        int n = in.extent(0) * in.extent(1);
        for (int p = 0; p < n; ++p) {
            const double* px = in.data() + static_cast<size_t>(p) * 3;
            double jac[9];
            rgb_pixel_to_lab(px, jac);
            const double* up = c.upstream.data() + static_cast<size_t>(p) * 3;
            double* gp = g.data() + static_cast<size_t>(p) * 3;
            for (int j = 0; j < 3; ++j)
                gp[j] += jac[0 * 3 + j] * up[0] + jac[1 * 3 + j] * up[1] + jac[2 * 3 + j] * up[2];
        }
    });
}

/// L channel rescaled to [0,1].
inline Tensor luminance(const Tensor& lab) {
    require_image(lab, "luminance", 3);
    Tensor out({lab.extent(0), lab.extent(1), 1});
    int n = lab.extent(0) * lab.extent(1);
    for (int p = 0; p < n; ++p) out[p] = lab.data()[static_cast<size_t>(p) * 3] / 100.0;
    return out;
}

inline Value luminance_node(Tape& t, Value lab) { return scale(t, slice_channels(t, lab, 0, 1), 0.01); }

// ---------------------------------------------------------------------------
// histogram stretch (evaluation-time only)
// ---------------------------------------------------------------------------

struct StretchResult {
    Tensor rgb;
    bool degenerate = false;
};

/// Remaps luminance so the 5th percentile goes to 0 and the 95th to 1 (5%
/// saturation at each boundary), scaling RGB by the per-pixel luminance gain.
/// Never part of the training graph.
inline StretchResult histogram_stretch(const Tensor& rgb, double low_frac = 0.05, double high_frac = 0.95) {
    require_image(rgb, "histogram_stretch", 3);
    int n = rgb.extent(0) * rgb.extent(1);
    std::vector<double> lum(static_cast<size_t>(n));
    for (int p = 0; p < n; ++p) {
        const double* px = rgb.data() + static_cast<size_t>(p) * 3;
        lum[static_cast<size_t>(p)] = 0.2126 * px[0] + 0.7152 * px[1] + 0.0722 * px[2];
    }
    std::vector<double> sorted = lum;
    std::sort(sorted.begin(), sorted.end());
    double p_low = sorted[static_cast<size_t>(std::floor(low_frac * (n - 1)))];
    double p_high = sorted[static_cast<size_t>(std::ceil(high_frac * (n - 1)))];
    if (p_high - p_low < 1e-12) return {rgb, true};

    StretchResult res{Tensor(rgb.shape()), false};
    double inv = 1.0 / (p_high - p_low);
    for (int p = 0; p < n; ++p) {
        double l = lum[static_cast<size_t>(p)];
        double stretched = std::min(1.0, std::max(0.0, (l - p_low) * inv));
        double gain = l > 1e-12 ? stretched / l : 0.0;
        const double* src = rgb.data() + static_cast<size_t>(p) * 3;
        double* dst = res.rgb.data() + static_cast<size_t>(p) * 3;
        for (int c = 0; c < 3; ++c) dst[c] = std::min(1.0, std::max(0.0, src[c] * gain));
    }
    return res;
}

}  // namespace deepisp
