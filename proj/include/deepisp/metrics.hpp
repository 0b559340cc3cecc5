#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "deepisp/color.hpp"
#include "deepisp/loss.hpp"
#include "deepisp/tensor.hpp"

namespace deepisp {

enum class PsnrSpace { linear, srgb };

inline constexpr double PSNR_CAP_DB = 99.0;

/// 10 log10(1/MSE) over all channels, peak 1.0. space=srgb gamma-encodes
/// both images first; identical images return the 99 dB cap.
inline double psnr(const Tensor& a, const Tensor& b, PsnrSpace space = PsnrSpace::linear) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        double x = a[i], y = b[i];
        if (space == PsnrSpace::srgb) {
            x = srgb::gamma_encode(x);
            y = srgb::gamma_encode(y);
        }
        double d = x - y;
        mse += d * d;
    }
    mse /= a.size();
    if (mse <= 0.0) return PSNR_CAP_DB;
    return std::min(PSNR_CAP_DB, 10.0 * std::log10(1.0 / mse));
}

/// Per-image evaluation row; aggregate is the arithmetic mean of the rows.
struct EvalRow {
    std::string name;
    double psnr_linear = 0.0;
    double psnr_srgb = 0.0;
    double msssim = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double runtime_seconds = 0.0;
    std::string config_fingerprint;

    EvalRow aggregate() const {
        EvalRow mean;
        mean.name = "mean";
        if (rows.empty()) return mean;
        for (const EvalRow& r : rows) {
            mean.psnr_linear += r.psnr_linear;
            mean.psnr_srgb += r.psnr_srgb;
            mean.msssim += r.msssim;
        }
        double inv = 1.0 / static_cast<double>(rows.size());
        mean.psnr_linear *= inv;
        mean.psnr_srgb *= inv;
        mean.msssim *= inv;
        return mean;
    }

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("eval report: cannot open " + path);
        f << "name,psnr_linear_db,psnr_srgb_db,msssim\n";
        char buf[256];
        auto emit = [&](const EvalRow& r) {
            std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", r.name.c_str(), r.psnr_linear, r.psnr_srgb,
                          r.msssim);
            f << buf;
        };
        for (const EvalRow& r : rows) emit(r);
        emit(aggregate());
        std::snprintf(buf, sizeof(buf), "# runtime_seconds=%.3f config=%s\n", runtime_seconds,
                      config_fingerprint.c_str());
        f << buf;
    }

    std::string summary() const {
        EvalRow mean = aggregate();
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%zu images  PSNR %.2f dB (linear)  %.2f dB (sRGB)  MS-SSIM %.4f",
                      rows.size(), mean.psnr_linear, mean.psnr_srgb, mean.msssim);
        return buf;
    }
};

/// Compares a prediction against its target on all three metrics. MS-SSIM is
/// computed on the luminance channel, matching the training objective.
inline EvalRow evaluate_image(const std::string& name, const Tensor& pred, const Tensor& target,
                              const LossConfig& cfg = LossConfig{}) {
    EvalRow row;
    row.name = name;
    row.psnr_linear = psnr(pred, target, PsnrSpace::linear);
    row.psnr_srgb = psnr(pred, target, PsnrSpace::srgb);
    row.msssim = ms_ssim_value(luminance(rgb_to_lab(pred)), luminance(rgb_to_lab(target)), cfg);
    return row;
}

}  // namespace deepisp
