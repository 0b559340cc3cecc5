#pragma once

#include <string>

#include "deepisp/color.hpp"
#include "deepisp/ops.hpp"
#include "deepisp/tape.hpp"

namespace deepisp {

struct LossConfig {
    double alpha = 0.5;       // weight of the structural term
    int msssim_scales = 2;    // 5x5 patches at two scales
    int msssim_window = 5;
    double c1 = 0.01 * 0.01;  // SSIM stability constants on the [0,1] range
    double c2 = 0.03 * 0.03;

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("loss: alpha must be in [0,1]");
        if (msssim_window < 1 || msssim_window % 2 == 0)
            throw std::invalid_argument("loss: msssim_window must be odd and positive");
        if (msssim_scales < 1) throw std::invalid_argument("loss: msssim_scales must be >= 1");
        if (c1 <= 0.0 || c2 <= 0.0) throw std::invalid_argument("loss: stability constants must be positive");
    }
};

/// Per-pixel SSIM from box-window local statistics (uniform window, reflect
/// borders): ((2 mu_a mu_b + C1)(2 cov + C2)) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))
inline Value ssim_map(Tape& t, Value a, Value b, int window, double c1, double c2) {
    const Tensor &ta = t.value(a), &tb = t.value(b);
    require_same_shape(ta, tb, "ssim_map");
    require_image(ta, "ssim_map", 1);
    Value mu_a = box_mean(t, a, window);
    Value mu_b = box_mean(t, b, window);
    Value mu_aa = mul(t, mu_a, mu_a);
    Value mu_bb = mul(t, mu_b, mu_b);
    Value mu_ab = mul(t, mu_a, mu_b);
    Value var_a = sub(t, box_mean(t, mul(t, a, a), window), mu_aa);
    Value var_b = sub(t, box_mean(t, mul(t, b, b), window), mu_bb);
    Value cov = sub(t, box_mean(t, mul(t, a, b), window), mu_ab);
    Value num = mul(t, add_const(t, scale(t, mu_ab, 2.0), c1), add_const(t, scale(t, cov, 2.0), c2));
    Value den = mul(t, add_const(t, add(t, mu_aa, mu_bb), c1), add_const(t, add(t, var_a, var_b), c2));
    return div(t, num, den);
}

inline int msssim_min_extent(const LossConfig& cfg) { return cfg.msssim_window << (cfg.msssim_scales - 1); }

/// Multi-scale SSIM: product over scales of the mean SSIM map, coarser
/// scales by 2x2 mean downsampling. Inputs are single-channel in [0,1].
inline Value ms_ssim(Tape& t, Value a, Value b, const LossConfig& cfg) {
    cfg.validate();
    const Tensor &ta = t.value(a), &tb = t.value(b);
    require_same_shape(ta, tb, "ms_ssim");
    require_image(ta, "ms_ssim", 1);
    int min_extent = msssim_min_extent(cfg);
    if (ta.extent(0) < min_extent || ta.extent(1) < min_extent)
        throw std::invalid_argument("ms_ssim: image " + shape_str(ta.shape()) + " too small for " +
                                    std::to_string(cfg.msssim_scales) + " scales; needs at least " +
                                    std::to_string(min_extent) + "x" + std::to_string(min_extent));
    Value result;
    Value xa = a, xb = b;
    for (int s = 0; s < cfg.msssim_scales; ++s) {
        if (s > 0) {
            xa = downsample2x2_mean(t, xa);
            xb = downsample2x2_mean(t, xb);
        }
        Value mean_s = mean_all(t, ssim_map(t, xa, xb, cfg.msssim_window, cfg.c1, cfg.c2));
        result = s == 0 ? mean_s : mul(t, result, mean_s);
    }
    return result;
}

/// Mean squared error over all elements.
inline Value l2_loss(Tape& t, Value pred, Value target) {
    require_same_shape(t.value(pred), t.value(target), "l2_loss");
    Value d = sub(t, pred, target);
    return mean_all(t, mul(t, d, d));
}

/// Training objective for the full pipeline:
///   (1 - alpha) * mean|Lab(pred) - Lab(target)| + alpha * (1 - MS-SSIM(L(pred), L(target)))
/// The structural term uses 1 - MS-SSIM so that identical images give zero
/// loss and a minimizer drives toward similarity.
inline Value combined_loss(Tape& t, Value pred_rgb, Value target_rgb, const LossConfig& cfg,
                           SmoothnessProbe* probe = nullptr) {
    cfg.validate();
    require_same_shape(t.value(pred_rgb), t.value(target_rgb), "combined_loss");
    require_image(t.value(pred_rgb), "combined_loss", 3);
    if (probe) {
        probe->note_gamma(t.value(pred_rgb));
        probe->note_gamma(t.value(target_rgb));
    }
    Value lab_p = rgb_to_lab_node(t, pred_rgb);
    Value lab_t = rgb_to_lab_node(t, target_rgb);
    Value diff = sub(t, lab_p, lab_t);
    if (probe) probe->note_abs(t.value(diff));
    Value l1 = mean_all(t, abs_val(t, diff));
    Value ms = ms_ssim(t, luminance_node(t, lab_p), luminance_node(t, lab_t), cfg);
    Value dissim = add_const(t, scale(t, ms, -1.0), 1.0);
    return add(t, scale(t, l1, 1.0 - cfg.alpha), scale(t, dissim, cfg.alpha));
}

// Plain-value conveniences for evaluation code.

inline double ms_ssim_value(const Tensor& a, const Tensor& b, const LossConfig& cfg) {
    Tape t;
    return t.value(ms_ssim(t, t.input(a), t.input(b), cfg))[0];
}

inline double combined_loss_value(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
    Tape t;
    return t.value(combined_loss(t, t.input(pred), t.input(target), cfg))[0];
}

inline double l2_loss_value(const Tensor& pred, const Tensor& target) {
    Tape t;
    return t.value(l2_loss(t, t.input(pred), t.input(target)))[0];
}

}  // namespace deepisp
