#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "deepisp/color.hpp"
#include "deepisp/gradcheck.hpp"
#include "deepisp/loss.hpp"
#include "deepisp/model.hpp"
#include "deepisp/rng.hpp"

namespace deepisp {

namespace detail {

/// Uniform values bounded away from relu/abs kinks and clamp edges.
inline Tensor smooth_signed(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.size(); ++i) {
        double mag = 0.2 + rng.uniform();
        t[i] = rng.coin() ? mag : -mag;
    }
    return t;
}

inline Tensor smooth_unit(Rng& rng, Shape shape, double lo = 0.08, double hi = 0.92) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

/// Scalarizes a tensor-valued op with a fixed random weighting so every
/// output element contributes to the checked gradient.
inline Value weighted_sum(Tape& t, Value x, uint64_t key) {
    const Tensor& v = t.value(x);
    Rng rng(hash_combine(key, 0x77737570ULL));
    Tensor w(v.shape());
    for (int i = 0; i < w.size(); ++i) w[i] = rng.uniform(0.5, 1.5);
    return mean_all(t, mul(t, x, t.input(std::move(w))));
}

}  // namespace detail

/// Runs every differentiable op (and the end-to-end model loss) against
/// central finite differences at random smooth points.
inline std::vector<GradCheckItem> gradcheck_suite(uint64_t seed, int points_per_op = 100, int end_to_end_points = 2) {
    std::vector<GradCheckItem> items;
    double h = 1e-5;

    auto run = [&](const std::string& name, int points, double step, double tol, auto&& make_point,
                   const LossBuilder& build) {
        GradCheckItem item{name, 0.0, tol};
        for (int p = 0; p < points; ++p) {
            Rng rng(hash_combine(seed, hash_combine(std::hash<std::string>{}(name), static_cast<uint64_t>(p))));
            item.max_rel_err = std::max(item.max_rel_err, grad_check(build, make_point(rng, p), step));
        }
        items.push_back(item);
    };

    // conv2d: stride 1 reflect, stride 2 reflect, stride 2 valid
    for (auto [name, stride, pad] :
         {std::tuple{"conv2d/s1_reflect", 1, Padding::reflect}, std::tuple{"conv2d/s2_reflect", 2, Padding::reflect},
          std::tuple{"conv2d/s2_none", 2, Padding::none}}) {
        int s = stride;
        Padding pd = pad;
        run(
            name, points_per_op, h, 1e-4,
            [](Rng& rng, int) {
                return std::vector<Tensor>{detail::smooth_signed(rng, {7, 6, 2}), detail::smooth_signed(rng, {3, 3, 2, 3}),
                                           detail::smooth_signed(rng, {3})};
            },
            [s, pd](Tape& t, const std::vector<Value>& in) {
                return detail::weighted_sum(t, conv2d(t, in[0], in[1], in[2], s, pd), 11);
            });
    }

    run(
        "activation/relu", points_per_op, h, 1e-4,
        [](Rng& rng, int) { return std::vector<Tensor>{detail::smooth_signed(rng, {4, 5, 3})}; },
        [](Tape& t, const std::vector<Value>& in) { return detail::weighted_sum(t, relu(t, in[0]), 12); });

    run(
        "activation/tanh", points_per_op, h, 1e-4,
        [](Rng& rng, int) { return std::vector<Tensor>{detail::smooth_signed(rng, {4, 5, 3})}; },
        [](Tape& t, const std::vector<Value>& in) { return detail::weighted_sum(t, tanh_act(t, in[0]), 13); });

    run(
        "pool/max2x2", points_per_op, h, 1e-4,
        [](Rng& rng, int) {
            // stratified values give every pair a gap far above the FD step,
            // so the max-pool subgradient is unique
            Tensor t({6, 6, 2});
            std::vector<int> order(static_cast<size_t>(t.size()));
            for (int i = 0; i < t.size(); ++i) order[static_cast<size_t>(i)] = i;
            for (int i = t.size() - 1; i > 0; --i) std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(i + 1))]);
            for (int i = 0; i < t.size(); ++i) t[i] = (order[static_cast<size_t>(i)] + 0.2 + 0.6 * rng.uniform()) / t.size();
            return std::vector<Tensor>{t};
        },
        [](Tape& t, const std::vector<Value>& in) { return detail::weighted_sum(t, maxpool2x2(t, in[0]), 14); });

    run(
        "pool/global_mean", points_per_op, h, 1e-4,
        [](Rng& rng, int) { return std::vector<Tensor>{detail::smooth_signed(rng, {5, 7, 3})}; },
        [](Tape& t, const std::vector<Value>& in) { return detail::weighted_sum(t, global_mean_pool(t, in[0]), 15); });

    run(
        "affine", points_per_op, h, 1e-4,
        [](Rng& rng, int) {
            return std::vector<Tensor>{detail::smooth_signed(rng, {6}), detail::smooth_signed(rng, {4, 6}),
                                       detail::smooth_signed(rng, {4})};
        },
        [](Tape& t, const std::vector<Value>& in) { return detail::weighted_sum(t, affine(t, in[0], in[1], in[2]), 16); });

    run(
        "pad_reflect", points_per_op, h, 1e-4,
        [](Rng& rng, int) { return std::vector<Tensor>{detail::smooth_signed(rng, {5, 4, 2})}; },
        [](Tape& t, const std::vector<Value>& in) { return detail::weighted_sum(t, pad_reflect(t, in[0], 2), 17); });

    run(
        "elementwise/mul_div_abs_clamp", points_per_op, h, 1e-4,
        [](Rng& rng, int) {
            Tensor b = detail::smooth_unit(rng, {3, 4, 2}, 0.3, 0.9);  // divisor away from zero, clamp interior
            return std::vector<Tensor>{detail::smooth_signed(rng, {3, 4, 2}), b};
        },
        [](Tape& t, const std::vector<Value>& in) {
            Value prod = mul(t, in[0], in[1]);
            Value quot = div(t, in[0], in[1]);
            Value clamped = clamp01(t, in[1]);
            return detail::weighted_sum(t, add(t, add(t, abs_val(t, prod), scale(t, quot, 0.5)), clamped), 18);
        });

    run(
        "structure/concat_slice_box_down", points_per_op, h, 1e-4,
        [](Rng& rng, int) {
            return std::vector<Tensor>{detail::smooth_signed(rng, {6, 6, 2}), detail::smooth_signed(rng, {6, 6, 1})};
        },
        [](Tape& t, const std::vector<Value>& in) {
            Value cat = concat_channels(t, in[0], in[1]);
            Value sl = slice_channels(t, cat, 1, 1);
            Value bm = box_mean(t, sl, 3);
            return detail::weighted_sum(t, downsample2x2_mean(t, bm), 19);
        });

    run(
        "color/rgb_to_lab", points_per_op, h, 1e-4,
        [](Rng& rng, int) { return std::vector<Tensor>{detail::smooth_unit(rng, {4, 4, 3})}; },
        [](Tape& t, const std::vector<Value>& in) { return detail::weighted_sum(t, rgb_to_lab_node(t, in[0]), 20); });

    run(
        "model/quadratic_transform", points_per_op, h, 1e-4,
        [](Rng& rng, int) {
            return std::vector<Tensor>{detail::smooth_unit(rng, {4, 4, 3}), detail::smooth_signed(rng, {30})};
        },
        [](Tape& t, const std::vector<Value>& in) {
            return detail::weighted_sum(t, quadratic_transform_node(t, in[0], in[1]), 21);
        });

    run(
        "loss/ssim_map", points_per_op, h, 1e-4,
        [](Rng& rng, int) {
            return std::vector<Tensor>{detail::smooth_unit(rng, {8, 8, 1}), detail::smooth_unit(rng, {8, 8, 1})};
        },
        [](Tape& t, const std::vector<Value>& in) {
            return detail::weighted_sum(t, ssim_map(t, in[0], in[1], 5, 1e-4, 9e-4), 22);
        });

    run(
        "loss/ms_ssim", points_per_op, h, 1e-4,
        [](Rng& rng, int) {
            return std::vector<Tensor>{detail::smooth_unit(rng, {12, 12, 1}), detail::smooth_unit(rng, {12, 12, 1})};
        },
        [](Tape& t, const std::vector<Value>& in) { return ms_ssim(t, in[0], in[1], LossConfig{}); });

    run(
        "loss/l2", points_per_op, h, 1e-4,
        [](Rng& rng, int) {
            return std::vector<Tensor>{detail::smooth_unit(rng, {5, 5, 3}), detail::smooth_unit(rng, {5, 5, 3})};
        },
        [](Tape& t, const std::vector<Value>& in) { return l2_loss(t, in[0], in[1]); });

    {
        // the L1 term has an abs kink wherever pred and target Lab values
        // coincide; points are resampled until every margin clears the step
        GradCheckItem item{"loss/combined", 0.0, 1e-4};
        int wanted = std::max(1, points_per_op / 4);
        int accepted = 0;
        for (uint64_t attempt = 0; accepted < wanted && attempt < 400; ++attempt) {
            Rng rng(hash_combine(seed, 7000 + attempt));
            std::vector<Tensor> point{detail::smooth_unit(rng, {12, 12, 3}), detail::smooth_unit(rng, {12, 12, 3})};
            SmoothnessProbe probe;
            {
                Tape t;
                combined_loss(t, t.input(point[0]), t.input(point[1]), LossConfig{}, &probe);
            }
            if (probe.min_margin() < 0.01) continue;
            ++accepted;
            LossBuilder build = [](Tape& t, const std::vector<Value>& in) {
                return combined_loss(t, in[0], in[1], LossConfig{});
            };
            item.max_rel_err = std::max(item.max_rel_err, grad_check(build, point, h));
        }
        if (accepted < wanted) item.max_rel_err = 1e9;  // never pass vacuously
        items.push_back(item);
    }

    // End-to-end: every parameter of a small full model through the combined
    // loss on a 16x16 input, h = 1e-4 at double precision. The check needs a
    // smooth point, so the point is constructed for margins: feature-channel
    // biases shift relu pre-activations away from zero, the residual path is
    // tempered to keep predictions inside the clamp range, target pixels
    // sitting on the L1 kink are redrawn, and anything still within margin of
    // a kink/tie/edge/knee is resampled. Exhausting attempts fails the item.
    {
        ModelConfig cfg{2, 1, 8};
        int feat = cfg.feature_channels();
        GradCheckItem item{"end_to_end/deepisp_combined_loss", 0.0, 1e-4};
        auto build_nodes = [&cfg](const std::vector<Value>& in) {
            ModelNodes nodes;
            size_t k = 2;
            for (int i = 0; i < cfg.n_ll; ++i, k += 2) nodes.lowlevel.push_back({in[k], in[k + 1]});
            for (int i = 0; i < cfg.n_hl; ++i, k += 2) nodes.highlevel.push_back({in[k], in[k + 1]});
            nodes.head_weight = in[k];
            nodes.head_bias = in[k + 1];
            return nodes;
        };
        int accepted = 0;
        for (uint64_t attempt = 0; accepted < end_to_end_points && attempt < 400; ++attempt) {
            ModelParams params = init_params(hash_combine(seed, 900 + attempt), cfg);
            Rng rng(hash_combine(seed, 950 + attempt));
            for (ConvBlock& block : params.lowlevel) {
                // bias shift pushes relu pre-activations away from zero;
                // tempered residual channels keep the estimate well inside
                // the clamp range and off the gamma knee
                for (int c = 0; c < feat; ++c) block.bias[c] = 1.5 + 0.15 * rng.gaussian();
                int co = block.kernel.extent(3);
                for (int i = 0; i < block.kernel.size(); ++i) block.kernel[i] *= i % co >= feat ? 0.04 : 0.5;
            }
            for (ConvBlock& block : params.highlevel) {
                // wide spread separates max-pool window values (gaps are
                // invariant to bias shifts, so scale the kernels instead);
                // kept moderate or the pooled features amplify head-weight
                // perturbations past the L1 kink margin
                for (int i = 0; i < block.kernel.size(); ++i) block.kernel[i] *= 2.0;
                for (int i = 0; i < block.bias.size(); ++i) block.bias[i] = 1.5 + 0.15 * rng.gaussian();
            }
            // small random head so the high-level path carries real gradients
            for (int i = 0; i < params.head_weight.size(); ++i) params.head_weight[i] = 0.001 * rng.gaussian();
            for (int i = 0; i < params.head_bias.size(); ++i) params.head_bias[i] += 0.01 * rng.gaussian();

            std::vector<Tensor> point;
            point.push_back(detail::smooth_unit(rng, {16, 16, 3}, 0.35, 0.75));
            point.push_back(detail::smooth_unit(rng, {16, 16, 3}, 0.35, 0.75));
            for (const auto& ref : params.named_params()) point.push_back(*ref.tensor);

            // redraw target pixels whose Lab difference sits on the abs kink
            {
                Tape t;
                std::vector<Value> leaves;
                for (const Tensor& tt : point) leaves.push_back(t.input(tt));
                Value out = deepisp_forward(t, leaves[0], build_nodes(leaves), cfg);
                Tensor pred_lab = rgb_to_lab(t.value(clamp01(t, out)));
                Tensor& target = point[1];
                for (int p = 0; p < 16 * 16; ++p) {
                    for (int tries = 0; tries < 60; ++tries) {
                        double px[3] = {target[p * 3], target[p * 3 + 1], target[p * 3 + 2]};
                        auto lab = rgb_pixel_to_lab(px);
                        double gap = 1e300;
                        for (int c = 0; c < 3; ++c) gap = std::min(gap, std::fabs(lab[c] - pred_lab[p * 3 + c]));
                        if (gap > 1.5) break;
                        for (int c = 0; c < 3; ++c) target[p * 3 + c] = rng.uniform(0.35, 0.75);
                    }
                }
            }

            // Margins scale with perturbation shifts, which the boosted
            // high-level kernels amplify; the two stages get separate probes
            // and thresholds.
            SmoothnessProbe probe_ll, probe_hl;
            {
                Tape t;
                std::vector<Value> leaves;
                for (const Tensor& tt : point) leaves.push_back(t.input(tt));
                ModelNodes nodes = build_nodes(leaves);
                LowLevelOut low = lowlevel_forward(t, leaves[0], nodes, cfg, false, &probe_ll);
                Value w30 = highlevel_forward(t, low.features, nodes, cfg, &probe_hl);
                Value out = quadratic_transform_node(t, low.estimate, w30);
                combined_loss(t, out, leaves[1], LossConfig{}, &probe_ll);
            }
            if (probe_ll.relu < 4e-3 || std::min(probe_ll.clamp, probe_ll.gamma_knee) < 8e-3 ||
                std::min(probe_hl.relu, probe_hl.pool_gap) < 8e-3 || probe_ll.abs_kink < 1.5)
                continue;
            ++accepted;
            LossBuilder build = [&](Tape& t, const std::vector<Value>& in) {
                ModelNodes nodes = build_nodes(in);
                Value out = deepisp_forward(t, in[0], nodes, cfg);
                return combined_loss(t, out, in[1], LossConfig{});
            };
            GradCheckWorst worst;
            double err = grad_check(build, point, 1e-4, &worst);
            if (std::getenv("DEEPISP_GC_DEBUG") && err > 1e-4) {
                std::fprintf(stderr,
                             "[gc-debug] attempt %llu err %.3e input %zu elem %d analytic %.9e numeric %.9e "
                             "value %.9f margins ll(relu %.2e clamp %.2e gamma %.2e abs %.2e) hl(relu %.2e pool %.2e)\n",
                             static_cast<unsigned long long>(attempt), err, worst.input, worst.element, worst.analytic,
                             worst.numeric, worst.value, probe_ll.relu, probe_ll.clamp, probe_ll.gamma_knee,
                             probe_ll.abs_kink, probe_hl.relu, probe_hl.pool_gap);
            }
            item.max_rel_err = std::max(item.max_rel_err, err);
        }
        if (accepted < end_to_end_points) item.max_rel_err = 1e9;  // never pass vacuously
        items.push_back(item);
    }

    return items;
}

}  // namespace deepisp
