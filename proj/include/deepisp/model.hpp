#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "deepisp/ops.hpp"
#include "deepisp/rng.hpp"
#include "deepisp/tape.hpp"
#include "deepisp/tensor.hpp"

namespace deepisp {

// ---------------------------------------------------------------------------
// configuration and parameters
// ---------------------------------------------------------------------------

struct ModelConfig {
    int n_ll = 15;   // low-level residual blocks
    int n_hl = 3;    // high-level (strided conv + pool) stages
    int width = 64;  // block output channels; the last 3 are the residual image

    int feature_channels() const { return width - 3; }
    // each high-level stage divides the spatial extent by 4
    int min_highlevel_extent() const { return 1 << (2 * n_hl); }

    void validate() const {
        if (n_ll < 1) throw std::invalid_argument("model: n_ll must be >= 1");
        if (n_hl < 1) throw std::invalid_argument("model: n_hl must be >= 1");
        if (width < 4) throw std::invalid_argument("model: width must be >= 4 (3 residual channels + features)");
    }
};

struct ConvBlock {
    Tensor kernel;  // k x k x Cin x Cout
    Tensor bias;    // Cout
};

/// All learnable weights. Declaration order (= checkpoint order): low-level
/// blocks, high-level blocks, affine head weight, affine head bias.
struct ModelParams {
    ModelConfig config;
    std::vector<ConvBlock> lowlevel;
    std::vector<ConvBlock> highlevel;
    Tensor head_weight;  // 30 x width
    Tensor head_bias;    // 30

    struct Ref {
        std::string name;
        Tensor* tensor;
    };

    std::vector<Ref> named_params() {
        std::vector<Ref> out;
        for (size_t i = 0; i < lowlevel.size(); ++i) {
            out.push_back({"ll" + std::to_string(i) + ".kernel", &lowlevel[i].kernel});
            out.push_back({"ll" + std::to_string(i) + ".bias", &lowlevel[i].bias});
        }
        for (size_t i = 0; i < highlevel.size(); ++i) {
            out.push_back({"hl" + std::to_string(i) + ".kernel", &highlevel[i].kernel});
            out.push_back({"hl" + std::to_string(i) + ".bias", &highlevel[i].bias});
        }
        out.push_back({"head.weight", &head_weight});
        out.push_back({"head.bias", &head_bias});
        return out;
    }

    int param_count() {
        int n = 0;
        for (const Ref& r : named_params()) n += r.tensor->size();
        return n;
    }
};

// ---------------------------------------------------------------------------
// quadratic color transform (the high-level stage's output operator)
// ---------------------------------------------------------------------------

/// Second-order monomials of a pixel: the row-major upper triangle of
/// [r g b 1]^T [r g b 1], i.e. (r2, rg, rb, r, g2, gb, g, b2, b, 1).
inline std::array<double, 10> monomials(double r, double g, double b) {
    return {r * r, r * g, r * b, r, g * g, g * b, g, b * b, b, 1.0};
}

// monomial indices of the affine terms under the ordering above
inline constexpr int MONOMIAL_R = 3;
inline constexpr int MONOMIAL_G = 6;
inline constexpr int MONOMIAL_B = 8;
inline constexpr int MONOMIAL_CONST = 9;

/// 3 x 10 operator mapping a pixel's monomials to a new RGB value.
struct ColorTransform {
    Tensor w{Shape{3, 10}};

    static ColorTransform identity() {
        ColorTransform t;
        t.w.at(0, MONOMIAL_R) = 1.0;
        t.w.at(1, MONOMIAL_G) = 1.0;
        t.w.at(2, MONOMIAL_B) = 1.0;
        return t;
    }
};

/// Applies W per pixel. Inference path; clamps the result to [0,1] unless
/// told otherwise (training applies the transform in-graph, unclamped).
inline Tensor apply_quadratic_transform(const Tensor& rgb, const ColorTransform& t, bool clamp_output = true) {
    require_image(rgb, "apply_quadratic_transform", 3);
    Tensor out(rgb.shape());
    int n = rgb.extent(0) * rgb.extent(1);
    for (int p = 0; p < n; ++p) {
        const double* px = rgb.data() + static_cast<size_t>(p) * 3;
        auto m = monomials(px[0], px[1], px[2]);
        double* o = out.data() + static_cast<size_t>(p) * 3;
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int j = 0; j < 10; ++j) s += t.w.at(c, j) * m[j];
            o[c] = clamp_output ? std::min(1.0, std::max(0.0, s)) : s;
        }
    }
    return out;
}

/// In-graph transform; w30 is the flattened row-major 3 x 10 operator, and
/// gradients flow to both the image and the operator. No clamping.
inline Value quadratic_transform_node(Tape& t, Value rgb, Value w30) {
    const Tensor& tin = t.value(rgb);
    require_image(tin, "quadratic_transform", 3);
    const Tensor& tw = t.value(w30);
    if (tw.size() != 30)
        throw std::invalid_argument("quadratic_transform: operator must have 30 entries, got " + shape_str(tw.shape()));
    int n = tin.extent(0) * tin.extent(1);
    Tensor out(tin.shape());
    for (int p = 0; p < n; ++p) {
        const double* px = tin.data() + static_cast<size_t>(p) * 3;
        auto m = monomials(px[0], px[1], px[2]);
        double* o = out.data() + static_cast<size_t>(p) * 3;
        for (int c = 0; c < 3; ++c) {
            double s = 0.0;
            for (int j = 0; j < 10; ++j) s += tw[c * 10 + j] * m[j];
            o[c] = s;
        }
    }
    return t.record(std::move(out), {rgb, w30}, [n](const BackwardCtx& ctx) {
        const Tensor& in = *ctx.inputs[0];
        const Tensor& w = *ctx.inputs[1];
        Tensor& g_img = *ctx.input_grads[0];
        Tensor& g_w = *ctx.input_grads[1];
        for (int p = 0; p < n; ++p) {
            const double* px = in.data() + static_cast<size_t>(p) * 3;
            double r = px[0], g = px[1], b = px[2];
            auto m = monomials(r, g, b);
            const double dm_dr[10] = {2 * r, g, b, 1, 0, 0, 0, 0, 0, 0};
            const double dm_dg[10] = {0, r, 0, 0, 2 * g, b, 1, 0, 0, 0};
            const double dm_db[10] = {0, 0, r, 0, 0, g, 0, 2 * b, 1, 0};
            const double* up = ctx.upstream.data() + static_cast<size_t>(p) * 3;
            double* gp = g_img.data() + static_cast<size_t>(p) * 3;
            for (int c = 0; c < 3; ++c) {
                double u = up[c];
                const double* wrow = w.data() + static_cast<size_t>(c) * 10;
                double sr = 0, sg = 0, sb = 0;
                for (int j = 0; j < 10; ++j) {
                    sr += wrow[j] * dm_dr[j];
                    sg += wrow[j] * dm_dg[j];
                    sb += wrow[j] * dm_db[j];
                    g_w[c * 10 + j] += u * m[j];
                }
                gp[0] += u * sr;
                gp[1] += u * sg;
                gp[2] += u * sb;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// parameter registration and forward passes
// ---------------------------------------------------------------------------

/// Tape handles for one forward/backward pass over a parameter set.
struct ModelNodes {
    std::vector<std::pair<Value, Value>> lowlevel;   // (kernel, bias)
    std::vector<std::pair<Value, Value>> highlevel;  // (kernel, bias)
    Value head_weight, head_bias;
};

inline ModelNodes register_params(Tape& t, const ModelParams& p) {
    ModelNodes n;
    for (const ConvBlock& b : p.lowlevel) n.lowlevel.push_back({t.input(b.kernel), t.input(b.bias)});
    for (const ConvBlock& b : p.highlevel) n.highlevel.push_back({t.input(b.kernel), t.input(b.bias)});
    n.head_weight = t.input(p.head_weight);
    n.head_bias = t.input(p.head_bias);
    return n;
}

/// Gradients in named_params() order, after tape.backward().
inline std::vector<const Tensor*> collect_grads(const Tape& t, const ModelNodes& n) {
    std::vector<const Tensor*> out;
    for (auto& [k, b] : n.lowlevel) {
        out.push_back(&t.grad(k));
        out.push_back(&t.grad(b));
    }
    for (auto& [k, b] : n.highlevel) {
        out.push_back(&t.grad(k));
        out.push_back(&t.grad(b));
    }
    out.push_back(&t.grad(n.head_weight));
    out.push_back(&t.grad(n.head_bias));
    return out;
}

struct LowLevelOut {
    Value estimate;  // H x W x 3 running image estimate
    Value features;  // H x W x (width-3) features of the last block
};

/// Low-level stage. Block k convolves its input (image for k=0, previous
/// features + current estimate otherwise), puts width-3 channels through
/// relu and 3 through tanh; the tanh channels form a residual image added to
/// the running estimate. ablate_skip makes the residual replace the estimate
/// instead (severed per-block additive connection).
inline LowLevelOut lowlevel_forward(Tape& t, Value rgb, const ModelNodes& nodes, const ModelConfig& cfg,
                                    bool ablate_skip = false, SmoothnessProbe* probe = nullptr) {
    cfg.validate();
    const Tensor& tin = t.value(rgb);
    require_image(tin, "lowlevel_forward", 3);
    if (tin.extent(0) < 3 || tin.extent(1) < 3)
        throw std::invalid_argument("lowlevel_forward: image must be at least 3x3, got " + shape_str(tin.shape()));
    if (static_cast<int>(nodes.lowlevel.size()) != cfg.n_ll)
        throw std::invalid_argument("lowlevel_forward: expected " + std::to_string(cfg.n_ll) + " blocks");

    int feat = cfg.feature_channels();
    Value estimate = rgb;
    Value x = rgb;
    Value features;
    for (int k = 0; k < cfg.n_ll; ++k) {
        Value z = conv2d(t, x, nodes.lowlevel[static_cast<size_t>(k)].first,
                         nodes.lowlevel[static_cast<size_t>(k)].second, 1, Padding::reflect);
        Value pre = slice_channels(t, z, 0, feat);
        if (probe) probe->note_relu(t.value(pre));
        features = relu(t, pre);
        Value residual = tanh_act(t, slice_channels(t, z, feat, 3));
        estimate = ablate_skip ? residual : add(t, estimate, residual);
        if (k + 1 < cfg.n_ll) x = concat_channels(t, features, estimate);
    }
    return {estimate, features};
}

/// High-level stage: n_hl stages of stride-2 3x3 conv + relu + 2x2 max-pool,
/// global mean pool, then the affine head emitting the 30 operator entries.
inline Value highlevel_forward(Tape& t, Value features, const ModelNodes& nodes, const ModelConfig& cfg,
                               SmoothnessProbe* probe = nullptr) {
    cfg.validate();
    const Tensor& tin = t.value(features);
    require_image(tin, "highlevel_forward", cfg.feature_channels());
    int min_extent = cfg.min_highlevel_extent();
    if (tin.extent(0) < min_extent || tin.extent(1) < min_extent)
        throw std::invalid_argument("highlevel_forward: image " + shape_str(tin.shape()) + " too small for " +
                                    std::to_string(cfg.n_hl) + " stages; needs at least " +
                                    std::to_string(min_extent) + "x" + std::to_string(min_extent));
    if (static_cast<int>(nodes.highlevel.size()) != cfg.n_hl)
        throw std::invalid_argument("highlevel_forward: expected " + std::to_string(cfg.n_hl) + " stages");

    Value x = features;
    for (int i = 0; i < cfg.n_hl; ++i) {
        x = conv2d(t, x, nodes.highlevel[static_cast<size_t>(i)].first, nodes.highlevel[static_cast<size_t>(i)].second,
                   2, Padding::reflect);
        if (probe) probe->note_relu(t.value(x));
        x = relu(t, x);
        if (probe) probe->note_pool2x2(t.value(x));
        x = maxpool2x2(t, x);
    }
    Value pooled = global_mean_pool(t, x);
    return affine(t, pooled, nodes.head_weight, nodes.head_bias);
}

/// Full pipeline on a demosaiced RGB input. With ablate_shared the high-level
/// stage sees only the low-level estimate, zero-padded to its expected input
/// width (parameter counts stay identical between ablation arms).
inline Value deepisp_forward(Tape& t, Value raw_rgb, const ModelNodes& nodes, const ModelConfig& cfg,
                             bool ablate_shared = false, SmoothnessProbe* probe = nullptr) {
    LowLevelOut low = lowlevel_forward(t, raw_rgb, nodes, cfg, false, probe);
    Value hl_input = low.features;
    if (ablate_shared) {
        int pad = cfg.feature_channels() - 3;
        if (pad < 0)
            throw std::invalid_argument("deepisp_forward: ablate_shared needs width >= 6 to carry the estimate");
        hl_input = low.estimate;
        if (pad > 0) {
            const Tensor& e = t.value(low.estimate);
            Value zeros = t.input(Tensor({e.extent(0), e.extent(1), pad}));
            hl_input = concat_channels(t, low.estimate, zeros);
        }
    }
    Value w30 = highlevel_forward(t, hl_input, nodes, cfg, probe);
    return quadratic_transform_node(t, low.estimate, w30);
}

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

namespace detail {

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
/// a is n x n row-major and is destroyed; eigenvalues land on its diagonal,
/// eigenvectors in the columns of v.
inline void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, int n) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) v[static_cast<size_t>(i * n + j)] = i == j ? 1.0 : 0.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p * n + q)] * a[static_cast<size_t>(p * n + q)];
        if (off < 1e-30) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                double apq = a[static_cast<size_t>(p * n + q)];
                if (std::fabs(apq) < 1e-300) continue;
                double app = a[static_cast<size_t>(p * n + p)], aqq = a[static_cast<size_t>(q * n + q)];
                double theta = 0.5 * (aqq - app) / apq;
                double sign = theta >= 0.0 ? 1.0 : -1.0;
                double tt = sign / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(tt * tt + 1.0);
                double s = tt * c;
                for (int k = 0; k < n; ++k) {
                    double akp = a[static_cast<size_t>(k * n + p)], akq = a[static_cast<size_t>(k * n + q)];
                    a[static_cast<size_t>(k * n + p)] = c * akp - s * akq;
                    a[static_cast<size_t>(k * n + q)] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a[static_cast<size_t>(p * n + k)], aqk = a[static_cast<size_t>(q * n + k)];
                    a[static_cast<size_t>(p * n + k)] = c * apk - s * aqk;
                    a[static_cast<size_t>(q * n + k)] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = v[static_cast<size_t>(k * n + p)], vkq = v[static_cast<size_t>(k * n + q)];
                    v[static_cast<size_t>(k * n + p)] = c * vkp - s * vkq;
                    v[static_cast<size_t>(k * n + q)] = s * vkp + c * vkq;
                }
            }
    }
}

}  // namespace detail

struct AffineInit {
    Tensor w34{Shape{3, 4}};  // regression from (r,g,b,1) to target rgb
    ColorTransform transform;
    bool degenerate = false;  // a rank-deficient design matrix was hit (least-norm solution used)
};

/// Least-squares affine color initialization: per pair, regress input pixels
/// (r,g,b,1) onto target pixels, then average the per-pair 3x4 solutions and
/// embed them into the 3x10 operator with zero second-order coefficients.
inline AffineInit init_w_affine(const std::vector<std::pair<const Tensor*, const Tensor*>>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("init_w_affine: need at least one pair");
    AffineInit out;
    Tensor acc({3, 4});
    for (auto [input, target] : pairs) {
        require_image(*input, "init_w_affine input", 3);
        require_image(*target, "init_w_affine target", 3);
        require_same_shape(*input, *target, "init_w_affine");
        int n = input->extent(0) * input->extent(1);
        if (n < 4) throw std::invalid_argument("init_w_affine: each pair needs at least 4 pixels");

        // normal equations: XtX (4x4), XtY (4x3)
        double xtx[16] = {0}, xty[12] = {0};
        for (int p = 0; p < n; ++p) {
            const double* px = input->data() + static_cast<size_t>(p) * 3;
            const double* ty = target->data() + static_cast<size_t>(p) * 3;
            double row[4] = {px[0], px[1], px[2], 1.0};
            for (int i = 0; i < 4; ++i) {
                for (int j = 0; j < 4; ++j) xtx[i * 4 + j] += row[i] * row[j];
                for (int c = 0; c < 3; ++c) xty[i * 3 + c] += row[i] * ty[c];
            }
        }

        std::vector<double> a(xtx, xtx + 16), v(16);
        detail::jacobi_eigen(a, v, 4);
        double max_eig = 0.0;
        for (int i = 0; i < 4; ++i) max_eig = std::max(max_eig, std::fabs(a[static_cast<size_t>(i * 4 + i)]));
        double tol = max_eig * 1e-10;
        // pseudo-inverse of XtX applied to XtY (least-norm when rank-deficient)
        for (int c = 0; c < 3; ++c) {
            double rhs[4] = {xty[0 * 3 + c], xty[1 * 3 + c], xty[2 * 3 + c], xty[3 * 3 + c]};
            double sol[4] = {0, 0, 0, 0};
            for (int e = 0; e < 4; ++e) {
                double lambda = a[static_cast<size_t>(e * 4 + e)];
                if (std::fabs(lambda) <= tol) {
                    out.degenerate = true;
                    continue;
                }
                double proj = 0.0;
                for (int i = 0; i < 4; ++i) proj += v[static_cast<size_t>(i * 4 + e)] * rhs[i];
                proj /= lambda;
                for (int i = 0; i < 4; ++i) sol[i] += proj * v[static_cast<size_t>(i * 4 + e)];
            }
            for (int i = 0; i < 4; ++i) acc.at(c, i) += sol[i];
        }
    }
    double inv = 1.0 / static_cast<double>(pairs.size());
    for (int i = 0; i < acc.size(); ++i) out.w34[i] = acc[i] * inv;

    out.transform.w = Tensor({3, 10});
    const int cols[4] = {MONOMIAL_R, MONOMIAL_G, MONOMIAL_B, MONOMIAL_CONST};
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 4; ++i) out.transform.w.at(c, cols[i]) = out.w34.at(c, i);
    return out;
}

/// He-style initialization: kernels ~ N(0, 2/fan_in), biases zero. The head
/// weight starts at zero and its bias at the given transform, so the initial
/// operator equals that transform for any input.
inline ModelParams init_params(uint64_t seed, const ModelConfig& cfg,
                               const ColorTransform& head_init = ColorTransform::identity()) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    Rng rng(hash_combine(seed, 0x6d6f64656cULL));
    auto he_kernel = [&](int k, int cin, int cout) {
        Tensor w({k, k, cin, cout});
        double std_dev = std::sqrt(2.0 / (k * k * cin));
        for (int i = 0; i < w.size(); ++i) w[i] = std_dev * rng.gaussian();
        return w;
    };
    for (int i = 0; i < cfg.n_ll; ++i)
        p.lowlevel.push_back({he_kernel(3, i == 0 ? 3 : cfg.width, cfg.width), Tensor({cfg.width})});
    for (int i = 0; i < cfg.n_hl; ++i)
        p.highlevel.push_back({he_kernel(3, i == 0 ? cfg.feature_channels() : cfg.width, cfg.width),
                               Tensor({cfg.width})});
    p.head_weight = Tensor({30, cfg.width});
    p.head_bias = Tensor({30});
    for (int c = 0; c < 3; ++c)
        for (int j = 0; j < 10; ++j) p.head_bias[c * 10 + j] = head_init.w.at(c, j);
    return p;
}

}  // namespace deepisp
