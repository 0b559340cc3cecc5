#pragma once

#include <algorithm>
#include <cmath>

#include "deepisp/parallel.hpp"
#include "deepisp/tape.hpp"
#include "deepisp/tensor.hpp"

namespace deepisp {

enum class Padding { reflect, none };
enum class Activation { relu, tanh };

/// Distances of intermediate values to the nearest non-smooth point (relu
/// kink, pool tie, clamp edge, gamma knee, abs kink). Gradient checks need
/// points whose margins exceed the finite-difference perturbation; forwards
/// fill this in when asked so the checker can resample unsuitable points.
struct SmoothnessProbe {
    double relu = 1e300;
    double pool_gap = 1e300;
    double clamp = 1e300;
    double gamma_knee = 1e300;
    double abs_kink = 1e300;

    double min_margin() const {
        return std::min({relu, pool_gap, clamp, gamma_knee, abs_kink});
    }

    void note_relu(const Tensor& pre) {
        for (int i = 0; i < pre.size(); ++i) relu = std::min(relu, std::fabs(pre[i]));
    }

    // gap between each 2x2 window's max and its runner-up; all-zero windows
    // (fully clipped by relu) are benign
    void note_pool2x2(const Tensor& in) {
        int h = in.extent(0) / 2, w = in.extent(1) / 2, c = in.extent(2);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    double v[4] = {in.at(2 * y, 2 * x, ch), in.at(2 * y, 2 * x + 1, ch), in.at(2 * y + 1, 2 * x, ch),
                                   in.at(2 * y + 1, 2 * x + 1, ch)};
                    int arg = 0;
                    for (int i = 1; i < 4; ++i)
                        if (v[i] > v[arg]) arg = i;
                    if (v[arg] == 0.0) continue;
                    for (int i = 0; i < 4; ++i)
                        if (i != arg) pool_gap = std::min(pool_gap, v[arg] - v[i]);
                }
    }

    void note_clamp01(const Tensor& x) {
        for (int i = 0; i < x.size(); ++i) clamp = std::min({clamp, std::fabs(x[i]), std::fabs(1.0 - x[i])});
    }

    void note_gamma(const Tensor& clamped_rgb) {
        for (int i = 0; i < clamped_rgb.size(); ++i)
            gamma_knee = std::min(gamma_knee, std::fabs(clamped_rgb[i] - 0.04045));
    }

    void note_abs(const Tensor& x) {
        for (int i = 0; i < x.size(); ++i) abs_kink = std::min(abs_kink, std::fabs(x[i]));
    }
};

namespace detail {

/// Reflect-101 index: mirrors interior samples, border sample not repeated
/// (index -1 -> 1, index n -> n-2). Preserves Bayer phase parity.
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and structural ops
// ---------------------------------------------------------------------------

inline Value add(Tape& t, Value a, Value b) {
    const Tensor &ta = t.value(a), &tb = t.value(b);
    require_same_shape(ta, tb, "add");
    Tensor out(ta.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
    return t.record(std::move(out), {a, b}, [](const BackwardCtx& c) {
        for (int i = 0; i < c.upstream.size(); ++i) {
            (*c.input_grads[0])[i] += c.upstream[i];
            (*c.input_grads[1])[i] += c.upstream[i];
        }
    });
}

inline Value sub(Tape& t, Value a, Value b) {
    const Tensor &ta = t.value(a), &tb = t.value(b);
    require_same_shape(ta, tb, "sub");
    Tensor out(ta.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = ta[i] - tb[i];
    return t.record(std::move(out), {a, b}, [](const BackwardCtx& c) {
        for (int i = 0; i < c.upstream.size(); ++i) {
            (*c.input_grads[0])[i] += c.upstream[i];
            (*c.input_grads[1])[i] -= c.upstream[i];
        }
    });
}

inline Value mul(Tape& t, Value a, Value b) {
    const Tensor &ta = t.value(a), &tb = t.value(b);
    require_same_shape(ta, tb, "mul");
    Tensor out(ta.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[i];
    return t.record(std::move(out), {a, b}, [](const BackwardCtx& c) {
        const Tensor &va = *c.inputs[0], &vb = *c.inputs[1];
        for (int i = 0; i < c.upstream.size(); ++i) {
            (*c.input_grads[0])[i] += c.upstream[i] * vb[i];
            (*c.input_grads[1])[i] += c.upstream[i] * va[i];
        }
    });
}

inline Value div(Tape& t, Value a, Value b) {
    const Tensor &ta = t.value(a), &tb = t.value(b);
    require_same_shape(ta, tb, "div");
    Tensor out(ta.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = ta[i] / tb[i];
    return t.record(std::move(out), {a, b}, [](const BackwardCtx& c) {
        const Tensor &va = *c.inputs[0], &vb = *c.inputs[1];
        for (int i = 0; i < c.upstream.size(); ++i) {
            double inv = 1.0 / vb[i];
            (*c.input_grads[0])[i] += c.upstream[i] * inv;
            (*c.input_grads[1])[i] -= c.upstream[i] * va[i] * inv * inv;
        }
    });
}

inline Value scale(Tape& t, Value a, double k) {
    const Tensor& ta = t.value(a);
    Tensor out(ta.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = k * ta[i];
    return t.record(std::move(out), {a}, [k](const BackwardCtx& c) {
        for (int i = 0; i < c.upstream.size(); ++i) (*c.input_grads[0])[i] += k * c.upstream[i];
    });
}

inline Value add_const(Tape& t, Value a, double k) {
    const Tensor& ta = t.value(a);
    Tensor out(ta.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = ta[i] + k;
    return t.record(std::move(out), {a}, [](const BackwardCtx& c) {
        for (int i = 0; i < c.upstream.size(); ++i) (*c.input_grads[0])[i] += c.upstream[i];
    });
}

inline Value abs_val(Tape& t, Value a) {
    const Tensor& ta = t.value(a);
    Tensor out(ta.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = std::fabs(ta[i]);
    return t.record(std::move(out), {a}, [](const BackwardCtx& c) {
        const Tensor& va = *c.inputs[0];
        for (int i = 0; i < c.upstream.size(); ++i) {
            double s = va[i] > 0.0 ? 1.0 : (va[i] < 0.0 ? -1.0 : 0.0);
            (*c.input_grads[0])[i] += s * c.upstream[i];
        }
    });
}

/// Clamp to [0,1]; gradient is zero in the clamped regions.
inline Value clamp01(Tape& t, Value a) {
    const Tensor& ta = t.value(a);
    Tensor out(ta.shape());
    for (int i = 0; i < out.size(); ++i) out[i] = std::min(1.0, std::max(0.0, ta[i]));
    return t.record(std::move(out), {a}, [](const BackwardCtx& c) {
        const Tensor& va = *c.inputs[0];
        for (int i = 0; i < c.upstream.size(); ++i)
            if (va[i] > 0.0 && va[i] < 1.0) (*c.input_grads[0])[i] += c.upstream[i];
    });
}

inline Value activation(Tape& t, Value a, Activation kind) {
    const Tensor& ta = t.value(a);
    Tensor out(ta.shape());
    if (kind == Activation::relu) {
        for (int i = 0; i < out.size(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
        return t.record(std::move(out), {a}, [](const BackwardCtx& c) {
            const Tensor& va = *c.inputs[0];
            for (int i = 0; i < c.upstream.size(); ++i)
                if (va[i] > 0.0) (*c.input_grads[0])[i] += c.upstream[i];
        });
    }
    for (int i = 0; i < out.size(); ++i) out[i] = std::tanh(ta[i]);
    return t.record(std::move(out), {a}, [](const BackwardCtx& c) {
        for (int i = 0; i < c.upstream.size(); ++i) {
            double y = c.self[i];
            (*c.input_grads[0])[i] += (1.0 - y * y) * c.upstream[i];
        }
    });
}

inline Value relu(Tape& t, Value a) { return activation(t, a, Activation::relu); }
inline Value tanh_act(Tape& t, Value a) { return activation(t, a, Activation::tanh); }

inline Value mean_all(Tape& t, Value a) {
    const Tensor& ta = t.value(a);
    if (ta.empty()) throw std::invalid_argument("mean_all: empty tensor");
    double s = 0.0;
    for (int i = 0; i < ta.size(); ++i) s += ta[i];
    int n = ta.size();
    return t.record(Tensor::scalar(s / n), {a}, [n](const BackwardCtx& c) {
        double g = c.upstream[0] / n;
        for (int i = 0; i < c.input_grads[0]->size(); ++i) (*c.input_grads[0])[i] += g;
    });
}

inline Value concat_channels(Tape& t, Value a, Value b) {
    const Tensor &ta = t.value(a), &tb = t.value(b);
    require_image(ta, "concat_channels");
    require_image(tb, "concat_channels");
    if (ta.extent(0) != tb.extent(0) || ta.extent(1) != tb.extent(1))
        throw std::invalid_argument("concat_channels: spatial mismatch " + shape_str(ta.shape()) + " vs " +
                                    shape_str(tb.shape()));
    int h = ta.extent(0), w = ta.extent(1), ca = ta.extent(2), cb = tb.extent(2);
    Tensor out({h, w, ca + cb});
    for (int p = 0; p < h * w; ++p) {
        double* o = out.data() + static_cast<size_t>(p) * (ca + cb);
        const double* pa = ta.data() + static_cast<size_t>(p) * ca;
        const double* pb = tb.data() + static_cast<size_t>(p) * cb;
        std::copy(pa, pa + ca, o);
        std::copy(pb, pb + cb, o + ca);
    }
    return t.record(std::move(out), {a, b}, [h, w, ca, cb](const BackwardCtx& c) {
        for (int p = 0; p < h * w; ++p) {
            const double* g = c.upstream.data() + static_cast<size_t>(p) * (ca + cb);
            double* ga = c.input_grads[0]->data() + static_cast<size_t>(p) * ca;
            double* gb = c.input_grads[1]->data() + static_cast<size_t>(p) * cb;
            for (int i = 0; i < ca; ++i) ga[i] += g[i];
            for (int i = 0; i < cb; ++i) gb[i] += g[ca + i];
        }
    });
}

inline Value slice_channels(Tape& t, Value a, int first, int count) {
    const Tensor& ta = t.value(a);
    require_image(ta, "slice_channels");
    int h = ta.extent(0), w = ta.extent(1), c = ta.extent(2);
    if (first < 0 || count <= 0 || first + count > c)
        throw std::invalid_argument("slice_channels: range [" + std::to_string(first) + ", " +
                                    std::to_string(first + count) + ") out of " + std::to_string(c) + " channels");
    Tensor out({h, w, count});
    for (int p = 0; p < h * w; ++p) {
        const double* src = ta.data() + static_cast<size_t>(p) * c + first;
        std::copy(src, src + count, out.data() + static_cast<size_t>(p) * count);
    }
    return t.record(std::move(out), {a}, [h, w, c, first, count](const BackwardCtx& c2) {
        for (int p = 0; p < h * w; ++p) {
            const double* g = c2.upstream.data() + static_cast<size_t>(p) * count;
            double* gi = c2.input_grads[0]->data() + static_cast<size_t>(p) * c + first;
            for (int i = 0; i < count; ++i) gi[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// padding
// ---------------------------------------------------------------------------

inline Tensor pad_reflect_forward(const Tensor& x, int p) {
    int h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (h < 2 || w < 2) throw std::invalid_argument("pad_reflect: image must be at least 2x2, got " + shape_str(x.shape()));
    Tensor out({h + 2 * p, w + 2 * p, c});
    for (int y = 0; y < h + 2 * p; ++y) {
        int sy = detail::reflect_index(y - p, h);
        for (int xx = 0; xx < w + 2 * p; ++xx) {
            int sx = detail::reflect_index(xx - p, w);
            const double* src = x.data() + (static_cast<size_t>(sy) * w + sx) * c;
            double* dst = out.data() + (static_cast<size_t>(y) * (w + 2 * p) + xx) * c;
            std::copy(src, src + c, dst);
        }
    }
    return out;
}

inline Value pad_reflect(Tape& t, Value a, int p) {
    const Tensor& ta = t.value(a);
    require_image(ta, "pad_reflect");
    int h = ta.extent(0), w = ta.extent(1), c = ta.extent(2);
    return t.record(pad_reflect_forward(ta, p), {a}, [h, w, c, p](const BackwardCtx& ctx) {
        // fold: every padded position accumulates into its source pixel
        Tensor& gi = *ctx.input_grads[0];
        for (int y = 0; y < h + 2 * p; ++y) {
            int sy = detail::reflect_index(y - p, h);
            for (int xx = 0; xx < w + 2 * p; ++xx) {
                int sx = detail::reflect_index(xx - p, w);
                const double* g = ctx.upstream.data() + (static_cast<size_t>(y) * (w + 2 * p) + xx) * c;
                double* dst = gi.data() + (static_cast<size_t>(sy) * w + sx) * c;
                for (int i = 0; i < c; ++i) dst[i] += g[i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

inline void conv_valid_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, Tensor& out) {
    int hi = x.extent(0), wi = x.extent(1), ci = x.extent(2);
    int k = w.extent(0), co = w.extent(3);
    int ho = out.extent(0), wo = out.extent(1);
    const double* xd = x.data();
    const double* wd = w.data();
    const double* bd = b.data();
    double* od = out.data();
    (void)hi;
    parallel_for(ho, 8, [&](int y0, int y1) {
        for (int oy = y0; oy < y1; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double* acc = od + (static_cast<size_t>(oy) * wo + ox) * co;
                for (int c = 0; c < co; ++c) acc[c] = bd[c];
                for (int ky = 0; ky < k; ++ky) {
                    const double* xrow = xd + (static_cast<size_t>(oy * stride + ky) * wi + ox * stride) * ci;
                    const double* wrow = wd + static_cast<size_t>(ky) * k * ci * co;
                    for (int kx = 0; kx < k; ++kx) {
                        const double* xp = xrow + static_cast<size_t>(kx) * ci;
                        const double* wp = wrow + static_cast<size_t>(kx) * ci * co;
                        for (int c = 0; c < ci; ++c) {
                            double v = xp[c];
                            const double* ws = wp + static_cast<size_t>(c) * co;
                            for (int o = 0; o < co; ++o) acc[o] += v * ws[o];
                        }
                    }
                }
            }
        }
    });
}

inline void conv_valid_backward(const Tensor& x, const Tensor& w, const Tensor& up, int stride, Tensor& gx, Tensor& gw,
                                Tensor& gb) {
    int hi = x.extent(0), wi = x.extent(1), ci = x.extent(2);
    int k = w.extent(0), co = w.extent(3);
    int ho = up.extent(0), wo = up.extent(1);
    const double* xd = x.data();
    const double* wd = w.data();
    const double* ud = up.data();

    // input gradient: gather over contributing output positions
    if (stride == 1) {
        parallel_for(hi, 8, [&](int y0, int y1) {
            for (int iy = y0; iy < y1; ++iy) {
                int ky0 = std::max(0, iy - (ho - 1)), ky1 = std::min(k - 1, iy);
                for (int ix = 0; ix < wi; ++ix) {
                    double* gp = gx.data() + (static_cast<size_t>(iy) * wi + ix) * ci;
                    int kx0 = std::max(0, ix - (wo - 1)), kx1 = std::min(k - 1, ix);
                    for (int ky = ky0; ky <= ky1; ++ky) {
                        const double* urow = ud + static_cast<size_t>(iy - ky) * wo * co;
                        const double* wrow = wd + static_cast<size_t>(ky) * k * ci * co;
                        for (int kx = kx0; kx <= kx1; ++kx) {
                            const double* u = urow + static_cast<size_t>(ix - kx) * co;
                            const double* wp = wrow + static_cast<size_t>(kx) * ci * co;
                            for (int c = 0; c < ci; ++c) {
                                const double* ws = wp + static_cast<size_t>(c) * co;
                                double s = 0.0;
                                for (int o = 0; o < co; ++o) s += u[o] * ws[o];
                                gp[c] += s;
                            }
                        }
                    }
                }
            }
        });
    } else {
        parallel_for(hi, 8, [&](int y0, int y1) {
            for (int iy = y0; iy < y1; ++iy) {
                for (int ix = 0; ix < wi; ++ix) {
                    double* gp = gx.data() + (static_cast<size_t>(iy) * wi + ix) * ci;
                    for (int ky = 0; ky < k; ++ky) {
                        int ry = iy - ky;
                        if (ry < 0 || ry % stride != 0) continue;
                        int oy = ry / stride;
                        if (oy >= ho) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            int rx = ix - kx;
                            if (rx < 0 || rx % stride != 0) continue;
                            int ox = rx / stride;
                            if (ox >= wo) continue;
                            const double* u = ud + (static_cast<size_t>(oy) * wo + ox) * co;
                            const double* wp = wd + (static_cast<size_t>(ky) * k + kx) * ci * co;
                            for (int c = 0; c < ci; ++c) {
                                const double* ws = wp + static_cast<size_t>(c) * co;
                                double s = 0.0;
                                for (int o = 0; o < co; ++o) s += u[o] * ws[o];
                                gp[c] += s;
                            }
                        }
                    }
                }
            }
        });
    }

    // weight gradient: one (ky,kx) slice per task so writes stay disjoint and
    // each entry accumulates in a fixed pixel order
    parallel_for(k * k, 1, [&](int t0, int t1) {
        for (int tap = t0; tap < t1; ++tap) {
            int ky = tap / k, kx = tap % k;
            double* gwp = gw.data() + static_cast<size_t>(tap) * ci * co;
            for (int oy = 0; oy < ho; ++oy) {
                const double* xrow = xd + (static_cast<size_t>(oy * stride + ky) * wi + kx) * ci;
                const double* urow = ud + static_cast<size_t>(oy) * wo * co;
                for (int ox = 0; ox < wo; ++ox) {
                    const double* xp = xrow + static_cast<size_t>(ox) * stride * ci;
                    const double* u = urow + static_cast<size_t>(ox) * co;
                    for (int c = 0; c < ci; ++c) {
                        double v = xp[c];
                        double* gws = gwp + static_cast<size_t>(c) * co;
                        for (int o = 0; o < co; ++o) gws[o] += v * u[o];
                    }
                }
            }
        }
    });

    for (int p = 0; p < ho * wo; ++p) {
        const double* u = ud + static_cast<size_t>(p) * co;
        for (int o = 0; o < co; ++o) gb[o] += u[o];
    }
}

inline Value conv_valid(Tape& t, Value x, Value w, Value b, int stride) {
    const Tensor &tx = t.value(x), &tw = t.value(w), &tb = t.value(b);
    require_image(tx, "conv2d");
    if (tw.rank() != 4 || tw.extent(0) != tw.extent(1))
        throw std::invalid_argument("conv2d: kernel must be k x k x Cin x Cout, got " + shape_str(tw.shape()));
    int k = tw.extent(0);
    if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd, got " + std::to_string(k));
    if (tw.extent(2) != tx.extent(2))
        throw std::invalid_argument("conv2d: input has " + std::to_string(tx.extent(2)) +
                                    " channels but kernel expects " + std::to_string(tw.extent(2)));
    int co = tw.extent(3);
    if (tb.rank() != 1 || tb.extent(0) != co)
        throw std::invalid_argument("conv2d: bias must be a length-" + std::to_string(co) + " vector, got " +
                                    shape_str(tb.shape()));
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (tx.extent(0) < k || tx.extent(1) < k)
        throw std::invalid_argument("conv2d: input " + shape_str(tx.shape()) + " smaller than kernel " +
                                    std::to_string(k) + "x" + std::to_string(k));

    int ho = (tx.extent(0) - k) / stride + 1;
    int wo = (tx.extent(1) - k) / stride + 1;
    Tensor out({ho, wo, co});
    conv_valid_forward(tx, tw, tb, stride, out);
    return t.record(std::move(out), {x, w, b}, [stride](const BackwardCtx& c) {
        conv_valid_backward(*c.inputs[0], *c.inputs[1], c.upstream, stride, *c.input_grads[0], *c.input_grads[1],
                            *c.input_grads[2]);
    });
}

}  // namespace detail

/// 2-d cross-correlation, kernel k x k x Cin x Cout, H x W x C layout.
/// padding=reflect keeps output positions centered at (stride*i, stride*j),
/// so stride 1 preserves the spatial shape and stride s yields ceil(H/s).
inline Value conv2d(Tape& t, Value x, Value w, Value b, int stride, Padding padding) {
    if (padding == Padding::none) return detail::conv_valid(t, x, w, b, stride);
    const Tensor& tw = t.value(w);
    if (tw.rank() != 4) throw std::invalid_argument("conv2d: kernel must be k x k x Cin x Cout, got " + shape_str(tw.shape()));
    int k = tw.extent(0);
    int p = (k - 1) / 2;
    Value padded = pad_reflect(t, x, p);
    // trim the padded input so the valid conv lands on ceil(H/s) x ceil(W/s)
    const Tensor& tx = t.value(x);
    int h = tx.extent(0), wdt = tx.extent(1);
    int ho = (h + stride - 1) / stride, wo = (wdt + stride - 1) / stride;
    int need_h = (ho - 1) * stride + k, need_w = (wo - 1) * stride + k;
    if (need_h > h + 2 * p || need_w > wdt + 2 * p)
        throw std::logic_error("conv2d: internal padding shortfall");
    if (need_h < h + 2 * p || need_w < wdt + 2 * p) {
        // crop trailing padded rows/cols the strided grid never reads
        const Tensor& tp = t.value(padded);
        int c = tp.extent(2);
        Tensor cropped({need_h, need_w, c});
        for (int y = 0; y < need_h; ++y)
            std::copy(tp.data() + static_cast<size_t>(y) * (wdt + 2 * p) * c,
                      tp.data() + (static_cast<size_t>(y) * (wdt + 2 * p) + need_w) * c,
                      cropped.data() + static_cast<size_t>(y) * need_w * c);
        int full_w = wdt + 2 * p;
        padded = t.record(std::move(cropped), {padded}, [need_h, need_w, full_w, c](const BackwardCtx& ctx) {
            for (int y = 0; y < need_h; ++y) {
                const double* g = ctx.upstream.data() + static_cast<size_t>(y) * need_w * c;
                double* gi = ctx.input_grads[0]->data() + static_cast<size_t>(y) * full_w * c;
                for (int i = 0; i < need_w * c; ++i) gi[i] += g[i];
            }
        });
    }
    return detail::conv_valid(t, padded, w, b, stride);
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

/// 2x2 max pool over disjoint windows; odd trailing row/column is cropped.
/// Ties route the gradient to the first maximal element in row-major order.
inline Value maxpool2x2(Tape& t, Value a) {
    const Tensor& ta = t.value(a);
    require_image(ta, "maxpool2x2");
    if (ta.empty()) throw std::invalid_argument("maxpool2x2: empty tensor");
    int h = ta.extent(0) / 2, w = ta.extent(1) / 2, c = ta.extent(2);
    if (h < 1 || w < 1) throw std::invalid_argument("maxpool2x2: image too small " + shape_str(ta.shape()));
    int wi = ta.extent(1);
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double m = ta.at(2 * y, 2 * x, ch);
                m = std::max(m, ta.at(2 * y, 2 * x + 1, ch));
                m = std::max(m, ta.at(2 * y + 1, 2 * x, ch));
                m = std::max(m, ta.at(2 * y + 1, 2 * x + 1, ch));
                out.at(y, x, ch) = m;
            }
    return t.record(std::move(out), {a}, [h, w, c, wi](const BackwardCtx& ctx) {
        const Tensor& v = *ctx.inputs[0];
        Tensor& g = *ctx.input_grads[0];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    double m = ctx.self.data()[(static_cast<size_t>(y) * w + x) * c + ch];
                    double up = ctx.upstream.data()[(static_cast<size_t>(y) * w + x) * c + ch];
                    for (int i = 0; i < 4; ++i) {
                        size_t idx = (static_cast<size_t>(2 * y + i / 2) * wi + 2 * x + i % 2) * c + ch;
                        if (v.data()[idx] == m) {
                            g.data()[idx] += up;
                            break;
                        }
                    }
                }
    });
}

/// Spatial mean per channel: H x W x C -> length-C vector.
inline Value global_mean_pool(Tape& t, Value a) {
    const Tensor& ta = t.value(a);
    require_image(ta, "global_mean_pool");
    if (ta.empty()) throw std::invalid_argument("global_mean_pool: empty tensor");
    int h = ta.extent(0), w = ta.extent(1), c = ta.extent(2);
    Tensor out({c});
    for (int p = 0; p < h * w; ++p) {
        const double* src = ta.data() + static_cast<size_t>(p) * c;
        for (int ch = 0; ch < c; ++ch) out[ch] += src[ch];
    }
    for (int ch = 0; ch < c; ++ch) out[ch] /= h * w;
    return t.record(std::move(out), {a}, [h, w, c](const BackwardCtx& ctx) {
        Tensor& g = *ctx.input_grads[0];
        for (int p = 0; p < h * w; ++p) {
            double* dst = g.data() + static_cast<size_t>(p) * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += ctx.upstream[ch] / (h * w);
        }
    });
}

enum class Pool { max2x2, global_mean };

inline Value pool(Tape& t, Value a, Pool kind) {
    return kind == Pool::max2x2 ? maxpool2x2(t, a) : global_mean_pool(t, a);
}

/// 2x2 mean downsample (for multi-scale SSIM); odd trailing row/col cropped.
inline Value downsample2x2_mean(Tape& t, Value a) {
    const Tensor& ta = t.value(a);
    require_image(ta, "downsample2x2_mean");
    int h = ta.extent(0) / 2, w = ta.extent(1) / 2, c = ta.extent(2);
    if (h < 1 || w < 1) throw std::invalid_argument("downsample2x2_mean: image too small " + shape_str(ta.shape()));
    int wi = ta.extent(1);
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                out.at(y, x, ch) = 0.25 * (ta.at(2 * y, 2 * x, ch) + ta.at(2 * y, 2 * x + 1, ch) +
                                           ta.at(2 * y + 1, 2 * x, ch) + ta.at(2 * y + 1, 2 * x + 1, ch));
    return t.record(std::move(out), {a}, [h, w, c, wi](const BackwardCtx& ctx) {
        Tensor& g = *ctx.input_grads[0];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    double up = 0.25 * ctx.upstream.data()[(static_cast<size_t>(y) * w + x) * c + ch];
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx)
                            g.data()[(static_cast<size_t>(2 * y + dy) * wi + 2 * x + dx) * c + ch] += up;
                }
    });
}

/// Per-pixel mean over a win x win reflect-extended neighborhood.
inline Value box_mean(Tape& t, Value a, int win) {
    const Tensor& ta = t.value(a);
    require_image(ta, "box_mean");
    if (win < 1 || win % 2 == 0) throw std::invalid_argument("box_mean: window must be odd and positive");
    int h = ta.extent(0), w = ta.extent(1), c = ta.extent(2);
    int r = win / 2;
    double norm = 1.0 / (win * win);
    Tensor out({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (int dy = -r; dy <= r; ++dy) {
                    int sy = detail::reflect_index(y + dy, h);
                    for (int dx = -r; dx <= r; ++dx) s += ta.at(sy, detail::reflect_index(x + dx, w), ch);
                }
                out.at(y, x, ch) = s * norm;
            }
    return t.record(std::move(out), {a}, [h, w, c, r, norm](const BackwardCtx& ctx) {
        Tensor& g = *ctx.input_grads[0];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) {
                    double up = ctx.upstream.data()[(static_cast<size_t>(y) * w + x) * c + ch] * norm;
                    for (int dy = -r; dy <= r; ++dy) {
                        int sy = detail::reflect_index(y + dy, h);
                        for (int dx = -r; dx <= r; ++dx) {
                            int sx = detail::reflect_index(x + dx, w);
                            g.data()[(static_cast<size_t>(sy) * w + sx) * c + ch] += up;
                        }
                    }
                }
    });
}

// ---------------------------------------------------------------------------
// affine
// ---------------------------------------------------------------------------

/// y = W x + b with x a length-n vector, W m x n, b length m.
inline Value affine(Tape& t, Value x, Value w, Value b) {
    const Tensor &tx = t.value(x), &tw = t.value(w), &tb = t.value(b);
    if (tx.rank() != 1) throw std::invalid_argument("affine: input must be a vector, got " + shape_str(tx.shape()));
    if (tw.rank() != 2 || tw.extent(1) != tx.extent(0))
        throw std::invalid_argument("affine: weights " + shape_str(tw.shape()) + " incompatible with input " +
                                    shape_str(tx.shape()));
    int m = tw.extent(0), n = tw.extent(1);
    if (tb.rank() != 1 || tb.extent(0) != m)
        throw std::invalid_argument("affine: bias " + shape_str(tb.shape()) + " incompatible with weights " +
                                    shape_str(tw.shape()));
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        double s = tb[i];
        const double* row = tw.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) s += row[j] * tx[j];
        out[i] = s;
    }
    return t.record(std::move(out), {x, w, b}, [m, n](const BackwardCtx& c) {
        const Tensor &vx = *c.inputs[0], &vw = *c.inputs[1];
        Tensor &gx = *c.input_grads[0], &gw = *c.input_grads[1], &gb = *c.input_grads[2];
        for (int i = 0; i < m; ++i) {
            double u = c.upstream[i];
            const double* row = vw.data() + static_cast<size_t>(i) * n;
            double* growr = gw.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                gx[j] += u * row[j];
                growr[j] += u * vx[j];
            }
            gb[i] += u;
        }
    });
}

}  // namespace deepisp
