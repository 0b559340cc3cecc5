#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deepisp/color.hpp"
#include "deepisp/gradcheck.hpp"
#include "deepisp/ops.hpp"
#include "deepisp/rng.hpp"
#include "oracles.hpp"

using namespace deepisp;

namespace {

Tensor random_rgb(Rng& rng, int h, int w, double lo = 0.0, double hi = 1.0) {
    Tensor t({h, w, 3});
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("bayer: each 2x2 cell has one R, one B, two G") {
    for (BayerPattern p : {BayerPattern::RGGB, BayerPattern::GRBG, BayerPattern::GBRG, BayerPattern::BGGR}) {
        int counts[3] = {0, 0, 0};
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) counts[bayer_channel_at(p, y, x)]++;
        CHECK(counts[0] == 1);
        CHECK(counts[1] == 2);
        CHECK(counts[2] == 1);
    }
}

TEST_CASE("bayer: flip tags track mirrored sampling sites") {
    for (BayerPattern p : {BayerPattern::RGGB, BayerPattern::GRBG, BayerPattern::GBRG, BayerPattern::BGGR}) {
        int w = 6, h = 6;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                CHECK(bayer_channel_at(bayer_flip_h(p), y, x) == bayer_channel_at(p, y, w - 1 - x));
                CHECK(bayer_channel_at(bayer_flip_v(p), y, x) == bayer_channel_at(p, h - 1 - y, x));
            }
        CHECK(bayer_parse(bayer_name(p)) == p);
    }
}

TEST_CASE("mosaic: constant gray and pure red") {
    Tensor gray = Tensor::full({4, 4, 3}, 0.5);
    for (BayerPattern p : {BayerPattern::RGGB, BayerPattern::GRBG, BayerPattern::GBRG, BayerPattern::BGGR}) {
        RawImage raw = mosaic(gray, p);
        for (int i = 0; i < raw.data.size(); ++i) CHECK(raw.data[i] == 0.5);
    }
    Tensor red({4, 4, 3});
    for (int p = 0; p < 16; ++p) red[p * 3] = 1.0;
    RawImage raw = mosaic(red, BayerPattern::RGGB);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(raw.data.at(y, x, 0) == (bayer_channel_at(BayerPattern::RGGB, y, x) == 0 ? 1.0 : 0.0));

    CHECK_THROWS_AS(mosaic(Tensor({3, 4, 3}), BayerPattern::RGGB), std::invalid_argument);
}

TEST_CASE("demosaic: constant raw gives constant RGB") {
    RawImage raw{Tensor::full({6, 6, 1}, 0.7), BayerPattern::GRBG};
    Tensor rgb = bilinear_demosaic(raw);
    for (int i = 0; i < rgb.size(); ++i) CHECK(rgb[i] == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("demosaic: G at an interior R site is the 4-neighbor cross mean") {
    Rng rng(31);
    Tensor img = random_rgb(rng, 6, 6);
    RawImage raw = mosaic(img, BayerPattern::RGGB);
    Tensor rgb = bilinear_demosaic(raw);
    // (2,2) is an R site under RGGB
    double expect = 0.25 * (raw.data.at(1, 2, 0) + raw.data.at(3, 2, 0) + raw.data.at(2, 1, 0) + raw.data.at(2, 3, 0));
    CHECK(rgb.at(2, 2, 1) == doctest::Approx(expect).epsilon(1e-15));
    CHECK(rgb.at(2, 2, 0) == raw.data.at(2, 2, 0));
}

TEST_CASE("demosaic: matches the mask-convolution oracle exactly") {
    Rng rng(37);
    for (BayerPattern p : {BayerPattern::RGGB, BayerPattern::GRBG, BayerPattern::GBRG, BayerPattern::BGGR}) {
        Tensor raw_plane({8, 10, 1});
        for (int i = 0; i < raw_plane.size(); ++i) raw_plane[i] = rng.uniform();
        RawImage raw{raw_plane, p};
        Tensor got = bilinear_demosaic(raw);
        Tensor expect = oracle::demosaic(raw.data, p);
        for (int i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-13));
    }
}

TEST_CASE("demosaic: mosaic then demosaic is exact at sampled sites, close on smooth fields") {
    // analytic linear gradient; interior bilinear interpolation recovers it
    int h = 16, w = 16;
    Tensor img({h, w, 3});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.2 + 0.4 * (x + y) / (h + w - 2.0);
    RawImage raw = mosaic(img, BayerPattern::RGGB);
    Tensor rgb = bilinear_demosaic(raw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int own = bayer_channel_at(BayerPattern::RGGB, y, x);
            CHECK(rgb.at(y, x, own) == raw.data.at(y, x, 0));
        }
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x)
            for (int c = 0; c < 3; ++c) CHECK(std::fabs(rgb.at(y, x, c) - img.at(y, x, c)) < 1e-3);
}

TEST_CASE("rgb_to_lab: white, black, neutral gray") {
    Tensor white = Tensor::full({1, 1, 3}, 1.0);
    Tensor lab = rgb_to_lab(white);
    CHECK(lab[0] == doctest::Approx(100.0).epsilon(1e-10));
    CHECK(std::fabs(lab[1]) < 1e-9);
    CHECK(std::fabs(lab[2]) < 1e-9);

    Tensor black = Tensor({1, 1, 3});
    lab = rgb_to_lab(black);
    CHECK(lab[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::fabs(lab[1]) < 1e-9);
    CHECK(std::fabs(lab[2]) < 1e-9);

    Tensor gray = Tensor::full({1, 1, 3}, 0.5);
    lab = rgb_to_lab(gray);
    auto expect = oracle::rgb_to_lab(0.5, 0.5, 0.5);
    CHECK(lab[0] == doctest::Approx(expect[0]).epsilon(1e-6));
    CHECK(std::fabs(lab[1]) < 1e-9);
    CHECK(std::fabs(lab[2]) < 1e-9);
}

TEST_CASE("rgb_to_lab: matches the standalone reference on random colors") {
    Rng rng(41);
    for (int i = 0; i < 200; ++i) {
        double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
        Tensor px({1, 1, 3}, {r, g, b});
        Tensor lab = rgb_to_lab(px);
        auto expect = oracle::rgb_to_lab(r, g, b);
        for (int c = 0; c < 3; ++c) CHECK(lab[c] == doctest::Approx(expect[c]).epsilon(1e-9));
    }
}

TEST_CASE("rgb_to_lab: neutral grays stay neutral across the range") {
    Rng rng(43);
    for (int i = 0; i < 100; ++i) {
        double v = rng.uniform();
        Tensor lab = rgb_to_lab(Tensor::full({1, 1, 3}, v));
        CHECK(std::fabs(lab[1]) < 1e-9);
        CHECK(std::fabs(lab[2]) < 1e-9);
    }
}

TEST_CASE("rgb_to_lab: L is monotone in each channel") {
    Rng rng(47);
    for (int i = 0; i < 100; ++i) {
        double base[3] = {rng.uniform(0.0, 0.9), rng.uniform(0.0, 0.9), rng.uniform(0.0, 0.9)};
        double l0 = rgb_pixel_to_lab(base)[0];
        for (int c = 0; c < 3; ++c) {
            double bumped[3] = {base[0], base[1], base[2]};
            bumped[c] += 0.05;
            CHECK(rgb_pixel_to_lab(bumped)[0] >= l0);
        }
    }
}

TEST_CASE("rgb_to_lab: backward matches finite differences away from the knee") {
    Rng rng(53);
    LossBuilder build = [](Tape& t, const std::vector<Value>& in) {
        Rng wr(99);
        const Tensor& v = t.value(in[0]);
        Tensor w(v.shape());
        for (int i = 0; i < w.size(); ++i) w[i] = wr.uniform(0.5, 1.5);
        return mean_all(t, mul(t, rgb_to_lab_node(t, in[0]), t.input(w)));
    };
    for (int i = 0; i < 20; ++i) {
        Tensor px = random_rgb(rng, 3, 3, 0.08, 0.95);
        CHECK(grad_check(build, {px}, 1e-6) < 1e-5);
    }
}

TEST_CASE("luminance: rescaled L channel") {
    Tensor lab({1, 1, 3}, {100.0, 0.0, 0.0});
    CHECK(luminance(lab)[0] == 1.0);
    lab = Tensor({1, 1, 3}, {0.0, 5.0, -5.0});
    CHECK(luminance(lab)[0] == 0.0);
    lab = Tensor({1, 1, 3}, {53.39, 0.0, 0.0});
    CHECK(luminance(lab)[0] == doctest::Approx(0.5339).epsilon(1e-12));
}

TEST_CASE("histogram_stretch: fixed point, degenerate, two-level") {
    // image already spanning [0,1] with 5% of pixels at each extreme
    {
        int n = 400;
        Tensor img({20, 20, 3});
        for (int p = 0; p < n; ++p) {
            double v;
            if (p < n / 20) v = 0.0;
            else if (p >= n - n / 20) v = 1.0;
            else v = 0.02 + 0.96 * (p - n / 20.0) / (n - n / 10.0);
            for (int c = 0; c < 3; ++c) img[p * 3 + c] = v;
        }
        StretchResult res = histogram_stretch(img);
        CHECK_FALSE(res.degenerate);
        for (int i = 0; i < img.size(); ++i) CHECK(std::fabs(res.rgb[i] - img[i]) < 1e-6);
    }
    // constant image: unchanged, flagged
    {
        Tensor img = Tensor::full({8, 8, 3}, 0.3);
        StretchResult res = histogram_stretch(img);
        CHECK(res.degenerate);
        for (int i = 0; i < img.size(); ++i) CHECK(res.rgb[i] == 0.3);
    }
    // two-level image: 40% at 0.4 -> 0, 60% at 0.6 -> 1
    {
        Tensor img({10, 10, 3});
        for (int p = 0; p < 100; ++p) {
            double v = p < 40 ? 0.4 : 0.6;
            for (int c = 0; c < 3; ++c) img[p * 3 + c] = v;
        }
        StretchResult res = histogram_stretch(img);
        CHECK_FALSE(res.degenerate);
        for (int p = 0; p < 100; ++p) {
            double expect = p < 40 ? 0.0 : 1.0;
            for (int c = 0; c < 3; ++c) CHECK(res.rgb[p * 3 + c] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}
