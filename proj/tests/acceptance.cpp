// Acceptance suite: one check per numbered criterion, each printing a single
// PASS/FAIL line. Run all (no arguments) or one (--criterion N).
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "deepisp/deepisp.hpp"
#include "oracles.hpp"

using namespace deepisp;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int number;
    std::string title;
    std::function<bool(std::string&)> run;
};

double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir() {
    fs::path dir = fs::temp_directory_path() / "deepisp_acceptance";
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

Tensor random_unit(Rng& rng, Shape shape, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

double max_rel_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-30});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

ModelParams zero_identity_params(const ModelConfig& cfg) {
    ModelParams p = init_params(0, cfg);
    for (auto& block : p.lowlevel) {
        block.kernel = Tensor(block.kernel.shape());
        block.bias = Tensor(block.bias.shape());
    }
    for (auto& block : p.highlevel) {
        block.kernel = Tensor(block.kernel.shape());
        block.bias = Tensor(block.bias.shape());
    }
    p.head_weight = Tensor(p.head_weight.shape());
    p.head_bias = Tensor(p.head_bias.shape());
    for (int i = 0; i < 30; ++i) p.head_bias[i] = ColorTransform::identity().w[i];
    return p;
}

// shared desk-scale training budget (criterion 4; criteria 5-6 reuse it
// scaled down)
TrainConfig desk_config(const fs::path& dir, const std::string& tag, uint64_t seed) {
    TrainConfig cfg = TrainConfig::defaults_for(Task::denoise_demosaic);
    cfg.n_ll = 6;
    cfg.width = 16;
    cfg.epochs = 10;  // 200 pairs x 10 epochs = 2000 steps
    cfg.patch_size = 64;
    cfg.seed = seed;
    cfg.synth_count = 200;
    cfg.synth_size = 64;
    cfg.synth_exposure = 1.0;
    cfg.synth_sigma_lo = 1.0;
    cfg.synth_sigma_hi = 10.0;
    cfg.val_count = 20;
    cfg.adam.lr = 1e-3;  // desk-scale rate; the paper-scale default is far too slow for 2000 steps
    cfg.checkpoint_path = (dir / (tag + ".ckpt")).string();
    cfg.log_path = (dir / (tag + ".csv")).string();
    cfg.checkpoint_interval = 1000;
    return cfg;
}

double mean_val_combined_loss(const TrainConfig& cfg, const ModelParams& params) {
    Dataset val = load_val_dataset(cfg);
    double total = 0.0;
    for (const ImagePair& pair : val.pairs) {
        Tensor out = infer(params, cfg.task, pair.raw, false, cfg.no_skip, cfg.no_shared);
        total += combined_loss_value(out, pair.target, cfg.loss_config());
    }
    return total / static_cast<double>(val.size());
}

// --------------------------------------------------------------------------
// criteria
// --------------------------------------------------------------------------

bool criterion_gradients(std::string& detail) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<GradCheckItem> items = gradcheck_suite(1, 100, 2);
    double worst = 0.0;
    bool pass = true;
    for (const GradCheckItem& item : items) {
        worst = std::max(worst, item.max_rel_err);
        if (!item.pass()) {
            pass = false;
            detail += item.name + " err " + std::to_string(item.max_rel_err) + "; ";
        }
    }
    double secs = elapsed_seconds(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu items, worst rel err %.2e, %.1f s", items.size(), worst, secs);
    detail = buf + (detail.empty() ? "" : " | " + detail);
    return pass && secs < 120.0;
}

bool criterion_oracles(std::string& detail) {
    Rng rng(20240801);
    double worst = 0.0;
    const double tol = 1e-9;

    for (int iter = 0; iter < 50; ++iter) {
        // conv2d
        {
            int ci = 1 + rng.uniform_int(3), co = 1 + rng.uniform_int(4);
            int stride = 1 + rng.uniform_int(2);
            bool reflect = rng.coin();
            Tensor x = random_unit(rng, {6 + rng.uniform_int(3), 6 + rng.uniform_int(3), ci}, -1, 1);
            Tensor k = random_unit(rng, {3, 3, ci, co}, -1, 1);
            Tensor b = random_unit(rng, {co}, -1, 1);
            Tape t;
            const Tensor& got = t.value(
                conv2d(t, t.input(x), t.input(k), t.input(b), stride, reflect ? Padding::reflect : Padding::none));
            worst = std::max(worst, max_rel_diff(got, oracle::conv2d(x, k, b, stride, reflect)));
        }
        // affine
        {
            Tensor w = random_unit(rng, {4, 6}, -1, 1);
            Tensor x = random_unit(rng, {6}, -1, 1);
            Tensor b = random_unit(rng, {4}, -1, 1);
            std::vector<std::vector<double>> wo(4, std::vector<double>(6));
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 6; ++j) wo[i][j] = w.at(i, j);
            auto expect = oracle::affine(wo, {x.data(), x.data() + 6}, {b.data(), b.data() + 4});
            Tape t;
            const Tensor& got = t.value(affine(t, t.input(x), t.input(w), t.input(b)));
            for (int i = 0; i < 4; ++i)
                worst = std::max(worst, std::fabs(got[i] - expect[i]) / std::max({std::fabs(expect[i]), 1e-30}));
        }
        // bilinear demosaic
        {
            BayerPattern p = static_cast<BayerPattern>(rng.uniform_int(4));
            Tensor plane = random_unit(rng, {8, 8, 1});
            RawImage raw{plane, p};
            worst = std::max(worst, max_rel_diff(bilinear_demosaic(raw), oracle::demosaic(plane, p)));
        }
        // monomials + quadratic transform
        {
            double r = rng.uniform(), g = rng.uniform(), b = rng.uniform();
            auto got = monomials(r, g, b);
            auto expect = oracle::monomials(r, g, b);
            for (int j = 0; j < 10; ++j)
                worst = std::max(worst, std::fabs(got[j] - expect[j]) / std::max(std::fabs(expect[j]), 1e-30));

            ColorTransform t;
            double w[3][10];
            for (int c = 0; c < 3; ++c)
                for (int j = 0; j < 10; ++j) w[c][j] = t.w.at(c, j) = rng.uniform(-0.5, 0.5);
            Tensor im = random_unit(rng, {4, 4, 3});
            Tensor out = apply_quadratic_transform(im, t, false);
            for (int p = 0; p < 16; ++p) {
                auto e = oracle::apply_transform(w, im[p * 3], im[p * 3 + 1], im[p * 3 + 2]);
                for (int c = 0; c < 3; ++c)
                    worst = std::max(worst, std::fabs(out[p * 3 + c] - e[c]) / std::max(std::fabs(e[c]), 1e-30));
            }
        }
        // SSIM map mean and two-scale MS-SSIM
        {
            Tensor a = random_unit(rng, {12, 12, 1});
            Tensor b = random_unit(rng, {12, 12, 1});
            Tape t;
            Value map = ssim_map(t, t.input(a), t.input(b), 5, 1e-4, 9e-4);
            const Tensor& got = t.value(mean_all(t, map));
            double expect = oracle::ssim_mean(a, b, 5, 1e-4, 9e-4);
            worst = std::max(worst, std::fabs(got[0] - expect) / std::fabs(expect));

            LossConfig cfg;
            double ms = ms_ssim_value(a, b, cfg);
            double ms_expect = oracle::ms_ssim(a, b, cfg.msssim_scales, cfg.msssim_window, cfg.c1, cfg.c2);
            worst = std::max(worst, std::fabs(ms - ms_expect) / std::fabs(ms_expect));
        }
        // PSNR
        {
            Tensor a = random_unit(rng, {6, 6, 3});
            Tensor b = random_unit(rng, {6, 6, 3});
            double got = psnr(a, b, PsnrSpace::linear);
            double expect = oracle::psnr_linear(a, b);
            worst = std::max(worst, std::fabs(got - expect) / std::fabs(expect));
        }
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "50 instances per op, worst rel diff %.2e", worst);
    detail = buf;
    return worst < tol;
}

bool criterion_identity(std::string& detail) {
    Rng rng(314159);
    bool pass = true;

    // zero-weight network + identity head is the identity map
    ModelConfig cfg{4, 2, 16};
    ModelParams params = zero_identity_params(cfg);
    Tensor img = random_unit(rng, {32, 32, 3});
    Tape t;
    ModelNodes nodes = register_params(t, params);
    const Tensor& out = t.value(deepisp_forward(t, t.input(img), nodes, cfg));
    for (int i = 0; i < img.size(); ++i)
        if (out[i] != img[i]) pass = false;

    // combined_loss(x, x) = 0, ms_ssim(x, x) = 1
    Tensor x = random_unit(rng, {16, 16, 3}, 0.05, 0.95);
    if (std::fabs(combined_loss_value(x, x, LossConfig{})) > 1e-12) pass = false;
    Tensor l = luminance(rgb_to_lab(x));
    if (std::fabs(ms_ssim_value(l, l, LossConfig{}) - 1.0) > 1e-12) pass = false;

    // identity transform is exact
    Tensor mapped = apply_quadratic_transform(x, ColorTransform::identity());
    for (int i = 0; i < x.size(); ++i)
        if (mapped[i] != x[i]) pass = false;

    // Lab of neutral grays has |a|, |b| < 1e-9
    double worst_ab = 0.0;
    for (int i = 0; i <= 100; ++i) {
        Tensor lab = rgb_to_lab(Tensor::full({1, 1, 3}, i / 100.0));
        worst_ab = std::max({worst_ab, std::fabs(lab[1]), std::fabs(lab[2])});
    }
    if (worst_ab >= 1e-9) pass = false;

    char buf[96];
    std::snprintf(buf, sizeof(buf), "identity paths exact, neutral-gray |a|,|b| max %.1e", worst_ab);
    detail = buf;
    return pass;
}

bool criterion_denoise_gain(std::string& detail) {
    auto t0 = std::chrono::steady_clock::now();
    fs::path dir = work_dir();
    TrainConfig cfg = desk_config(dir, "criterion4", 1);
    TrainResult result = train_loop(cfg);

    Dataset val = load_val_dataset(cfg);
    EvalReport model_report = evaluate_dataset(result.checkpoint.params, cfg.task, val, cfg.loss_config());
    EvalReport base_report = evaluate_dataset(result.checkpoint.params, cfg.task, val, cfg.loss_config(), true);
    double model_db = model_report.aggregate().psnr_linear;
    double base_db = base_report.aggregate().psnr_linear;
    double secs = elapsed_seconds(t0);

    char buf[160];
    std::snprintf(buf, sizeof(buf), "model %.2f dB vs bilinear %.2f dB (gain %.2f, need >= 3.00) in %.0f s",
                  model_db, base_db, model_db - base_db, secs);
    detail = buf;
    return model_db - base_db >= 3.0 && secs <= 30 * 60;
}

bool criterion_sweeps(std::string& detail) {
    fs::path dir = work_dir();
    auto train_psnr = [&](const std::string& tag, int n_ll, int width) {
        TrainConfig cfg = desk_config(dir, tag, 1);
        cfg.n_ll = n_ll;
        cfg.width = width;
        cfg.epochs = 5;  // half the criterion-4 budget per sweep arm
        TrainResult result = train_loop(cfg);
        Dataset val = load_val_dataset(cfg);
        return evaluate_dataset(result.checkpoint.params, cfg.task, val, cfg.loss_config()).aggregate().psnr_linear;
    };

    double depth_first = 0.0, depth_last = 0.0;
    for (int depth : {1, 2, 4, 8}) {
        double db = train_psnr("sweep_depth" + std::to_string(depth), depth, 16);
        if (depth == 1) depth_first = db;
        if (depth == 8) depth_last = db;
    }
    double width_first = 0.0, width_last = 0.0;
    for (int width : {4, 16, 64}) {
        double db = train_psnr("sweep_width" + std::to_string(width), 6, width);
        if (width == 4) width_first = db;
        if (width == 64) width_last = db;
    }
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "depth: %.2f dB @1 -> %.2f dB @8 (gap %.2f); width: %.2f dB @4 -> %.2f dB @64 (gap %.2f); need >= 0.5",
                  depth_first, depth_last, depth_last - depth_first, width_first, width_last,
                  width_last - width_first);
    detail = buf;
    return depth_last - depth_first >= 0.5 && width_last - width_first >= 0.5;
}

bool criterion_skip_ablation(std::string& detail) {
    fs::path dir = work_dir();
    std::vector<double> ratios;
    for (uint64_t seed : {1, 2, 3}) {
        auto final_loss = [&](bool no_skip) {
            TrainConfig cfg = desk_config(dir, "skip" + std::to_string(seed) + (no_skip ? "b" : "a"), seed);
            cfg.n_ll = 12;
            cfg.epochs = 4;
            cfg.synth_count = 100;
            // a residual-friendly rate a plain 12-layer stack cannot tolerate;
            // at gentler rates the instability takes far more epochs to show
            cfg.adam.lr = 1e-2;
            cfg.no_skip = no_skip;
            return train_loop(cfg).final_epoch_loss;
        };
        double with_skip = final_loss(false);
        double without_skip = final_loss(true);
        ratios.push_back(without_skip / with_skip);
    }
    std::sort(ratios.begin(), ratios.end());
    char buf[128];
    std::snprintf(buf, sizeof(buf), "no-skip/skip final-loss ratios %.2f / %.2f / %.2f (median, need >= 2)",
                  ratios[0], ratios[1], ratios[2]);
    detail = buf;
    return ratios[1] >= 2.0;
}

bool criterion_shared_ablation(std::string& detail) {
    fs::path dir = work_dir();
    std::vector<double> gaps;
    int params_shared = 0, params_ablated = 0;
    // arms share seed, init, data, and parameter count; only the wiring of
    // the high-level input differs (features vs zero-padded estimate)
    for (uint64_t seed : {1, 2, 3}) {
        auto val_loss = [&](bool no_shared, int* param_count) {
            TrainConfig cfg = desk_config(dir, "shared" + std::to_string(seed) + (no_shared ? "b" : "a"), seed);
            cfg.task = Task::full_isp;
            cfg.n_ll = 6;
            cfg.n_hl = 2;
            cfg.width = 16;
            cfg.epochs = 20;
            cfg.synth_count = 60;
            cfg.patch_size = 32;
            cfg.synth_exposure = 0.25;
            cfg.no_shared = no_shared;
            TrainResult result = train_loop(cfg);
            if (param_count) *param_count = result.checkpoint.params.param_count();
            return mean_val_combined_loss(cfg, result.checkpoint.params);
        };
        double shared = val_loss(false, &params_shared);
        double ablated = val_loss(true, &params_ablated);
        gaps.push_back(ablated - shared);
    }
    std::sort(gaps.begin(), gaps.end());
    char buf[160];
    std::snprintf(buf, sizeof(buf), "no_shared - shared val-loss gaps %.4f / %.4f / %.4f (median, need >= 0); params %d vs %d",
                  gaps[0], gaps[1], gaps[2], params_shared, params_ablated);
    detail = buf;
    return gaps[1] >= 0.0 && params_shared == params_ablated;
}

bool criterion_w_init(std::string& detail) {
    Rng rng(271828);
    double worst_coeff = 0.0, worst_map = 0.0;
    for (int iter = 0; iter < 10; ++iter) {
        double a[3][4];
        for (int c = 0; c < 3; ++c)
            for (int j = 0; j < 4; ++j) a[c][j] = rng.uniform(-0.6, 0.6);
        Tensor input = random_unit(rng, {12, 12, 3});
        Tensor target(input.shape());
        for (int p = 0; p < 144; ++p)
            for (int c = 0; c < 3; ++c)
                target[p * 3 + c] =
                    a[c][0] * input[p * 3] + a[c][1] * input[p * 3 + 1] + a[c][2] * input[p * 3 + 2] + a[c][3];
        AffineInit init = init_w_affine({{&input, &target}});
        for (int c = 0; c < 3; ++c)
            for (int j = 0; j < 4; ++j) worst_coeff = std::max(worst_coeff, std::fabs(init.w34.at(c, j) - a[c][j]));
        Tensor mapped = apply_quadratic_transform(input, init.transform, false);
        for (int i = 0; i < target.size(); ++i) worst_map = std::max(worst_map, std::fabs(mapped[i] - target[i]));
    }
    char buf[128];
    std::snprintf(buf, sizeof(buf), "max coefficient error %.1e, max mapped-pixel error %.1e (need < 1e-6)",
                  worst_coeff, worst_map);
    detail = buf;
    return worst_coeff < 1e-6 && worst_map < 1e-6;
}

bool criterion_receptive_field(std::string& detail) {
    ModelConfig cfg{5, 1, 16};  // 11x11 window
    ModelParams params = init_params(97, cfg);
    Rng rng(617);
    Tensor img = random_unit(rng, {32, 32, 3});
    auto run = [&](const Tensor& x) {
        Tape t;
        ModelNodes nodes = register_params(t, params);
        return t.value(lowlevel_forward(t, t.input(x), nodes, cfg).estimate);
    };
    Tensor base = run(img);
    Tensor bumped = img;
    bumped.at(16, 16, 1) += 0.3;
    Tensor shifted = run(bumped);

    int radius = cfg.n_ll;
    bool pass = true;
    bool touched_inside = false;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            bool inside = std::abs(y - 16) <= radius && std::abs(x - 16) <= radius;
            for (int c = 0; c < 3; ++c) {
                double d = shifted.at(y, x, c) - base.at(y, x, c);
                if (!inside && d != 0.0) pass = false;
                if (inside && d != 0.0) touched_inside = true;
            }
        }
    detail = pass ? "zero change outside the 11x11 window at double precision" : "leakage outside the 11x11 window";
    return pass && touched_inside;
}

bool criterion_determinism(std::string& detail) {
    fs::path dir = work_dir();
    auto small = [&](const std::string& tag, int64_t epochs, bool resume) {
        TrainConfig cfg = desk_config(dir, tag, 11);
        cfg.n_ll = 3;
        cfg.width = 8;
        cfg.epochs = epochs;
        cfg.synth_count = 12;
        cfg.synth_size = 32;
        cfg.patch_size = 32;
        cfg.val_count = 3;
        cfg.checkpoint_interval = 2;
        cfg.resume = resume;
        return cfg;
    };

    TrainConfig a = small("det_a", 6, false);
    TrainConfig b = small("det_b", 6, false);
    train_loop(a);
    train_loop(b);
    bool twins = slurp(a.checkpoint_path) == slurp(b.checkpoint_path) && slurp(a.log_path) == slurp(b.log_path);

    TrainConfig half = small("det_c", 3, false);
    train_loop(half);
    TrainConfig rest = small("det_c", 6, true);
    train_loop(rest);
    bool resumed = slurp(a.checkpoint_path) == slurp(rest.checkpoint_path) && slurp(a.log_path) == slurp(rest.log_path);

    detail = std::string("repeat run ") + (twins ? "bit-identical" : "DIFFERS") + "; midpoint resume " +
             (resumed ? "bit-identical" : "DIFFERS");
    return twins && resumed;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) only = std::atoi(argv[i + 1]);

    std::vector<Criterion> criteria = {
        {1, "gradient integrity", criterion_gradients},
        {2, "oracle equivalence", criterion_oracles},
        {3, "identity suite", criterion_identity},
        {4, "desk-scale denoise/demosaic gain", criterion_denoise_gain},
        {5, "depth/width trends", criterion_sweeps},
        {6, "skip-connection ablation", criterion_skip_ablation},
        {7, "shared-features ablation", criterion_shared_ablation},
        {8, "affine color-operator recovery", criterion_w_init},
        {9, "receptive-field locality", criterion_receptive_field},
        {10, "training determinism and resume", criterion_determinism},
    };

    int failures = 0;
    for (const Criterion& c : criteria) {
        if (only != 0 && c.number != only) continue;
        std::string detail;
        bool pass = false;
        try {
            pass = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("criterion %2d (%s): %s  [%s]\n", c.number, c.title.c_str(), pass ? "PASS" : "FAIL",
                    detail.c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
    return failures;
}
