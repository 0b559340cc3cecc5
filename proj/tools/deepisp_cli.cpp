// Command-line front end: dataset synthesis, training, inference,
// evaluation, gradient checking, and the depth/width and ablation studies.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "deepisp/deepisp.hpp"

namespace fs = std::filesystem;
using namespace deepisp;

namespace {

/// Relative output paths land under DEEPISP_OUTPUT_ROOT when it is set.
std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("DEEPISP_OUTPUT_ROOT");
    if (!root || !*root || path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
}

void ensure_parent_dir(const std::string& path) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

struct TrainCliOptions {
    std::string config_file;
    TrainConfig cfg = TrainConfig::defaults_for(Task::denoise_demosaic);
    std::string task = "denoise_demosaic";
    std::string layout = "flat";
    bool resume = false;
};

void add_train_options(CLI::App* cmd, TrainCliOptions& opt) {
    cmd->add_option("--config", opt.config_file, "key=value config file (flags override it)");
    cmd->add_option("--task", opt.task, "denoise_demosaic | full_isp | mimic_isp");
    cmd->add_option("--n-ll", opt.cfg.n_ll, "low-level residual blocks");
    cmd->add_option("--n-hl", opt.cfg.n_hl, "high-level stages");
    cmd->add_option("--width", opt.cfg.width, "channels per block (3 of them residual)");
    cmd->add_option("--alpha", opt.cfg.alpha, "MS-SSIM weight in the combined loss");
    cmd->add_option("--lr", opt.cfg.adam.lr, "Adam learning rate");
    cmd->add_option("--beta1", opt.cfg.adam.beta1, "Adam beta1");
    cmd->add_option("--beta2", opt.cfg.adam.beta2, "Adam beta2");
    cmd->add_option("--eps", opt.cfg.adam.eps, "Adam epsilon");
    cmd->add_option("--epochs", opt.cfg.epochs, "training epochs (one step per image per epoch)");
    cmd->add_option("--patch", opt.cfg.patch_size, "square patch size");
    cmd->add_option("--seed", opt.cfg.seed, "experiment seed");
    cmd->add_option("--data", opt.cfg.data_dir, "training pair directory (synthetic source if omitted)");
    cmd->add_option("--layout", opt.layout, "flat | msr | s7isp");
    cmd->add_option("--val-data", opt.cfg.val_dir, "validation pair directory");
    cmd->add_option("--synth-count", opt.cfg.synth_count, "synthetic training pairs");
    cmd->add_option("--synth-size", opt.cfg.synth_size, "synthetic scene size");
    cmd->add_option("--synth-exposure", opt.cfg.synth_exposure, "synthetic exposure factor");
    cmd->add_option("--synth-sigma-lo", opt.cfg.synth_sigma_lo, "noise STD lower bound (8-bit scale)");
    cmd->add_option("--synth-sigma-hi", opt.cfg.synth_sigma_hi, "noise STD upper bound (8-bit scale)");
    cmd->add_option("--val-count", opt.cfg.val_count, "synthetic validation pairs");
    cmd->add_flag("--no-skip", opt.cfg.no_skip, "sever the per-block additive connection");
    cmd->add_flag("--no-shared", opt.cfg.no_shared, "high-level stage sees only the output image");
    cmd->add_option("--checkpoint", opt.cfg.checkpoint_path, "checkpoint path");
    cmd->add_option("--log", opt.cfg.log_path, "per-epoch CSV log path");
    cmd->add_option("--checkpoint-interval", opt.cfg.checkpoint_interval, "epochs between checkpoint writes");
    cmd->add_flag("--resume", opt.resume, "resume from the checkpoint path");
}

TrainConfig finalize_train_config(CLI::App* cmd, TrainCliOptions& opt) {
    TrainConfig cfg;
    if (!opt.config_file.empty()) cfg = read_train_config(opt.config_file);
    Task task = cmd->count("--task") || opt.config_file.empty() ? task_parse(opt.task) : cfg.task;
    if (opt.config_file.empty()) cfg = TrainConfig::defaults_for(task);
    else if (cmd->count("--task")) {
        TrainConfig fresh = TrainConfig::defaults_for(task);
        fresh.data_dir = cfg.data_dir;
        cfg = fresh;
    }

    auto set_if = [&](const char* flag, auto member, auto value) {
        if (cmd->count(flag)) cfg.*member = value;
    };
    set_if("--n-ll", &TrainConfig::n_ll, opt.cfg.n_ll);
    set_if("--n-hl", &TrainConfig::n_hl, opt.cfg.n_hl);
    set_if("--width", &TrainConfig::width, opt.cfg.width);
    set_if("--alpha", &TrainConfig::alpha, opt.cfg.alpha);
    if (cmd->count("--lr")) cfg.adam.lr = opt.cfg.adam.lr;
    if (cmd->count("--beta1")) cfg.adam.beta1 = opt.cfg.adam.beta1;
    if (cmd->count("--beta2")) cfg.adam.beta2 = opt.cfg.adam.beta2;
    if (cmd->count("--eps")) cfg.adam.eps = opt.cfg.adam.eps;
    set_if("--epochs", &TrainConfig::epochs, opt.cfg.epochs);
    set_if("--patch", &TrainConfig::patch_size, opt.cfg.patch_size);
    set_if("--seed", &TrainConfig::seed, opt.cfg.seed);
    set_if("--data", &TrainConfig::data_dir, opt.cfg.data_dir);
    if (cmd->count("--layout")) cfg.data_layout = layout_parse(opt.layout);
    set_if("--val-data", &TrainConfig::val_dir, opt.cfg.val_dir);
    set_if("--synth-count", &TrainConfig::synth_count, opt.cfg.synth_count);
    set_if("--synth-size", &TrainConfig::synth_size, opt.cfg.synth_size);
    set_if("--synth-exposure", &TrainConfig::synth_exposure, opt.cfg.synth_exposure);
    set_if("--synth-sigma-lo", &TrainConfig::synth_sigma_lo, opt.cfg.synth_sigma_lo);
    set_if("--synth-sigma-hi", &TrainConfig::synth_sigma_hi, opt.cfg.synth_sigma_hi);
    set_if("--val-count", &TrainConfig::val_count, opt.cfg.val_count);
    if (cmd->count("--no-skip")) cfg.no_skip = opt.cfg.no_skip;
    if (cmd->count("--no-shared")) cfg.no_shared = opt.cfg.no_shared;
    set_if("--checkpoint", &TrainConfig::checkpoint_path, opt.cfg.checkpoint_path);
    set_if("--log", &TrainConfig::log_path, opt.cfg.log_path);
    set_if("--checkpoint-interval", &TrainConfig::checkpoint_interval, opt.cfg.checkpoint_interval);
    cfg.resume = opt.resume;
    cfg.checkpoint_path = resolve_out(cfg.checkpoint_path);
    cfg.log_path = resolve_out(cfg.log_path);
    return cfg;
}

int run_synth(const std::string& out_dir, int count, int size, uint64_t seed, double exposure, double sigma_lo,
              double sigma_hi, const std::string& pattern_name) {
    std::string dir = resolve_out(out_dir);
    fs::create_directories(dir);
    BayerPattern pattern = bayer_parse(pattern_name);
    Dataset ds = make_synth_dataset(seed, count, size, size, exposure, sigma_lo, sigma_hi, pattern);
    for (const ImagePair& pair : ds.pairs) save_pair_flat(dir, pair);
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "layout=flat\ncount=%d\nsize=%d\nseed=%llu\nexposure=%.17g\nsigma_lo=%.17g\nsigma_hi=%.17g\n"
                  "pattern=%s\n",
                  count, size, static_cast<unsigned long long>(seed), exposure, sigma_lo, sigma_hi,
                  pattern_name.c_str());
    manifest << buf;
    std::printf("wrote %d pairs to %s\n", count, dir.c_str());
    return 0;
}

int run_train(const TrainConfig& cfg) {
    std::printf("training: %s\n", cfg.fingerprint().c_str());
    TrainResult result = train_loop(cfg, [](const EpochLog& e) {
        std::printf("epoch %lld  loss %.6g  val PSNR %.2f dB  MS-SSIM %.4f\n", static_cast<long long>(e.epoch),
                    e.train_loss, e.val_psnr_linear, e.val_msssim);
        std::fflush(stdout);
    });
    std::printf("done: checkpoint %s  log %s\n", cfg.checkpoint_path.c_str(), cfg.log_path.c_str());
    (void)result;
    return 0;
}

RawImage load_raw_input(const std::string& path, BayerPattern pattern) {
    Tensor img = read_image(path);
    if (img.extent(2) == 1) return RawImage{std::move(img), pattern};
    return mosaic(img, pattern);
}

int run_infer(const std::string& ckpt_path, const std::string& input, const std::string& output, bool stretch,
              const std::string& pattern_name) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    BayerPattern pattern = bayer_parse(pattern_name);
    std::vector<std::pair<std::string, std::string>> jobs;  // (input path, output path)
    if (fs::is_directory(input)) {
        std::string out_dir = resolve_out(output);
        fs::create_directories(out_dir);
        std::vector<std::string> names;
        for (const auto& e : fs::directory_iterator(input)) names.push_back(e.path().filename().string());
        std::sort(names.begin(), names.end());
        for (const std::string& name : names) {
            if (!has_suffix(name, ".png") && !has_suffix(name, ".pgm") && !has_suffix(name, ".ppm")) continue;
            std::string stem = fs::path(name).stem().string();
            // flat-layout directories: run the raw inputs, not the targets
            if (has_suffix(stem, "_target") || has_suffix(stem, "_out")) continue;
            jobs.push_back({(fs::path(input) / name).string(),
                            (fs::path(out_dir) / (stem + "_out.png")).string()});
        }
    } else {
        std::string out = resolve_out(output);
        ensure_parent_dir(out);
        jobs.push_back({input, out});
    }
    for (const auto& [in_path, out_path] : jobs) {
        RawImage raw = load_raw_input(in_path, pattern);
        Tensor out = infer(ckpt.params, ckpt.task, raw, stretch);
        write_png(out_path, out, 8);
        std::printf("%s -> %s\n", in_path.c_str(), out_path.c_str());
    }
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& layout_name,
             const std::string& out_csv, bool baseline) {
    Dataset ds = load_pair_dir(data_dir, layout_parse(layout_name));
    if (ds.empty()) {
        std::fprintf(stderr, "eval: no pairs found under %s\n", data_dir.c_str());
        return 1;
    }
    Checkpoint ckpt;
    if (!baseline) ckpt = load_checkpoint(ckpt_path);
    LossConfig loss_cfg;
    EvalReport report = evaluate_dataset(ckpt.params, ckpt.task, ds, loss_cfg, baseline);
    report.config_fingerprint = baseline ? "baseline:bilinear" : "checkpoint:" + ckpt_path;
    std::string out = resolve_out(out_csv);
    ensure_parent_dir(out);
    report.write_csv(out);
    std::printf("%s\n", report.summary().c_str());
    std::printf("report: %s\n", out.c_str());
    return 0;
}

int run_gradcheck(uint64_t seed, int points) {
    auto t0 = std::chrono::steady_clock::now();
    std::vector<GradCheckItem> items = gradcheck_suite(seed, points);
    bool all_pass = true;
    for (const GradCheckItem& item : items) {
        std::printf("%-40s max rel err %.3e  %s\n", item.name.c_str(), item.max_rel_err,
                    item.pass() ? "PASS" : "FAIL");
        all_pass = all_pass && item.pass();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("gradcheck %s in %.1f s\n", all_pass ? "passed" : "FAILED", secs);
    return all_pass ? 0 : 1;
}

double eval_mean_psnr(const TrainConfig& cfg, const ModelParams& params) {
    Dataset val = load_val_dataset(cfg);
    EvalReport report = evaluate_dataset(params, cfg.task, val, cfg.loss_config(), false, cfg.no_skip, cfg.no_shared);
    return report.aggregate().psnr_linear;
}

int run_sweep(TrainConfig base, const std::string& axis, std::vector<int> values, const std::string& out_csv) {
    if (values.empty()) {
        std::fprintf(stderr, "sweep: no values given\n");
        return 1;
    }
    std::string out = resolve_out(out_csv);
    ensure_parent_dir(out);
    std::ofstream csv(out);
    csv << axis << ",final_val_psnr_linear_db\n";
    for (int v : values) {
        TrainConfig cfg = base;
        if (axis == "depth") cfg.n_ll = v;
        else if (axis == "width") cfg.width = v;
        else {
            std::fprintf(stderr, "sweep: axis must be depth or width\n");
            return 1;
        }
        cfg.checkpoint_path = base.checkpoint_path + "." + axis + std::to_string(v);
        cfg.log_path = base.log_path + "." + axis + std::to_string(v) + ".csv";
        std::printf("sweep %s=%d\n", axis.c_str(), v);
        TrainResult result = train_loop(cfg);
        double psnr_db = eval_mean_psnr(cfg, result.checkpoint.params);
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%d,%.17g\n", v, psnr_db);
        csv << buf;
        csv.flush();
        std::printf("  -> %.2f dB\n", psnr_db);
    }
    std::printf("sweep report: %s\n", out.c_str());
    return 0;
}

int run_ablate(TrainConfig base, const std::string& mode, const std::string& out_csv) {
    if (mode != "no_skip" && mode != "no_shared") {
        std::fprintf(stderr, "ablate: mode must be no_skip or no_shared\n");
        return 1;
    }
    TrainConfig control = base, ablated = base;
    if (mode == "no_skip") ablated.no_skip = true;
    else ablated.no_shared = true;
    control.checkpoint_path = base.checkpoint_path + ".control";
    control.log_path = base.log_path + ".control.csv";
    ablated.checkpoint_path = base.checkpoint_path + "." + mode;
    ablated.log_path = base.log_path + "." + mode + ".csv";

    std::printf("ablation %s: training control arm\n", mode.c_str());
    TrainResult control_result = train_loop(control);
    std::printf("ablation %s: training ablated arm\n", mode.c_str());
    TrainResult ablated_result = train_loop(ablated);

    int control_params = control_result.checkpoint.params.param_count();
    int ablated_params = ablated_result.checkpoint.params.param_count();
    double ratio = ablated_result.final_epoch_loss / control_result.final_epoch_loss;
    double control_psnr = eval_mean_psnr(control, control_result.checkpoint.params);
    double ablated_psnr = eval_mean_psnr(ablated, ablated_result.checkpoint.params);

    std::string out = resolve_out(out_csv);
    ensure_parent_dir(out);
    std::ofstream csv(out);
    csv << "arm,final_train_loss,val_psnr_linear_db,param_count\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "control,%.17g,%.17g,%d\n", control_result.final_epoch_loss, control_psnr,
                  control_params);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%d\n", mode.c_str(), ablated_result.final_epoch_loss,
                  ablated_psnr, ablated_params);
    csv << buf;
    std::snprintf(buf, sizeof(buf), "# loss_ratio=%.6g param_counts_equal=%d\n", ratio,
                  control_params == ablated_params ? 1 : 0);
    csv << buf;
    std::printf("final loss: control %.6g, %s %.6g (ratio %.3g); params %d vs %d\n", control_result.final_epoch_loss,
                mode.c_str(), ablated_result.final_epoch_loss, ratio, control_params, ablated_params);
    std::printf("ablation report: %s\n", out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DeepISP: two-stage learned camera pipeline (training, inference, evaluation)"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a paired synthetic dataset on disk (flat layout)");
    std::string synth_out = "data/synth";
    int synth_count = 200, synth_size = 64;
    uint64_t synth_seed = 1;
    double synth_exposure = 1.0, synth_sigma_lo = 1.0, synth_sigma_hi = 10.0;
    std::string synth_pattern = "RGGB";
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--count", synth_count, "number of pairs");
    synth->add_option("--size", synth_size, "scene size (even, >= 32)");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--exposure", synth_exposure, "exposure factor in (0,1]");
    synth->add_option("--sigma-lo", synth_sigma_lo, "noise STD lower bound (8-bit scale)");
    synth->add_option("--sigma-hi", synth_sigma_hi, "noise STD upper bound (8-bit scale)");
    synth->add_option("--pattern", synth_pattern, "Bayer pattern (RGGB/GRBG/GBRG/BGGR)");

    // train
    auto* train = app.add_subcommand("train", "train a model (defaults follow the published protocols per task)");
    TrainCliOptions train_opt;
    add_train_options(train, train_opt);

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "run a checkpoint on raw input(s)");
    std::string infer_ckpt, infer_input, infer_out = "out.png", infer_pattern = "RGGB";
    bool infer_stretch = false;
    infer_cmd->add_option("--checkpoint", infer_ckpt, "checkpoint path")->required();
    infer_cmd->add_option("--input", infer_input, "raw image (1-channel PNG/PGM) or directory")->required();
    infer_cmd->add_option("--out", infer_out, "output PNG path (or directory for directory input)");
    infer_cmd->add_option("--pattern", infer_pattern, "Bayer pattern of the input");
    infer_cmd->add_flag("--stretch", infer_stretch, "apply the evaluation-time histogram stretch");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (or the bilinear baseline) on a dataset");
    std::string eval_ckpt, eval_data, eval_layout = "flat", eval_out = "eval_report.csv";
    bool eval_baseline = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path (omit with --baseline)");
    eval_cmd->add_option("--data", eval_data, "pair directory")->required();
    eval_cmd->add_option("--layout", eval_layout, "flat | msr | s7isp");
    eval_cmd->add_option("--out", eval_out, "CSV report path");
    eval_cmd->add_flag("--baseline", eval_baseline, "bypass the model (bilinear demosaic only)");

    // gradcheck
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op and the full model");
    uint64_t gc_seed = 1;
    int gc_points = 100;
    gradcheck_cmd->add_option("--seed", gc_seed, "random point seed");
    gradcheck_cmd->add_option("--points", gc_points, "random smooth points per op");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "train one model per depth/width value under a fixed budget");
    TrainCliOptions sweep_opt;
    std::string sweep_axis = "depth", sweep_out = "sweep.csv";
    std::vector<int> sweep_values;
    add_train_options(sweep_cmd, sweep_opt);
    sweep_cmd->add_option("--axis", sweep_axis, "depth | width")->required();
    sweep_cmd->add_option("--values", sweep_values, "axis values, e.g. --values 1 2 4 8")->required();
    sweep_cmd->add_option("--out", sweep_out, "summary CSV path");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "train matched arms with and without an ablation");
    TrainCliOptions ablate_opt;
    std::string ablate_mode = "no_skip", ablate_out = "ablation.csv";
    add_train_options(ablate_cmd, ablate_opt);
    ablate_cmd->add_option("--mode", ablate_mode, "no_skip | no_shared")->required();
    ablate_cmd->add_option("--out", ablate_out, "summary CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed())
            return run_synth(synth_out, synth_count, synth_size, synth_seed, synth_exposure, synth_sigma_lo,
                             synth_sigma_hi, synth_pattern);
        if (train->parsed()) return run_train(finalize_train_config(train, train_opt));
        if (infer_cmd->parsed()) return run_infer(infer_ckpt, infer_input, infer_out, infer_stretch, infer_pattern);
        if (eval_cmd->parsed()) return run_eval(eval_ckpt, eval_data, eval_layout, eval_out, eval_baseline);
        if (gradcheck_cmd->parsed()) return run_gradcheck(gc_seed, gc_points);
        if (sweep_cmd->parsed())
            return run_sweep(finalize_train_config(sweep_cmd, sweep_opt), sweep_axis, sweep_values, sweep_out);
        if (ablate_cmd->parsed())
            return run_ablate(finalize_train_config(ablate_cmd, ablate_opt), ablate_mode, ablate_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
