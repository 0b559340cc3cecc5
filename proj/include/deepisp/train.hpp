#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deepisp/adam.hpp"
#include "deepisp/checkpoint.hpp"
#include "deepisp/data.hpp"
#include "deepisp/loss.hpp"
#include "deepisp/metrics.hpp"
#include "deepisp/model.hpp"

namespace deepisp {

/// Full experiment description. Defaults reproduce the published protocols:
/// denoise_demosaic trains the low-level stage with the l2 loss for 5000
/// epochs at N_ll=20; full_isp trains end-to-end with the combined loss for
/// 700 epochs at N_ll=15, N_hl=3, 1024-pixel patches. One epoch takes one
/// optimizer step per training image on a single random patch.
struct TrainConfig {
    static constexpr int SCHEMA_VERSION = 1;

    Task task = Task::denoise_demosaic;
    int n_ll = 20;
    int n_hl = 3;
    int width = 64;
    double alpha = 0.5;
    AdamConfig adam;  // lr 5e-5, beta1 0.9, beta2 0.999, eps 1e-8
    int64_t epochs = 5000;
    int patch_size = 128;
    uint64_t seed = 1;

    // data source: a directory, or the synthetic generator when data_dir is empty
    std::string data_dir;
    PairLayout data_layout = PairLayout::flat;
    int synth_count = 200;
    int synth_size = 64;
    double synth_exposure = 1.0;
    double synth_sigma_lo = 1.0;
    double synth_sigma_hi = 10.0;
    int val_count = 20;  // synthetic validation pairs (val_dir overrides)
    std::string val_dir;

    bool no_skip = false;    // sever the per-block additive connection
    bool no_shared = false;  // high-level stage sees only the low-level output image

    std::string checkpoint_path = "model.ckpt";
    std::string log_path = "train_log.csv";
    int64_t checkpoint_interval = 50;  // epochs between checkpoint writes
    bool resume = false;

    static TrainConfig defaults_for(Task task) {
        TrainConfig c;
        c.task = task;
        if (task != Task::denoise_demosaic) {
            c.n_ll = 15;
            c.n_hl = 3;
            c.epochs = 700;
            c.patch_size = 1024;
            c.synth_exposure = 0.25;
        }
        return c;
    }

    ModelConfig model_config() const { return ModelConfig{n_ll, n_hl, width}; }

    LossConfig loss_config() const {
        LossConfig l;
        l.alpha = alpha;
        return l;
    }

    bool uses_highlevel() const { return task != Task::denoise_demosaic; }

    std::string fingerprint() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%s n_ll=%d n_hl=%d width=%d alpha=%g lr=%g seed=%llu%s%s",
                      task_name(task).c_str(), n_ll, n_hl, width, alpha, adam.lr,
                      static_cast<unsigned long long>(seed), no_skip ? " no_skip" : "",
                      no_shared ? " no_shared" : "");
        return buf;
    }
};

// ---------------------------------------------------------------------------
// config file (key=value, documented schema)
// ---------------------------------------------------------------------------

inline void write_train_config(const std::string& path, const TrainConfig& c) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path + " for writing");
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "schema_version=%d\ntask=%s\nn_ll=%d\nn_hl=%d\nwidth=%d\nalpha=%.17g\n"
                  "lr=%.17g\nbeta1=%.17g\nbeta2=%.17g\neps=%.17g\nepochs=%lld\npatch_size=%d\nseed=%llu\n",
                  TrainConfig::SCHEMA_VERSION, task_name(c.task).c_str(), c.n_ll, c.n_hl, c.width, c.alpha, c.adam.lr,
                  c.adam.beta1, c.adam.beta2, c.adam.eps, static_cast<long long>(c.epochs), c.patch_size,
                  static_cast<unsigned long long>(c.seed));
    f << buf;
    f << "data_dir=" << c.data_dir << "\ndata_layout=";
    f << (c.data_layout == PairLayout::flat ? "flat" : c.data_layout == PairLayout::msr ? "msr" : "s7isp") << "\n";
    std::snprintf(buf, sizeof(buf),
                  "synth_count=%d\nsynth_size=%d\nsynth_exposure=%.17g\nsynth_sigma_lo=%.17g\n"
                  "synth_sigma_hi=%.17g\nval_count=%d\n",
                  c.synth_count, c.synth_size, c.synth_exposure, c.synth_sigma_lo, c.synth_sigma_hi, c.val_count);
    f << buf;
    f << "val_dir=" << c.val_dir << "\nno_skip=" << (c.no_skip ? 1 : 0) << "\nno_shared=" << (c.no_shared ? 1 : 0)
      << "\ncheckpoint=" << c.checkpoint_path << "\nlog=" << c.log_path
      << "\ncheckpoint_interval=" << c.checkpoint_interval << "\n";
}

inline TrainConfig read_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("config: malformed line '" + line + "' in " + path);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (const std::string* v = get("schema_version"); v && std::stoi(*v) != TrainConfig::SCHEMA_VERSION)
        throw std::runtime_error("config: unsupported schema_version in " + path);

    TrainConfig c;
    if (const std::string* v = get("task")) c = TrainConfig::defaults_for(task_parse(*v));
    if (const std::string* v = get("n_ll")) c.n_ll = std::stoi(*v);
    if (const std::string* v = get("n_hl")) c.n_hl = std::stoi(*v);
    if (const std::string* v = get("width")) c.width = std::stoi(*v);
    if (const std::string* v = get("alpha")) c.alpha = std::stod(*v);
    if (const std::string* v = get("lr")) c.adam.lr = std::stod(*v);
    if (const std::string* v = get("beta1")) c.adam.beta1 = std::stod(*v);
    if (const std::string* v = get("beta2")) c.adam.beta2 = std::stod(*v);
    if (const std::string* v = get("eps")) c.adam.eps = std::stod(*v);
    if (const std::string* v = get("epochs")) c.epochs = std::stoll(*v);
    if (const std::string* v = get("patch_size")) c.patch_size = std::stoi(*v);
    if (const std::string* v = get("seed")) c.seed = std::stoull(*v);
    if (const std::string* v = get("data_dir")) c.data_dir = *v;
    if (const std::string* v = get("data_layout")) c.data_layout = layout_parse(*v);
    if (const std::string* v = get("synth_count")) c.synth_count = std::stoi(*v);
    if (const std::string* v = get("synth_size")) c.synth_size = std::stoi(*v);
    if (const std::string* v = get("synth_exposure")) c.synth_exposure = std::stod(*v);
    if (const std::string* v = get("synth_sigma_lo")) c.synth_sigma_lo = std::stod(*v);
    if (const std::string* v = get("synth_sigma_hi")) c.synth_sigma_hi = std::stod(*v);
    if (const std::string* v = get("val_count")) c.val_count = std::stoi(*v);
    if (const std::string* v = get("val_dir")) c.val_dir = *v;
    if (const std::string* v = get("no_skip")) c.no_skip = std::stoi(*v) != 0;
    if (const std::string* v = get("no_shared")) c.no_shared = std::stoi(*v) != 0;
    if (const std::string* v = get("checkpoint")) c.checkpoint_path = *v;
    if (const std::string* v = get("log")) c.log_path = *v;
    if (const std::string* v = get("checkpoint_interval")) c.checkpoint_interval = std::stoll(*v);
    return c;
}

// ---------------------------------------------------------------------------
// inference and evaluation
// ---------------------------------------------------------------------------

/// Demosaic -> forward -> clamp -> optional histogram stretch. Works at any
/// resolution the high-level minimum size admits (the network is fully
/// convolutional).
inline Tensor infer(const ModelParams& params, Task task, const RawImage& raw, bool stretch = false,
                    bool no_skip = false, bool no_shared = false) {
    Tensor rgb = bilinear_demosaic(raw);
    Tape tape;
    ModelNodes nodes = register_params(tape, params);
    Value input = tape.input(rgb);
    Value out_node;
    if (task == Task::denoise_demosaic)
        out_node = lowlevel_forward(tape, input, nodes, params.config, no_skip).estimate;
    else
        out_node = deepisp_forward(tape, input, nodes, params.config, no_shared);
    Tensor out = tape.value(out_node);
    for (int i = 0; i < out.size(); ++i) out[i] = std::min(1.0, std::max(0.0, out[i]));
    if (stretch) out = histogram_stretch(out).rgb;
    return out;
}

/// Bilinear-demosaic-only baseline (model bypassed).
inline Tensor infer_baseline(const RawImage& raw, double exposure = 1.0) {
    Tensor rgb = bilinear_demosaic(raw);
    if (exposure > 0.0 && exposure != 1.0)
        for (int i = 0; i < rgb.size(); ++i) rgb[i] = std::min(1.0, rgb[i] / exposure);
    return rgb;
}

inline EvalReport evaluate_dataset(const ModelParams& params, Task task, const Dataset& ds, const LossConfig& loss_cfg,
                                   bool baseline = false, bool no_skip = false, bool no_shared = false) {
    auto t0 = std::chrono::steady_clock::now();
    EvalReport report;
    for (const ImagePair& pair : ds.pairs) {
        Tensor out = baseline ? infer_baseline(pair.raw, pair.meta.exposure)
                              : infer(params, task, pair.raw, false, no_skip, no_shared);
        std::string name = baseline ? pair.name + ":baseline" : pair.name;
        report.rows.push_back(evaluate_image(name, out, pair.target, loss_cfg));
    }
    report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    int64_t epoch = 0;
    double train_loss = 0.0;
    double val_psnr_linear = 0.0;
    double val_psnr_srgb = 0.0;
    double val_msssim = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
    double first_epoch_loss = 0.0;
    double final_epoch_loss = 0.0;
};

inline Dataset load_train_dataset(const TrainConfig& cfg, std::vector<std::string>* warnings = nullptr) {
    if (!cfg.data_dir.empty()) return load_pair_dir(cfg.data_dir, cfg.data_layout, warnings);
    return make_synth_dataset(cfg.seed, cfg.synth_count, cfg.synth_size, cfg.synth_size, cfg.synth_exposure,
                              cfg.synth_sigma_lo, cfg.synth_sigma_hi);
}

inline Dataset load_val_dataset(const TrainConfig& cfg, std::vector<std::string>* warnings = nullptr) {
    if (!cfg.val_dir.empty()) {
        Dataset ds = load_pair_dir(cfg.val_dir, cfg.data_layout, warnings);
        ds.split = "val";
        return ds;
    }
    // disjoint seed stream from the training scenes
    Dataset ds = make_synth_dataset(hash_combine(cfg.seed, 0x76616cULL), cfg.val_count, cfg.synth_size,
                                    cfg.synth_size, cfg.synth_exposure, cfg.synth_sigma_lo, cfg.synth_sigma_hi);
    ds.split = "val";
    return ds;
}

/// One forward/backward/update step on a sampled patch. Returns the loss.
inline double train_step(const TrainConfig& cfg, ModelParams& params, std::vector<ModelParams::Ref>& refs,
                         AdamState& adam, const ImagePair& patch) {
    Tensor input_rgb = bilinear_demosaic(patch.raw);
    Tape tape;
    ModelNodes nodes = register_params(tape, params);
    Value input = tape.input(input_rgb);
    Value target = tape.input(patch.target);
    Value loss_node;
    if (cfg.task == Task::denoise_demosaic) {
        Value estimate = lowlevel_forward(tape, input, nodes, params.config, cfg.no_skip).estimate;
        loss_node = l2_loss(tape, estimate, target);
    } else {
        Value out = deepisp_forward(tape, input, nodes, params.config, cfg.no_shared);
        loss_node = combined_loss(tape, out, target, cfg.loss_config());
    }
    double loss = tape.value(loss_node)[0];
    if (!std::isfinite(loss)) throw std::runtime_error("training aborted: non-finite loss on pair " + patch.name);
    tape.backward(loss_node);
    adam_step(refs, collect_grads(tape, nodes), adam, cfg.adam);
    return loss;
}

/// Runs (or resumes) a full training experiment: initialization (including
/// the affine color-operator regression for the full-ISP tasks), the epoch
/// loop with deterministic patch sampling, per-epoch validation, CSV logging,
/// and periodic checkpoints. Deterministic for a fixed config.
inline TrainResult train_loop(const TrainConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {}) {
    ModelConfig model_cfg = cfg.model_config();
    model_cfg.validate();
    if (cfg.patch_size < 2 || cfg.patch_size % 2 != 0)
        throw std::invalid_argument("train: patch_size must be even and >= 2");
    if (cfg.uses_highlevel() && cfg.patch_size < model_cfg.min_highlevel_extent())
        throw std::invalid_argument("train: patch_size " + std::to_string(cfg.patch_size) + " below the " +
                                    std::to_string(model_cfg.min_highlevel_extent()) + " minimum for n_hl=" +
                                    std::to_string(cfg.n_hl));

    Dataset train_ds = load_train_dataset(cfg);
    if (train_ds.empty()) throw std::runtime_error("train: empty training dataset");
    Dataset val_ds = load_val_dataset(cfg);

    Checkpoint ckpt;
    ckpt.task = cfg.task;
    if (cfg.resume) {
        ckpt = load_checkpoint(cfg.checkpoint_path);
        if (ckpt.params.config.n_ll != model_cfg.n_ll || ckpt.params.config.n_hl != model_cfg.n_hl ||
            ckpt.params.config.width != model_cfg.width)
            throw std::runtime_error("train: checkpoint architecture differs from config");
    } else {
        ColorTransform head_init = ColorTransform::identity();
        if (cfg.uses_highlevel()) {
            // affine color initialization regressed over the training pairs
            std::vector<Tensor> demosaiced;
            demosaiced.reserve(train_ds.size());
            std::vector<std::pair<const Tensor*, const Tensor*>> reg_pairs;
            for (const ImagePair& p : train_ds.pairs) demosaiced.push_back(bilinear_demosaic(p.raw));
            for (size_t i = 0; i < train_ds.size(); ++i)
                reg_pairs.push_back({&demosaiced[i], &train_ds.pairs[i].target});
            head_init = init_w_affine(reg_pairs).transform;
        }
        ckpt.params = init_params(cfg.seed, model_cfg, head_init);
        ckpt.adam = make_adam_state(ckpt.params.named_params());
        ckpt.has_adam = true;
        ckpt.epoch = 0;
    }
    std::vector<ModelParams::Ref> refs = ckpt.params.named_params();

    std::filesystem::path log_path(cfg.log_path);
    if (log_path.has_parent_path()) std::filesystem::create_directories(log_path.parent_path());
    std::filesystem::path ckpt_path(cfg.checkpoint_path);
    if (ckpt_path.has_parent_path()) std::filesystem::create_directories(ckpt_path.parent_path());

    std::ofstream log(cfg.log_path, cfg.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("train: cannot open log " + cfg.log_path);
    if (!cfg.resume) log << "epoch,train_loss,val_psnr_linear,val_psnr_srgb,val_msssim\n";
    log.flush();

    save_checkpoint(cfg.checkpoint_path, ckpt);

    TrainResult result;
    LossConfig loss_cfg = cfg.loss_config();
    for (int64_t epoch = ckpt.epoch; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (size_t i = 0; i < train_ds.size(); ++i) {
            const ImagePair& pair = train_ds.pairs[i];
            uint64_t key = hash_combine(hash_combine(cfg.seed, static_cast<uint64_t>(epoch)), static_cast<uint64_t>(i));
            int size = std::min({cfg.patch_size, pair.height(), pair.width()});
            if (size % 2 != 0) --size;
            // horizontal flips always; vertical only for the denoise/demosaic task
            ImagePair patch = sample_patch(pair, size, key, true, cfg.task == Task::denoise_demosaic);
            epoch_loss += train_step(cfg, ckpt.params, refs, ckpt.adam, patch);
        }
        epoch_loss /= static_cast<double>(train_ds.size());

        EpochLog entry;
        entry.epoch = epoch + 1;
        entry.train_loss = epoch_loss;
        if (!val_ds.empty()) {
            EvalReport val = evaluate_dataset(ckpt.params, cfg.task, val_ds, loss_cfg, false, cfg.no_skip,
                                              cfg.no_shared);
            EvalRow mean = val.aggregate();
            entry.val_psnr_linear = mean.psnr_linear;
            entry.val_psnr_srgb = mean.psnr_srgb;
            entry.val_msssim = mean.msssim;
        }
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(entry.epoch),
                      entry.train_loss, entry.val_psnr_linear, entry.val_psnr_srgb, entry.val_msssim);
        log << buf;
        log.flush();
        result.log.push_back(entry);
        if (result.log.size() == 1) result.first_epoch_loss = epoch_loss;
        result.final_epoch_loss = epoch_loss;

        ckpt.epoch = epoch + 1;
        if ((epoch + 1) % cfg.checkpoint_interval == 0 || epoch + 1 == cfg.epochs)
            save_checkpoint(cfg.checkpoint_path, ckpt);
        if (on_epoch) on_epoch(entry);
    }
    result.checkpoint = std::move(ckpt);
    return result;
}

}  // namespace deepisp
