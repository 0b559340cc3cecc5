#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "deepisp/adam.hpp"
#include "deepisp/model.hpp"

namespace deepisp {

enum class Task { denoise_demosaic, full_isp, mimic_isp };

inline std::string task_name(Task t) {
    switch (t) {
        case Task::denoise_demosaic: return "denoise_demosaic";
        case Task::full_isp: return "full_isp";
        case Task::mimic_isp: return "mimic_isp";
    }
    return "denoise_demosaic";
}

inline Task task_parse(const std::string& s) {
    if (s == "denoise_demosaic") return Task::denoise_demosaic;
    if (s == "full_isp") return Task::full_isp;
    if (s == "mimic_isp") return Task::mimic_isp;
    throw std::invalid_argument("unknown task '" + s + "' (expected denoise_demosaic/full_isp/mimic_isp)");
}

/// Checkpoint: model configuration, parameters, optimizer state, and the
/// epoch counter, in one versioned little-endian binary container.
/// Layout (see README for the full description):
///   magic "DISPCKPT", u32 format version, u32 monomial-order version,
///   u32 task, i32 n_ll, i32 n_hl, i32 width, i64 epoch,
///   parameter tensors in declaration order (i32 rank, i32 extents, f64 data),
///   u8 optimizer-present flag, then i64 step count and the first/second
///   moment tensors (f64 data only; shapes mirror the parameters).
struct Checkpoint {
    static constexpr char MAGIC[9] = "DISPCKPT";
    static constexpr uint32_t FORMAT_VERSION = 1;
    static constexpr uint32_t MONOMIAL_ORDER_VERSION = 1;  // (r2, rg, rb, r, g2, gb, g, b2, b, 1)

    Task task = Task::denoise_demosaic;
    ModelParams params;
    AdamState adam;
    bool has_adam = false;
    int64_t epoch = 0;
};

namespace detail {

template <typename T>
void write_pod(std::ofstream& f, T v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const std::string& path) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    return v;
}

inline void write_tensor(std::ofstream& f, const Tensor& t, bool with_shape) {
    if (with_shape) {
        write_pod<int32_t>(f, t.rank());
        for (int i = 0; i < t.rank(); ++i) write_pod<int32_t>(f, t.extent(i));
    }
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::ifstream& f, const std::string& path) {
    int32_t rank = read_pod<int32_t>(f, path);
    if (rank < 1 || rank > 8) throw std::runtime_error("checkpoint: corrupt tensor rank in " + path);
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(read_pod<int32_t>(f, path));
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated tensor data in " + path);
    return t;
}

inline void read_tensor_data(std::ifstream& f, Tensor& t, const std::string& path) {
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated optimizer data in " + path);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, Checkpoint& ckpt) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(Checkpoint::MAGIC, 8);
    detail::write_pod<uint32_t>(f, Checkpoint::FORMAT_VERSION);
    detail::write_pod<uint32_t>(f, Checkpoint::MONOMIAL_ORDER_VERSION);
    detail::write_pod<uint32_t>(f, static_cast<uint32_t>(ckpt.task));
    detail::write_pod<int32_t>(f, ckpt.params.config.n_ll);
    detail::write_pod<int32_t>(f, ckpt.params.config.n_hl);
    detail::write_pod<int32_t>(f, ckpt.params.config.width);
    detail::write_pod<int64_t>(f, ckpt.epoch);
    for (const auto& ref : ckpt.params.named_params()) detail::write_tensor(f, *ref.tensor, true);
    detail::write_pod<uint8_t>(f, ckpt.has_adam ? 1 : 0);
    if (ckpt.has_adam) {
        detail::write_pod<int64_t>(f, ckpt.adam.t);
        for (const Tensor& m : ckpt.adam.m) detail::write_tensor(f, m, false);
        for (const Tensor& v : ckpt.adam.v) detail::write_tensor(f, v, false);
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, Checkpoint::MAGIC, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    uint32_t version = detail::read_pod<uint32_t>(f, path);
    if (version != Checkpoint::FORMAT_VERSION)
        throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version) + " in " + path);
    uint32_t mono = detail::read_pod<uint32_t>(f, path);
    if (mono != Checkpoint::MONOMIAL_ORDER_VERSION)
        throw std::runtime_error("checkpoint: incompatible monomial-order version in " + path);

    Checkpoint ckpt;
    ckpt.task = static_cast<Task>(detail::read_pod<uint32_t>(f, path));
    ModelConfig cfg;
    cfg.n_ll = detail::read_pod<int32_t>(f, path);
    cfg.n_hl = detail::read_pod<int32_t>(f, path);
    cfg.width = detail::read_pod<int32_t>(f, path);
    cfg.validate();
    ckpt.epoch = detail::read_pod<int64_t>(f, path);

    // materialize the parameter skeleton, then fill in declaration order
    ckpt.params = init_params(0, cfg);
    for (const auto& ref : ckpt.params.named_params()) {
        Tensor t = detail::read_tensor(f, path);
        if (!t.same_shape(*ref.tensor))
            throw std::runtime_error("checkpoint: shape mismatch for " + ref.name + " in " + path);
        *ref.tensor = std::move(t);
    }
    ckpt.has_adam = detail::read_pod<uint8_t>(f, path) != 0;
    if (ckpt.has_adam) {
        ckpt.adam = make_adam_state(ckpt.params.named_params());
        ckpt.adam.t = detail::read_pod<int64_t>(f, path);
        for (Tensor& m : ckpt.adam.m) detail::read_tensor_data(f, m, path);
        for (Tensor& v : ckpt.adam.v) detail::read_tensor_data(f, v, path);
    }
    return ckpt;
}

}  // namespace deepisp
