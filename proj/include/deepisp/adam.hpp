#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "deepisp/model.hpp"
#include "deepisp/tensor.hpp"

namespace deepisp {

struct AdamConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment accumulators, one per parameter, plus the step count.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    int64_t t = 0;
};

inline AdamState make_adam_state(const std::vector<ModelParams::Ref>& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(p.tensor->shape());
        s.v.emplace_back(p.tensor->shape());
    }
    return s;
}

/// Bias-corrected Adam update:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
/// Rejects non-finite gradients before touching any state, naming the
/// offending parameter.
inline void adam_step(const std::vector<ModelParams::Ref>& params, const std::vector<const Tensor*>& grads,
                      AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (!params[i].tensor->same_shape(*grads[i]))
            throw std::invalid_argument("adam_step: gradient shape mismatch for " + params[i].name);
        if (!grads[i]->all_finite())
            throw std::runtime_error("adam_step: non-finite gradient for parameter '" + params[i].name + "'");
    }

    state.t += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].tensor;
        const Tensor& g = *grads[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (int j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            double m_hat = m[j] / bc1;
            double v_hat = v[j] / bc2;
            p[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

}  // namespace deepisp
