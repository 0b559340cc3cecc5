#pragma once

#include <functional>
#include <string>
#include <vector>

#include "deepisp/tape.hpp"

namespace deepisp {

/// Builds a scalar loss on the tape from the given leaves.
using LossBuilder = std::function<Value(Tape&, const std::vector<Value>&)>;

/// Location and values of the worst finite-difference disagreement.
struct GradCheckWorst {
    size_t input = 0;
    int element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double value = 0.0;
};

/// Central finite-difference gradient check. Returns the max over all input
/// elements of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// The caller is responsible for choosing a smooth point (away from relu
/// kinks, max-pool ties, clamp edges).
inline double grad_check(const LossBuilder& f, std::vector<Tensor> point, double h,
                         GradCheckWorst* worst_out = nullptr) {
    auto eval = [&](const std::vector<Tensor>& at) {
        Tape tape;
        std::vector<Value> leaves;
        leaves.reserve(at.size());
        for (const Tensor& t : at) leaves.push_back(tape.input(t));
        Value loss = f(tape, leaves);
        if (tape.value(loss).size() != 1) throw std::invalid_argument("grad_check: loss builder must return a scalar");
        return tape.value(loss)[0];
    };

    // analytic pass
    Tape tape;
    std::vector<Value> leaves;
    for (const Tensor& t : point) leaves.push_back(tape.input(t));
    Value loss = f(tape, leaves);
    tape.backward(loss);

    double worst = 0.0;
    for (size_t p = 0; p < point.size(); ++p) {
        const Tensor& analytic = tape.grad(leaves[p]);
        for (int i = 0; i < point[p].size(); ++i) {
            double saved = point[p][i];
            point[p][i] = saved + h;
            double up = eval(point);
            point[p][i] = saved - h;
            double down = eval(point);
            point[p][i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
            double err = std::fabs(analytic[i] - numeric) / denom;
            if (err > worst) {
                worst = err;
                if (worst_out) *worst_out = {p, i, analytic[i], numeric, saved};
            }
        }
    }
    return worst;
}

struct GradCheckItem {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 1e-4;
    bool pass() const { return max_rel_err < tolerance; }
};

}  // namespace deepisp
