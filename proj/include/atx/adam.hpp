#pragma once

// Adam with bias correction, plus the halving learning-rate schedule
// lr(epoch) = base * 0.5^floor(epoch/period).

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "atx/model.hpp"

namespace atx {

inline double lr_schedule(int epoch, double base_lr, int period) {
    if (epoch < 0) throw std::invalid_argument("lr_schedule: epoch must be >= 0");
    if (period < 1) throw std::invalid_argument("lr_schedule: period must be >= 1");
    return base_lr * std::pow(0.5, epoch / period);
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<T> m, v;
    int64_t step = 0;
};

// One update of a single parameter group; non-finite gradients abort with the
// group named.
template <typename T>
void adam_step(Param<T>& param, const std::vector<T>& grad, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {}) {
    const size_t n = param.value.data().size();
    if (grad.size() != n)
        throw std::invalid_argument("adam_step: gradient size mismatch for '" + param.name + "'");
    if (state.m.empty()) {
        state.m.assign(n, T(0));
        state.v.assign(n, T(0));
    }
    for (T g : grad)
        if (!std::isfinite(static_cast<double>(g)))
            throw std::runtime_error("adam_step: non-finite gradient in parameter group '" +
                                     param.name + "'");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    T* p = param.value.raw();
    for (size_t i = 0; i < n; ++i) {
        const double g = grad[i];
        state.m[i] = static_cast<T>(cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g);
        state.v[i] = static_cast<T>(cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g);
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        p[i] = static_cast<T>(p[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

// Optimizer over a model's trainable parameters. Parameters with no gradient
// after backward (never touched by the loss) advance their step counter with
// a zero gradient so trajectories stay well-defined.
template <typename T>
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Param<T>*> params, AdamConfig cfg = {})
        : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

    void step(double lr) {
        static const std::vector<T> empty;
        for (size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i]->trainable) continue;
            if (params_[i]->value.has_grad()) {
                adam_step(*params_[i], params_[i]->value.grad(), states_[i], lr, cfg_);
            } else {
                zero_.assign(params_[i]->value.data().size(), T(0));
                adam_step(*params_[i], zero_, states_[i], lr, cfg_);
            }
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->value.zero_grad();
    }

private:
    std::vector<Param<T>*> params_;
    std::vector<AdamState<T>> states_;
    AdamConfig cfg_;
    std::vector<T> zero_;
};

}  // namespace atx
