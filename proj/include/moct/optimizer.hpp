// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "moct/errors.hpp"
#include "moct/param_store.hpp"

namespace moct {

// Adam with bias correction. Frozen entries are never touched; their
// gradients (if any) are discarded. Learning-rate warmup is the training
// loop's job — step() applies the learning rate it is given.
template <typename T>
class AdamT {
  public:
    explicit AdamT(T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    int64_t steps_taken() const { return t_; }

    void step(ParamStoreT<T>& params, T lr) {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (auto& [name, e] : params) {
            if (e.frozen) {
                e.tensor.clear_grad();
                continue;
            }
            if (!e.tensor.has_grad())
                throw ContractError("missing gradient for trainable parameter '" + name + "'");
            auto& slot = slots_[name];
            const auto n = static_cast<size_t>(e.tensor.numel());
            if (slot.m.empty()) {
                slot.m.assign(n, T(0));
                slot.v.assign(n, T(0));
            }
            auto data = e.tensor.data();
            auto grad = e.tensor.grad();
            for (size_t i = 0; i < n; ++i) {
                const T g = grad[i];
                slot.m[i] = beta1_ * slot.m[i] + (T(1) - beta1_) * g;
                slot.v[i] = beta2_ * slot.v[i] + (T(1) - beta2_) * g * g;
                const T mhat = slot.m[i] / bc1;
                const T vhat = slot.v[i] / bc2;
                data[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
            e.tensor.clear_grad();
        }
    }

  private:
    struct Slot {
        std::vector<T> m, v;
    };
    std::map<std::string, Slot> slots_;
    T beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

using Adam = AdamT<float>;

// Spec-level name for the optimizer update.
template <typename T>
void optimizer_step(ParamStoreT<T>& params, T lr, AdamT<T>& state) {
    state.step(params, lr);
}

// Linear warmup to a constant rate over warmup_frac of total_steps.
inline float warmup_lr(float lr, int step, int total_steps, float warmup_frac) {
    const int warmup_steps = static_cast<int>(std::ceil(warmup_frac * static_cast<float>(total_steps)));
    if (warmup_steps <= 0 || step + 1 >= warmup_steps) return lr;
    return lr * static_cast<float>(step + 1) / static_cast<float>(warmup_steps);
}

}  // namespace moct
