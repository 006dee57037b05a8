// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "moct/model.hpp"
#include "moct/param_store.hpp"
#include "moct/rng.hpp"
#include "moct/tensor.hpp"

namespace moct::testutil {

inline double rel_err(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    if (scale < 1e-9) return 0.0;
    return std::abs(a - b) / scale;
}

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    double m = 0.0;
    auto da = a.data();
    auto db = b.data();
    for (size_t i = 0; i < da.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(da[i]) - static_cast<double>(db[i])));
    return m;
}

template <typename T>
TensorT<T> random_tensor(Shape shape, uint64_t seed, double stddev = 1.0) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    Rng rng(seed);
    for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * stddev);
    return t;
}

inline std::vector<int> random_tokens(int n, int vocab, uint64_t seed) {
    std::vector<int> out(static_cast<size_t>(n));
    Rng rng(seed);
    for (auto& t : out) t = static_cast<int>(rng.next_u64() % static_cast<uint64_t>(vocab));
    return out;
}

struct GradCheckResult {
    // excess = |ad - fd| / (atol + rtol * max(|ad|, |fd|)); pass iff <= 1.
    double max_excess = 0.0;
    double max_rel_err = 0.0;
    std::string worst_param;
    int64_t checked = 0;
    bool pass(void) const { return max_excess <= 1.0; }
};

// Refills parameters at an O(0.3) scale so finite differences at eps=1e-3
// sit well inside the linear regime (at the 0.02 init scale the perturbation
// is a 5% relative change and truncation error dominates).
template <typename T>
void randomize_for_gradcheck(ParamStoreT<T>& params, uint64_t seed) {
    for (auto& [name, e] : params) {
        Rng rng(derive_seed(seed, name));
        const ParamGroup g = param_group(name);
        for (auto& v : e.tensor.vec()) {
            if (g == ParamGroup::kNorm)
                v = static_cast<T>((name.back() == 'g' ? 1.0 : 0.0) + 0.2 * rng.normal());
            else
                v = static_cast<T>(0.3 * rng.normal());
        }
    }
}

// Central finite differences vs reverse-mode gradients for every trainable
// parameter in the store. loss_fn must rebuild the loss from the store's
// current values (taped when a tape is passed, plain forward otherwise).
// Agreement is |ad - fd| <= atol + rtol*max(|ad|,|fd|): rtol carries the
// relative tolerance, atol covers coordinates whose gradient is so small
// that central-difference truncation dominates at the given eps.
inline GradCheckResult check_gradients(ParamStoreT<double>& params,
                                       const std::function<TensorT<double>(TapeT<double>*)>& loss_fn,
                                       double eps = 1e-3, double rtol = 1e-3, double atol = 1e-5) {
    params.clear_grads();
    {
        TapeT<double> tape;
        TensorT<double> loss = loss_fn(&tape);
        tape.backward(loss);
    }
    GradCheckResult res;
    for (auto& [name, e] : params) {
        if (e.frozen) continue;
        std::vector<double> ad(static_cast<size_t>(e.tensor.numel()), 0.0);
        if (e.tensor.has_grad()) {
            auto g = e.tensor.grad();
            std::copy(g.begin(), g.end(), ad.begin());
        }
        auto data = e.tensor.data();
        for (int64_t i = 0; i < e.tensor.numel(); ++i) {
            const double orig = data[static_cast<size_t>(i)];
            data[static_cast<size_t>(i)] = orig + eps;
            const double lp = loss_fn(nullptr).data()[0];
            data[static_cast<size_t>(i)] = orig - eps;
            const double lm = loss_fn(nullptr).data()[0];
            data[static_cast<size_t>(i)] = orig;
            const double fd = (lp - lm) / (2.0 * eps);
            const double scale = std::max(std::abs(fd), std::abs(ad[static_cast<size_t>(i)]));
            const double rel = scale < 1e-9 ? 0.0 : std::abs(fd - ad[static_cast<size_t>(i)]) / scale;
            res.max_rel_err = std::max(res.max_rel_err, rel);
            const double excess = std::abs(fd - ad[static_cast<size_t>(i)]) / (atol + rtol * scale);
            if (excess > res.max_excess) {
                res.max_excess = excess;
                res.worst_param = name + "[" + std::to_string(i) + "]";
            }
            ++res.checked;
        }
    }
    params.clear_grads();
    return res;
}

}  // namespace moct::testutil
