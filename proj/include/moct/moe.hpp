// SPDX-License-Identifier: Apache-2.0
//
// Router, expert set, fusion gate. The MoE layer output is the weighted sum
// of the top-K experts' FFN outputs, gated by Softmax(h·W_g) with the kept
// weights renormalized to sum to 1, then blended with the frozen shared FFN
// through the fusion gate w·moe + (1-w)·shared.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "moct/config.hpp"
#include "moct/errors.hpp"
#include "moct/tensor.hpp"

namespace moct {

template <typename T>
struct RouterT {
    TensorT<T> gate_weights;  // [hidden, n_experts]
    int n_experts() const { return gate_weights.dim(1); }
};

template <typename T>
struct FfnWeightsT {
    TensorT<T> w1, b1, w2, b2;
};

template <typename T>
struct ExpertSetT {
    std::vector<FfnWeightsT<T>> experts;
    int size() const { return static_cast<int>(experts.size()); }
};

template <typename T>
struct FusionGateT {
    FusionMode mode = FusionMode::kFixed;
    float weight = 0.5f;   // used directly in fixed mode
    TensorT<T> logit;      // [1], present only in learnable mode
};

// Per-token top-K assignment plus the taped renormalized weight matrix.
template <typename T>
struct RoutingDecisionT {
    int n_tokens = 0;
    int k = 0;
    int n_experts = 0;
    std::vector<int> indices;   // [n_tokens * k], descending weight, ties to lower id
    TensorT<T> weights_full;    // same shape as gate probs; zero off-selection, rows sum to 1

    // Kept weights laid out to match indices.
    std::vector<T> weights() const {
        const int cols = n_experts;
        std::vector<T> out(indices.size());
        const T* w = weights_full.data().data();
        for (int t = 0; t < n_tokens; ++t)
            for (int j = 0; j < k; ++j)
                out[static_cast<size_t>(t) * k + j] = w[static_cast<int64_t>(t) * cols + indices[static_cast<size_t>(t) * k + j]];
        return out;
    }
};

// Instrumentation hook for the sparsity contract.
struct MoeStats {
    int64_t tokens = 0;
    int64_t expert_evaluations = 0;
    std::vector<int64_t> per_expert;
};

// Softmax over all gate logits, keep the k largest per token (ties broken by
// lower expert index), renormalize kept weights to sum to 1.
template <typename T>
RoutingDecisionT<T> route(TapeT<T>* tape, const RouterT<T>& router, const TensorT<T>& h, int k) {
    const int n = router.n_experts();
    if (k < 1 || k > n)
        throw ConfigError("route: top_k (" + std::to_string(k) + ") must be in [1, n_experts=" + std::to_string(n) +
                          "]");
    TensorT<T> logits = ops::matmul(tape, h, router.gate_weights);
    TensorT<T> probs = ops::softmax(tape, logits, -1);
    const int64_t tokens = probs.numel() / n;

    std::vector<uint8_t> mask(static_cast<size_t>(probs.numel()), 0);
    std::vector<int> indices(static_cast<size_t>(tokens) * k);
    const T* pp = probs.data().data();
    std::vector<int> order(static_cast<size_t>(n));
    for (int64_t t = 0; t < tokens; ++t) {
        std::iota(order.begin(), order.end(), 0);
        const T* row = pp + t * n;
        std::stable_sort(order.begin(), order.end(), [row](int a, int b) { return row[a] > row[b]; });
        for (int j = 0; j < k; ++j) {
            indices[static_cast<size_t>(t) * k + j] = order[static_cast<size_t>(j)];
            mask[static_cast<size_t>(t * n + order[static_cast<size_t>(j)])] = 1;
        }
    }

    RoutingDecisionT<T> dec;
    dec.n_tokens = static_cast<int>(tokens);
    dec.k = k;
    dec.n_experts = n;
    dec.indices = std::move(indices);
    dec.weights_full = ops::topk_renorm(tape, probs, mask);
    return dec;
}

// Two-layer GELU FFN; x may be [tokens, hidden] or [batch, seq, hidden].
template <typename T>
TensorT<T> ffn_forward(TapeT<T>* tape, const TensorT<T>& x, const FfnWeightsT<T>& w) {
    TensorT<T> a = ops::add(tape, ops::matmul(tape, x, w.w1), w.b1);
    TensorT<T> g = ops::gelu(tape, a);
    return ops::add(tape, ops::matmul(tape, g, w.w2), w.b2);
}

// y[t] = sum over selected experts of w_i * FFN_i(h[t]). Only experts with
// routed tokens are evaluated; the rest contribute exact zero gradients.
template <typename T>
TensorT<T> moe_forward(TapeT<T>* tape, const ExpertSetT<T>& experts, const RoutingDecisionT<T>& decision,
                       const TensorT<T>& h, MoeStats* stats = nullptr) {
    const int n = experts.size();
    if (n != decision.n_experts)
        throw ContractError("moe_forward: decision has " + std::to_string(decision.n_experts) +
                            " experts but the set holds " + std::to_string(n));
    const int hidden = h.dim(-1);
    const int64_t tokens = h.numel() / hidden;
    if (tokens != decision.n_tokens)
        throw ContractError("moe_forward: decision covers " + std::to_string(decision.n_tokens) +
                            " tokens, input has " + std::to_string(tokens));

    std::vector<std::vector<int>> routed(static_cast<size_t>(n));
    for (int t = 0; t < decision.n_tokens; ++t)
        for (int j = 0; j < decision.k; ++j)
            routed[static_cast<size_t>(decision.indices[static_cast<size_t>(t) * decision.k + j])].push_back(t);

    if (stats) {
        stats->tokens += tokens;
        if (stats->per_expert.size() != static_cast<size_t>(n)) stats->per_expert.assign(static_cast<size_t>(n), 0);
    }

    TensorT<T> acc;
    for (int i = 0; i < n; ++i) {
        const auto& rows = routed[static_cast<size_t>(i)];
        const auto& ex = experts.experts[static_cast<size_t>(i)];
        if (rows.empty()) {
            ops::record_zero_grad(tape, std::vector<TensorT<T>>{ex.w1, ex.b1, ex.w2, ex.b2});
            continue;
        }
        if (stats) {
            stats->expert_evaluations += static_cast<int64_t>(rows.size());
            stats->per_expert[static_cast<size_t>(i)] += static_cast<int64_t>(rows.size());
        }
        TensorT<T> xi = ops::gather_rows(tape, h, rows);
        TensorT<T> ui = ffn_forward(tape, xi, ex);
        TensorT<T> wi = ops::gather_weights(tape, decision.weights_full, rows, i);
        TensorT<T> yi = ops::scale_rows(tape, ui, wi);
        TensorT<T> si = ops::scatter_rows(tape, yi, rows, h.shape());
        acc = acc.defined() ? ops::add(tape, acc, si) : si;
    }
    return acc;
}

// Blend per Fusion(x, y) = w·x + (1−w)·y. Learnable gates read w through a
// sigmoid of the stored logit; fixed gates use the configured constant.
template <typename T>
TensorT<T> fusion_apply(TapeT<T>* tape, const FusionGateT<T>& gate, const TensorT<T>& moe_out,
                        const TensorT<T>& shared_out) {
    TensorT<T> w;
    if (gate.mode == FusionMode::kLearnable) {
        if (!gate.logit.defined()) throw ContractError("learnable fusion gate has no logit parameter");
        w = ops::sigmoid(tape, gate.logit);
    } else {
        w = TensorT<T>::scalar(static_cast<T>(gate.weight));
    }
    return ops::fusion(tape, moe_out, shared_out, w);
}

}  // namespace moct
