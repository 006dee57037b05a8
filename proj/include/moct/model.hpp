// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only pre-norm transformer with learned absolute positions and a
// tied token-embedding output head. MoE variants keep every dense tensor and
// add, per layer, a router, n_experts copies of the FFN, and a fusion gate;
// the original FFN stays in place as the frozen shared path.
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "moct/config.hpp"
#include "moct/errors.hpp"
#include "moct/moe.hpp"
#include "moct/param_store.hpp"
#include "moct/rng.hpp"
#include "moct/tensor.hpp"

namespace moct {

namespace names {

inline std::string layer(int i, const char* rest) { return "layer." + std::to_string(i) + "." + rest; }
inline std::string expert(int i, int j, const char* rest) {
    return "layer." + std::to_string(i) + ".expert." + std::to_string(j) + "." + rest;
}

inline constexpr const char* kTokEmbed = "tok_embed";
inline constexpr const char* kPosEmbed = "pos_embed";
inline constexpr const char* kFinalLnG = "final_ln.g";
inline constexpr const char* kFinalLnB = "final_ln.b";

}  // namespace names

enum class ParamGroup {
    kTokenEmbedding,
    kPositionalEmbedding,
    kAttention,
    kNorm,
    kSharedFfn,
    kExpert,
    kRouter,
    kFusion,
};

inline ParamGroup param_group(const std::string& name) {
    if (name == names::kTokEmbed) return ParamGroup::kTokenEmbedding;
    if (name == names::kPosEmbed) return ParamGroup::kPositionalEmbedding;
    if (name.find(".attn.") != std::string::npos) return ParamGroup::kAttention;
    if (name.find(".ln1.") != std::string::npos || name.find(".ln2.") != std::string::npos ||
        name.rfind("final_ln.", 0) == 0)
        return ParamGroup::kNorm;
    if (name.find(".expert.") != std::string::npos) return ParamGroup::kExpert;
    if (name.find(".router.") != std::string::npos) return ParamGroup::kRouter;
    if (name.find(".fusion.") != std::string::npos) return ParamGroup::kFusion;
    if (name.find(".ffn.") != std::string::npos) return ParamGroup::kSharedFfn;
    throw ContractError("parameter '" + name + "' does not belong to a known group");
}

template <typename T>
bool store_is_moe(const ParamStoreT<T>& params) {
    return params.any_name_contains(".expert.");
}

namespace detail {

template <typename T>
TensorT<T> init_weight(Shape shape, uint64_t seed, const std::string& name, double stddev) {
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    if (stddev > 0.0) {
        Rng rng(derive_seed(seed, name));
        for (auto& v : t.vec()) v = static_cast<T>(rng.truncated_normal(stddev));
    }
    return t;
}

}  // namespace detail

// Initializes a model for the given config; handles dense and MoE layouts.
// Weights are truncated normal (std 0.02), norms identity, biases zero.
// Deterministic in (config, seed); each tensor draws from its own substream.
template <typename T>
ParamStoreT<T> init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    const double std = 0.02;
    const int h = cfg.hidden, f = cfg.ffn_inner();
    ParamStoreT<T> p;
    auto w = [&](const std::string& name, Shape shape, double s = 0.02) {
        p.add(name, detail::init_weight<T>(std::move(shape), seed, name, s));
    };
    w(names::kTokEmbed, {cfg.vocab, h}, std);
    w(names::kPosEmbed, {cfg.seq_len, h}, std);
    for (int i = 0; i < cfg.n_layers; ++i) {
        p.add(names::layer(i, "ln1.g"), TensorT<T>::full({h}, T(1)));
        p.add(names::layer(i, "ln1.b"), TensorT<T>::zeros({h}));
        w(names::layer(i, "attn.wq"), {h, h}, std);
        w(names::layer(i, "attn.wk"), {h, h}, std);
        w(names::layer(i, "attn.wv"), {h, h}, std);
        w(names::layer(i, "attn.wo"), {h, h}, std);
        p.add(names::layer(i, "ln2.g"), TensorT<T>::full({h}, T(1)));
        p.add(names::layer(i, "ln2.b"), TensorT<T>::zeros({h}));
        w(names::layer(i, "ffn.w1"), {h, f}, std);
        p.add(names::layer(i, "ffn.b1"), TensorT<T>::zeros({f}));
        w(names::layer(i, "ffn.w2"), {f, h}, std);
        p.add(names::layer(i, "ffn.b2"), TensorT<T>::zeros({h}));
        if (cfg.is_moe()) {
            for (int j = 0; j < cfg.n_experts; ++j) {
                w(names::expert(i, j, "w1"), {h, f}, std);
                p.add(names::expert(i, j, "b1"), TensorT<T>::zeros({f}));
                w(names::expert(i, j, "w2"), {f, h}, std);
                p.add(names::expert(i, j, "b2"), TensorT<T>::zeros({h}));
            }
            w(names::layer(i, "router.wg"), {h, cfg.n_experts}, cfg.router_init_std);
            if (cfg.fusion_mode == FusionMode::kLearnable) {
                if (cfg.fusion_weight <= 0.0f || cfg.fusion_weight >= 1.0f)
                    throw ConfigError("config violation: learnable fusion requires fusion_weight in (0,1)");
                const T logit = std::log(T(cfg.fusion_weight) / (T(1) - T(cfg.fusion_weight)));
                p.add(names::layer(i, "fusion.logit"), TensorT<T>::scalar(logit));
            }
        }
    }
    p.add(names::kFinalLnG, TensorT<T>::full({h}, T(1)));
    p.add(names::kFinalLnB, TensorT<T>::zeros({h}));
    return p;
}

// Spec-level dense initializer; rejects MoE configs.
template <typename T>
ParamStoreT<T> init_dense(const ModelConfig& cfg, uint64_t seed) {
    if (cfg.n_experts != 0) throw ConfigError("init_dense requires n_experts == 0");
    return init_model<T>(cfg, seed);
}

// Marks the trainable set given as groups; everything else is frozen.
template <typename T>
void apply_trainable_groups(ParamStoreT<T>& params, const std::vector<ParamGroup>& trainable) {
    for (auto& [name, e] : params) {
        const ParamGroup g = param_group(name);
        e.frozen = std::find(trainable.begin(), trainable.end(), g) == trainable.end();
    }
}

// Default MoE-CT freeze: experts + router + fusion + token embedding
// trainable, all structural parameters and the shared FFN fixed.
template <typename T>
void apply_default_moe_freeze(ParamStoreT<T>& params) {
    apply_trainable_groups(params, {ParamGroup::kTokenEmbedding, ParamGroup::kExpert, ParamGroup::kRouter,
                                    ParamGroup::kFusion});
}

// Dense -> MoE transform: every expert starts as a byte-copy of its layer's
// FFN, the dense FFN is retained as the frozen shared path, the router gate
// starts at zero (plus optional noise), and freeze flags follow the default
// strategy. The combination makes the upcycled model function-preserving.
template <typename T>
ParamStoreT<T> upcycle(const ParamStoreT<T>& dense, const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (cfg.n_experts < 1) throw ConfigError("upcycle requires n_experts >= 1");
    if (store_is_moe(dense)) throw ContractError("upcycle input already contains expert parameters");

    ParamStoreT<T> out = dense.clone();
    const int h = cfg.hidden;
    for (int i = 0; i < cfg.n_layers; ++i) {
        const char* ffn_parts[] = {"w1", "b1", "w2", "b2"};
        for (int j = 0; j < cfg.n_experts; ++j)
            for (const char* part : ffn_parts)
                out.add(names::expert(i, j, part), dense.at(names::layer(i, (std::string("ffn.") + part).c_str())).clone());
        const std::string router_name = names::layer(i, "router.wg");
        out.add(router_name, detail::init_weight<T>({h, cfg.n_experts}, seed, router_name, cfg.router_init_std));
        if (cfg.fusion_mode == FusionMode::kLearnable) {
            if (cfg.fusion_weight <= 0.0f || cfg.fusion_weight >= 1.0f)
                throw ConfigError("config violation: learnable fusion requires fusion_weight in (0,1)");
            const T logit = std::log(T(cfg.fusion_weight) / (T(1) - T(cfg.fusion_weight)));
            out.add(names::layer(i, "fusion.logit"), TensorT<T>::scalar(logit));
        }
    }
    apply_default_moe_freeze(out);
    return out;
}

// Assembled per-layer views over the store (handles share storage).
template <typename T>
struct LayerView {
    TensorT<T> ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b;
    FfnWeightsT<T> ffn;
    RouterT<T> router;
    ExpertSetT<T> experts;
    FusionGateT<T> fusion;
};

template <typename T>
LayerView<T> layer_view(ParamStoreT<T>& params, const ModelConfig& cfg, int i) {
    LayerView<T> v;
    v.ln1_g = params.at(names::layer(i, "ln1.g"));
    v.ln1_b = params.at(names::layer(i, "ln1.b"));
    v.wq = params.at(names::layer(i, "attn.wq"));
    v.wk = params.at(names::layer(i, "attn.wk"));
    v.wv = params.at(names::layer(i, "attn.wv"));
    v.wo = params.at(names::layer(i, "attn.wo"));
    v.ln2_g = params.at(names::layer(i, "ln2.g"));
    v.ln2_b = params.at(names::layer(i, "ln2.b"));
    v.ffn = {params.at(names::layer(i, "ffn.w1")), params.at(names::layer(i, "ffn.b1")),
             params.at(names::layer(i, "ffn.w2")), params.at(names::layer(i, "ffn.b2"))};
    if (cfg.is_moe()) {
        v.router.gate_weights = params.at(names::layer(i, "router.wg"));
        for (int j = 0; j < cfg.n_experts; ++j)
            v.experts.experts.push_back({params.at(names::expert(i, j, "w1")), params.at(names::expert(i, j, "b1")),
                                         params.at(names::expert(i, j, "w2")), params.at(names::expert(i, j, "b2"))});
        v.fusion.mode = cfg.fusion_mode;
        v.fusion.weight = cfg.fusion_weight;
        if (cfg.fusion_mode == FusionMode::kLearnable) v.fusion.logit = params.at(names::layer(i, "fusion.logit"));
    }
    return v;
}

// Next-token logits [batch, seq, vocab] for a token batch. Differentiable
// when a tape is supplied; pass nullptr for inference.
template <typename T>
TensorT<T> model_forward(TapeT<T>* tape, ParamStoreT<T>& params, const ModelConfig& cfg,
                         const std::vector<int>& tokens, int batch, int seq, MoeStats* stats = nullptr) {
    if (seq > cfg.seq_len)
        throw ShapeError("sequence length " + std::to_string(seq) + " exceeds model seq_len " +
                         std::to_string(cfg.seq_len));
    if (static_cast<int64_t>(tokens.size()) != static_cast<int64_t>(batch) * seq)
        throw ShapeError("token buffer holds " + std::to_string(tokens.size()) + " ids, expected batch*seq = " +
                         std::to_string(static_cast<int64_t>(batch) * seq));

    TensorT<T>& tok_embed = params.at(names::kTokEmbed);
    std::vector<int> pos_ids(tokens.size());
    for (int b = 0; b < batch; ++b)
        for (int s = 0; s < seq; ++s) pos_ids[static_cast<size_t>(b) * seq + s] = s;

    TensorT<T> x = ops::add(tape, ops::embedding(tape, tok_embed, tokens, batch, seq),
                            ops::embedding(tape, params.at(names::kPosEmbed), pos_ids, batch, seq));

    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(cfg.head_dim()));
    for (int i = 0; i < cfg.n_layers; ++i) {
        LayerView<T> v = layer_view(params, cfg, i);

        // attention sublayer
        TensorT<T> a = ops::layer_norm(tape, x, v.ln1_g, v.ln1_b);
        TensorT<T> qh = ops::split_heads(tape, ops::matmul(tape, a, v.wq), cfg.n_heads);
        TensorT<T> kh = ops::split_heads(tape, ops::matmul(tape, a, v.wk), cfg.n_heads);
        TensorT<T> vh = ops::split_heads(tape, ops::matmul(tape, a, v.wv), cfg.n_heads);
        TensorT<T> scores = ops::causal_mask(tape, ops::scale(tape, ops::matmul(tape, qh, kh, true), inv_sqrt_d));
        TensorT<T> attn = ops::softmax(tape, scores, -1);
        TensorT<T> ctx = ops::merge_heads(tape, ops::matmul(tape, attn, vh));
        x = ops::add(tape, x, ops::matmul(tape, ctx, v.wo));

        // feed-forward sublayer (dense FFN, or shared FFN fused with MoE)
        TensorT<T> z = ops::layer_norm(tape, x, v.ln2_g, v.ln2_b);
        TensorT<T> ff = ffn_forward(tape, z, v.ffn);
        if (cfg.is_moe()) {
            RoutingDecisionT<T> dec = route(tape, v.router, z, cfg.top_k);
            TensorT<T> moe = moe_forward(tape, v.experts, dec, z, stats);
            ff = fusion_apply(tape, v.fusion, moe, ff);
        }
        x = ops::add(tape, x, ff);
    }

    TensorT<T> xf = ops::layer_norm(tape, x, params.at(names::kFinalLnG), params.at(names::kFinalLnB));
    return ops::matmul(tape, xf, tok_embed, true);  // tied output head
}

// Spec-level dense forward.
template <typename T>
TensorT<T> forward_dense(ParamStoreT<T>& params, const ModelConfig& cfg, const std::vector<int>& tokens, int batch,
                         int seq) {
    if (cfg.is_moe()) throw ConfigError("forward_dense requires a dense config");
    return model_forward<T>(nullptr, params, cfg, tokens, batch, seq);
}

// Parameters evaluated per token under sparse routing: everything except the
// (n_experts - top_k) skipped experts per layer.
inline int64_t activated_param_count(const ModelConfig& cfg, int64_t total_params) {
    if (!cfg.is_moe()) return total_params;
    const int64_t per_expert = 2LL * cfg.hidden * cfg.ffn_inner() + cfg.ffn_inner() + cfg.hidden;
    return total_params - static_cast<int64_t>(cfg.n_layers) * (cfg.n_experts - cfg.top_k) * per_expert;
}

}  // namespace moct
