// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include <json.hpp>

#include "moct/errors.hpp"

namespace moct {

using Json = nlohmann::ordered_json;

enum class FusionMode { kFixed, kLearnable };

inline std::string to_string(FusionMode m) { return m == FusionMode::kFixed ? "fixed" : "learnable"; }

inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "fixed") return FusionMode::kFixed;
    if (s == "learnable") return FusionMode::kLearnable;
    throw ConfigError("unknown fusion_mode '" + s + "' (expected 'fixed' or 'learnable')");
}

// Architecture hyperparameters shared by the dense and MoE variants.
// n_experts == 0 means dense.
struct ModelConfig {
    int n_layers = 2;
    int hidden = 32;
    int n_heads = 4;
    int vocab = 64;
    int seq_len = 64;
    int ffn_mult = 4;
    int n_experts = 0;
    int top_k = 1;
    float fusion_weight = 0.5f;
    FusionMode fusion_mode = FusionMode::kFixed;
    float router_init_std = 0.0f;  // optional symmetry-breaking noise on W_g
    bool load_balance_loss = false;  // reserved; must stay false

    bool is_moe() const { return n_experts > 0; }
    int ffn_inner() const { return ffn_mult * hidden; }
    int head_dim() const { return hidden / n_heads; }

    void validate() const {
        if (n_layers <= 0) throw ConfigError("config violation: n_layers must be positive");
        if (hidden <= 0) throw ConfigError("config violation: hidden must be positive");
        if (n_heads <= 0) throw ConfigError("config violation: n_heads must be positive");
        if (hidden % n_heads != 0)
            throw ConfigError("config violation: hidden (" + std::to_string(hidden) +
                              ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
        if (vocab <= 0) throw ConfigError("config violation: vocab must be positive");
        if (seq_len <= 0) throw ConfigError("config violation: seq_len must be positive");
        if (ffn_mult <= 0) throw ConfigError("config violation: ffn_mult must be positive");
        if (n_experts < 0) throw ConfigError("config violation: n_experts must be >= 0");
        if (n_experts > 0 && (top_k < 1 || top_k > n_experts))
            throw ConfigError("config violation: top_k (" + std::to_string(top_k) + ") must be in [1, n_experts=" +
                              std::to_string(n_experts) + "]");
        if (fusion_weight < 0.0f || fusion_weight > 1.0f)
            throw ConfigError("config violation: fusion_weight must be in [0,1]");
        if (router_init_std < 0.0f) throw ConfigError("config violation: router_init_std must be >= 0");
        if (load_balance_loss)
            throw ConfigError("config violation: load_balance_loss is reserved and must be false");
    }

    Json to_json() const {
        Json j;
        j["n_layers"] = n_layers;
        j["hidden"] = hidden;
        j["n_heads"] = n_heads;
        j["vocab"] = vocab;
        j["seq_len"] = seq_len;
        j["ffn_mult"] = ffn_mult;
        j["n_experts"] = n_experts;
        j["top_k"] = top_k;
        j["fusion_weight"] = fusion_weight;
        j["fusion_mode"] = to_string(fusion_mode);
        j["router_init_std"] = router_init_std;
        j["load_balance_loss"] = load_balance_loss;
        return j;
    }

    static ModelConfig from_json(const Json& j) {
        ModelConfig c;
        c.n_layers = j.value("n_layers", c.n_layers);
        c.hidden = j.value("hidden", c.hidden);
        c.n_heads = j.value("n_heads", c.n_heads);
        c.vocab = j.value("vocab", c.vocab);
        c.seq_len = j.value("seq_len", c.seq_len);
        c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
        c.n_experts = j.value("n_experts", c.n_experts);
        c.top_k = j.value("top_k", c.top_k);
        c.fusion_weight = j.value("fusion_weight", c.fusion_weight);
        if (j.contains("fusion_mode")) c.fusion_mode = fusion_mode_from_string(j["fusion_mode"].get<std::string>());
        c.router_init_std = j.value("router_init_std", c.router_init_std);
        c.load_balance_loss = j.value("load_balance_loss", c.load_balance_loss);
        c.validate();
        return c;
    }
};

}  // namespace moct
