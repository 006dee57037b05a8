// SPDX-License-Identifier: Apache-2.0
//
// Training loops for pretraining and continual training (CT). A freeze
// strategy names the trainable parameter groups; everything else stays
// byte-identical for the whole run, which continual_train audits by hash.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "moct/config.hpp"
#include "moct/corpus.hpp"
#include "moct/eval.hpp"
#include "moct/param_store.hpp"

namespace moct {

// Trainable sets mirror the freeze ablation: each variant names exactly the
// groups that keep training; "all" unfreezes everything.
enum class FreezeStrategy { kAll, kAttentionOnly, kEmbeddingOnly, kExpertsOnly, kEmbeddingAndExperts };

inline constexpr const char* kFreezeStrategyNames[] = {"all", "attention", "embedding", "experts",
                                                       "embedding_and_experts"};

std::string to_string(FreezeStrategy s);
FreezeStrategy freeze_strategy_from_string(const std::string& s);
std::string freeze_strategy_names_joined();

// Sets frozen flags so that exactly the strategy's groups are trainable.
// Applying twice is a no-op. Expert-touching strategies require a MoE store.
void apply_freeze(ParamStore& params, FreezeStrategy strategy, bool is_moe);

struct TrainConfig {
    int steps = 1000;
    int batch = 8;
    int seq = 64;
    float lr = 1e-3f;
    float warmup_frac = 0.01f;
    uint64_t seed = 0;
    int eval_every = 0;      // 0 = no periodic evals
    int eval_tokens = 4096;  // held-out tokens per language per eval

    void validate() const;
    Json to_json() const;
    static TrainConfig from_json(const Json& j);
};

struct TrainLog {
    std::vector<float> losses;                       // one entry per step
    std::vector<std::pair<int, EvalReport>> evals;   // (step, report) at eval points
    uint64_t frozen_hash_before = 0;
    uint64_t frozen_hash_after = 0;

    // CSV: step, loss, then one ppl column per language (filled at eval rows).
    std::string to_csv(const std::vector<std::string>& language_ids) const;
};

// Next-token training over language-homogeneous batches drawn from the mix.
// Used by both pretrain and continual_train.
TrainLog train_loop(ParamStore& params, const ModelConfig& cfg, const LanguageSuite& suite, const MixSpec& mix,
                    const TrainConfig& tcfg);

// Pretraining: the mix may only reference "original" languages.
TrainLog pretrain(ParamStore& params, const ModelConfig& cfg, const LanguageSuite& suite, const MixSpec& mix,
                  const TrainConfig& tcfg);

// CT with the built-in freeze audit: frozen bytes must hash identically
// before and after, else a ContractError is raised.
TrainLog continual_train(ParamStore& params, const ModelConfig& cfg, const LanguageSuite& suite, const MixSpec& mix,
                         const TrainConfig& tcfg);

// Spec-level alias over MixSpec::make.
MixSpec make_mix(const std::map<std::string, double>& proportions);

}  // namespace moct
