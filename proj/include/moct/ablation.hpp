// SPDX-License-Identifier: Apache-2.0
//
// Ablation grids over the CT recipe. Every grid point starts from the same
// pretrained dense checkpoint, so differences in the resulting reports are
// attributable to the recipe axes: freeze_strategy, fusion_weight,
// n_experts, data_ratio. Points run as independent jobs.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "moct/config.hpp"
#include "moct/corpus.hpp"
#include "moct/eval.hpp"
#include "moct/param_store.hpp"
#include "moct/train.hpp"

namespace moct {

// One resolved CT recipe: what a single grid point runs.
struct CtRecipe {
    int n_experts = 2;  // 0 = dense CT
    int top_k = 1;
    float fusion_weight = 0.5f;
    std::string fusion_mode = "fixed";
    std::string freeze_strategy;    // empty = default for the model kind
    std::string data_ratio = "2:20";  // original:new token budgets
};

struct AblationGrid {
    // Axis values in declaration order; valid axes are freeze_strategy,
    // fusion_weight, n_experts, data_ratio.
    std::vector<std::pair<std::string, std::vector<Json>>> axes;
    std::vector<uint64_t> seeds = {0, 1, 2};
    CtRecipe defaults;
    TrainConfig train;
    int eval_tokens = 4096;

    static AblationGrid from_json(const Json& j);
    Json to_json() const;
};

struct AblationPointResult {
    std::string point_id;
    uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> axis_values;  // axis -> printed value
    CtRecipe recipe;
    EvalReport before, after;
    ForgettingDelta delta;
};

// Mix with the original group getting orig_share and the new group
// new_share of the token budget, split evenly inside each group.
MixSpec mix_from_ratio(const LanguageSuite& suite, double orig_share, double new_share);
MixSpec mix_from_ratio_string(const LanguageSuite& suite, const std::string& ratio);

// Runs one grid point end to end (upcycle when n_experts > 0, freeze, CT,
// before/after eval).
AblationPointResult run_ct_point(const ParamStore& base_dense, const ModelConfig& base_cfg,
                                 const LanguageSuite& suite, const CtRecipe& recipe, const TrainConfig& train,
                                 int eval_tokens, uint64_t seed);

// Full grid; jobs > 1 runs points concurrently. Results keep grid order.
std::vector<AblationPointResult> run_ablation(const AblationGrid& grid, const ParamStore& base_dense,
                                              const ModelConfig& base_cfg, const LanguageSuite& suite, int jobs = 1);

// results.csv: point-id, seed, axis columns, per-language ppl, scores, deltas.
std::string ablation_results_csv(const AblationGrid& grid, const LanguageSuite& suite,
                                 const std::vector<AblationPointResult>& results);

// Per-axis, per-seed ordering summary (human-readable).
std::string ablation_trend_summary(const AblationGrid& grid, const std::vector<AblationPointResult>& results);

// Writes results.csv and summary.txt atomically into out_dir.
void write_ablation_outputs(const std::filesystem::path& out_dir, const AblationGrid& grid,
                            const LanguageSuite& suite, const std::vector<AblationPointResult>& results);

}  // namespace moct
