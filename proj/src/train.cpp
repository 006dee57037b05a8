// SPDX-License-Identifier: Apache-2.0
#include "moct/train.hpp"

#include <cmath>
#include <sstream>

#include "moct/model.hpp"
#include "moct/optimizer.hpp"

namespace moct {

std::string to_string(FreezeStrategy s) { return kFreezeStrategyNames[static_cast<int>(s)]; }

FreezeStrategy freeze_strategy_from_string(const std::string& s) {
    for (int i = 0; i < 5; ++i)
        if (s == kFreezeStrategyNames[i]) return static_cast<FreezeStrategy>(i);
    throw ConfigError("unknown freeze strategy '" + s + "'; valid: " + freeze_strategy_names_joined());
}

std::string freeze_strategy_names_joined() {
    std::string out;
    for (int i = 0; i < 5; ++i) {
        if (i) out += ", ";
        out += kFreezeStrategyNames[i];
    }
    return out;
}

void apply_freeze(ParamStore& params, FreezeStrategy strategy, bool is_moe) {
    if (store_is_moe(params) != is_moe)
        throw ContractError(is_moe ? "apply_freeze: is_moe=true but the store has no expert parameters"
                                   : "apply_freeze: is_moe=false but the store contains expert parameters");
    switch (strategy) {
        case FreezeStrategy::kAll:
            for (auto& [name, e] : params) e.frozen = false;
            break;
        case FreezeStrategy::kAttentionOnly:
            apply_trainable_groups(params, {ParamGroup::kAttention});
            break;
        case FreezeStrategy::kEmbeddingOnly:
            apply_trainable_groups(params, {ParamGroup::kTokenEmbedding});
            break;
        case FreezeStrategy::kExpertsOnly:
            if (!is_moe) throw KindError("freeze strategy 'experts' requires a MoE store");
            apply_trainable_groups(params, {ParamGroup::kExpert, ParamGroup::kRouter, ParamGroup::kFusion});
            break;
        case FreezeStrategy::kEmbeddingAndExperts:
            if (!is_moe) throw KindError("freeze strategy 'embedding_and_experts' requires a MoE store");
            apply_default_moe_freeze(params);
            break;
    }
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train config: steps must be >= 0");
    if (batch <= 0) throw ConfigError("train config: batch must be positive");
    if (seq <= 0) throw ConfigError("train config: seq must be positive");
    if (!(lr > 0.0f)) throw ConfigError("train config: lr must be positive");
    if (warmup_frac < 0.0f || warmup_frac > 0.1f) throw ConfigError("train config: warmup_frac must be in [0, 0.1]");
    if (eval_every < 0) throw ConfigError("train config: eval_every must be >= 0");
}

Json TrainConfig::to_json() const {
    Json j;
    j["steps"] = steps;
    j["batch"] = batch;
    j["seq"] = seq;
    j["lr"] = lr;
    j["warmup_frac"] = warmup_frac;
    j["seed"] = seed;
    j["eval_every"] = eval_every;
    j["eval_tokens"] = eval_tokens;
    return j;
}

TrainConfig TrainConfig::from_json(const Json& j) {
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.seq = j.value("seq", c.seq);
    c.lr = j.value("lr", c.lr);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_tokens = j.value("eval_tokens", c.eval_tokens);
    c.validate();
    return c;
}

std::string TrainLog::to_csv(const std::vector<std::string>& language_ids) const {
    std::ostringstream out;
    out.precision(8);
    out << "step,loss";
    for (const auto& id : language_ids) out << ",ppl_" << id;
    out << "\n";
    size_t ei = 0;
    for (size_t step = 0; step < losses.size(); ++step) {
        out << step << "," << losses[step];
        if (ei < evals.size() && evals[ei].first == static_cast<int>(step)) {
            for (const auto& id : language_ids) out << "," << evals[ei].second.ppl_of(id);
            ++ei;
        } else {
            for (size_t i = 0; i < language_ids.size(); ++i) out << ",";
        }
        out << "\n";
    }
    return out.str();
}

TrainLog train_loop(ParamStore& params, const ModelConfig& cfg, const LanguageSuite& suite, const MixSpec& mix,
                    const TrainConfig& tcfg) {
    tcfg.validate();
    if (tcfg.seq > cfg.seq_len)
        throw ConfigError("train config: seq (" + std::to_string(tcfg.seq) + ") exceeds model seq_len");
    for (const auto& [id, budget] : mix.budgets)
        if (!suite.contains(id)) throw ConfigError("mix references unknown language id '" + id + "'");

    TrainLog log;
    log.frozen_hash_before = params.frozen_hash();
    Adam adam;
    Rng mix_rng(derive_seed(tcfg.seed, "mix"));
    for (int step = 0; step < tcfg.steps; ++step) {
        const std::string& lang = mix.draw(mix_rng);
        const uint64_t stream_seed =
            train_stream_seed(derive_seed(tcfg.seed, "batch", static_cast<uint64_t>(step)));
        // seq+1 tokens per row: inputs are [0, seq), targets are [1, seq].
        const TokenBatch tb = suite.source(lang).sample_batch(tcfg.batch, tcfg.seq + 1, stream_seed);
        std::vector<int> inputs(static_cast<size_t>(tcfg.batch) * tcfg.seq);
        std::vector<int> targets(static_cast<size_t>(tcfg.batch) * tcfg.seq);
        for (int b = 0; b < tcfg.batch; ++b)
            for (int s = 0; s < tcfg.seq; ++s) {
                inputs[static_cast<size_t>(b) * tcfg.seq + s] = tb.tokens[static_cast<size_t>(b) * (tcfg.seq + 1) + s];
                targets[static_cast<size_t>(b) * tcfg.seq + s] =
                    tb.tokens[static_cast<size_t>(b) * (tcfg.seq + 1) + s + 1];
            }

        Tape tape;
        Tensor logits = model_forward<float>(&tape, params, cfg, inputs, tcfg.batch, tcfg.seq);
        Tensor loss = ops::cross_entropy(&tape, logits, targets);
        const float loss_val = loss.data()[0];
        if (!std::isfinite(loss_val))
            throw NumericError("non-finite loss at step " + std::to_string(step));
        tape.backward(loss);
        adam.step(params, warmup_lr(tcfg.lr, step, tcfg.steps, tcfg.warmup_frac));
        log.losses.push_back(loss_val);

        if (tcfg.eval_every > 0 && (step + 1) % tcfg.eval_every == 0)
            log.evals.emplace_back(step, evaluate(params, cfg, suite, tcfg.eval_tokens));
    }
    log.frozen_hash_after = params.frozen_hash();
    return log;
}

TrainLog pretrain(ParamStore& params, const ModelConfig& cfg, const LanguageSuite& suite, const MixSpec& mix,
                  const TrainConfig& tcfg) {
    if (mix.budgets.empty()) throw ConfigError("pretrain: empty corpus mix");
    for (const auto& [id, budget] : mix.budgets) {
        if (!suite.contains(id)) throw ConfigError("mix references unknown language id '" + id + "'");
        if (!suite.source(id).spec().is_original())
            throw ConfigError("pretrain corpus must contain only 'original' languages; '" + id + "' is not");
    }
    return train_loop(params, cfg, suite, mix, tcfg);
}

TrainLog continual_train(ParamStore& params, const ModelConfig& cfg, const LanguageSuite& suite, const MixSpec& mix,
                         const TrainConfig& tcfg) {
    TrainLog log = train_loop(params, cfg, suite, mix, tcfg);
    if (log.frozen_hash_before != log.frozen_hash_after)
        throw ContractError("freeze audit failed: frozen parameter bytes changed during CT");
    return log;
}

MixSpec make_mix(const std::map<std::string, double>& proportions) { return MixSpec::make(proportions); }

}  // namespace moct
