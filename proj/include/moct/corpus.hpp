// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic languages: seeded order-1/2 Markov chains over a
// private token slice plus an optional shared overlap range. The transition
// matrix is drawn from a symmetric Dirichlet, so the entropy rate — and with
// it the best achievable perplexity exp(H) — is known in closed form.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "moct/config.hpp"
#include "moct/errors.hpp"
#include "moct/rng.hpp"

namespace moct {

struct LanguageSpec {
    std::string id;
    int slice_lo = 0;  // private token range [slice_lo, slice_hi)
    int slice_hi = 0;
    int markov_order = 1;  // 1 or 2
    uint64_t transition_seed = 0;
    int overlap_lo = 0;  // shared range [overlap_lo, overlap_hi); empty if equal
    int overlap_hi = 0;
    std::string group = "original";  // "original" | "new"

    bool is_original() const { return group == "original"; }

    Json to_json() const;
    static LanguageSpec from_json(const Json& j);
};

struct TokenBatch {
    std::vector<int> tokens;  // row-major [batch, seq]
    int batch = 0;
    int seq = 0;
    std::string language_id;
};

// A built language: row-stochastic transition matrix over the allowed token
// set, its stationary distribution, and the analytic entropy rate.
class MarkovSource {
  public:
    static MarkovSource build(const LanguageSpec& spec, int model_vocab);

    const LanguageSpec& spec() const { return spec_; }
    int alphabet_size() const { return a_; }
    const std::vector<int>& alphabet() const { return alphabet_; }
    int order() const { return order_; }
    int n_states() const { return n_states_; }
    const std::vector<double>& transition_matrix() const { return trans_; }
    const std::vector<double>& stationary() const { return stationary_; }

    double entropy_rate() const { return entropy_rate_; }  // nats per token
    double floor_perplexity() const { return std::exp(entropy_rate_); }

    // Stationary marginal over tokens (states collapsed to their last token).
    std::vector<double> token_marginal() const;

    // Walk of n tokens started from the stationary state distribution.
    // Deterministic in stream_seed.
    std::vector<int> sample_stream(int n_tokens, uint64_t stream_seed) const;

    // batch independent rows, each a fresh stationary-start walk.
    TokenBatch sample_batch(int batch, int seq, uint64_t stream_seed) const;

    // Fixed held-out stream, drawn from the odd half of seed space so it can
    // never coincide with a training draw.
    std::vector<int> heldout_set(int n_tokens) const;

    // Mean per-token negative log-probability the source itself assigns to a
    // stream (positions without full context are skipped; out-of-support
    // tokens are scored at a tiny floor probability).
    double stream_nll(const std::vector<int>& tokens) const;
    double stream_perplexity(const std::vector<int>& tokens) const { return std::exp(stream_nll(tokens)); }

  private:
    LanguageSpec spec_;
    std::vector<int> alphabet_;
    std::vector<int> tok2idx_;  // model-vocab sized; -1 outside the alphabet
    int order_ = 1;
    int a_ = 0;
    int n_states_ = 0;
    std::vector<double> trans_;       // [n_states, a]
    std::vector<double> stationary_;  // [n_states]
    double entropy_rate_ = 0.0;

    int sample_next(int state, Rng& rng) const;
    int advance(int state, int tok_idx) const;
};

// The language suite used by a run: specs plus built sources, keyed by id.
class LanguageSuite {
  public:
    static LanguageSuite build(std::vector<LanguageSpec> specs, int model_vocab);

    // 2 original order-2 languages and 4 new order-1 languages over a
    // 64-token vocabulary with a shared 10% overlap range.
    static LanguageSuite default_suite(int model_vocab = 64);

    static LanguageSuite from_json(const Json& j, int model_vocab);
    Json to_json() const;

    const std::vector<LanguageSpec>& specs() const { return specs_; }
    const MarkovSource& source(const std::string& id) const;
    bool contains(const std::string& id) const { return index_.count(id) != 0; }
    std::vector<std::string> ids() const;
    std::vector<std::string> ids_in_group(const std::string& group) const;

  private:
    std::vector<LanguageSpec> specs_;
    std::vector<MarkovSource> sources_;
    std::map<std::string, size_t> index_;
};

// Token-budget proportions over languages; batches draw languages via a
// seeded categorical so the empirical mix converges to the budgets.
struct MixSpec {
    std::vector<std::pair<std::string, double>> budgets;  // sorted by id

    static MixSpec make(const std::map<std::string, double>& proportions);
    const std::string& draw(Rng& rng) const;
    double total() const;

    Json to_json() const;
    static MixSpec from_json(const Json& j);
};

}  // namespace moct
