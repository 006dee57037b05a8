// SPDX-License-Identifier: Apache-2.0
//
// Perplexity-based capability scores. Each language is scored by
// teacher-forced perplexity on its fixed held-out stream; group scores are
// the mean log-gap to the analytic entropy floor (0 would be a perfect
// model, more negative is worse). Forgetting is the perplexity change
// against a reference report.
#pragma once

#include <string>
#include <vector>

#include "moct/config.hpp"
#include "moct/corpus.hpp"
#include "moct/param_store.hpp"

namespace moct {

struct LanguageScore {
    std::string id;
    std::string group;  // "original" | "new"
    double floor_ppl = 0.0;
    double ppl = 0.0;
};

struct EvalReport {
    std::vector<LanguageScore> languages;  // suite order
    double original_score = 0.0;  // mean of -ln(ppl/floor) over original languages
    double expanded_score = 0.0;  // same over new languages
    std::string timestamp;
    std::string checkpoint_id;

    double ppl_of(const std::string& id) const;
    Json to_json() const;
    // Deterministic CSV (no timestamp): header + one row per language.
    std::string to_csv() const;
};

struct ForgettingDelta {
    std::vector<std::pair<std::string, double>> per_language;  // ppl change, suite order
    double original_delta = 0.0;  // mean ppl change over original languages; positive = forgetting
    double expanded_delta = 0.0;  // mean ppl change over new languages; negative = gained capability
};

// Teacher-forced perplexity per language over n_tokens of held-out stream.
EvalReport evaluate(ParamStore& params, const ModelConfig& cfg, const LanguageSuite& suite, int n_tokens);

// Perplexity deltas after - before; reports must come from the same suite.
ForgettingDelta compare(const EvalReport& before, const EvalReport& after);

}  // namespace moct
