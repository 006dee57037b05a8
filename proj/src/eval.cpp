// SPDX-License-Identifier: Apache-2.0
#include "moct/eval.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "moct/model.hpp"

namespace moct {

namespace {

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Mean NLL of next-token predictions over seq-sized windows of the stream.
// Windows overlap by kWarmup positions whose predictions are not scored, so
// every scored target (past the first window) sees plenty of true context
// rather than a cold window boundary.
double model_stream_nll(ParamStore& params, const ModelConfig& cfg, const std::vector<int>& stream) {
    const int seq = cfg.seq_len;
    const int warmup = std::min(8, seq / 4);
    const int stride = seq - warmup;
    const int n = static_cast<int>(stream.size());
    if (n < seq + 1) throw ConfigError("evaluation stream shorter than one window");
    std::vector<int> starts;
    for (int s = 0; s + seq + 1 <= n; s += stride) starts.push_back(s);

    constexpr int kChunk = 16;
    double total = 0.0;
    int64_t count = 0;
    for (size_t w0 = 0; w0 < starts.size(); w0 += kChunk) {
        const int rows = static_cast<int>(std::min<size_t>(kChunk, starts.size() - w0));
        std::vector<int> inputs(static_cast<size_t>(rows) * seq);
        std::vector<int> targets(static_cast<size_t>(rows) * seq);
        for (int r = 0; r < rows; ++r) {
            const int base = starts[w0 + static_cast<size_t>(r)];
            for (int s = 0; s < seq; ++s) {
                inputs[static_cast<size_t>(r) * seq + s] = stream[static_cast<size_t>(base + s)];
                targets[static_cast<size_t>(r) * seq + s] = stream[static_cast<size_t>(base + s + 1)];
            }
        }
        Tensor logits = model_forward<float>(nullptr, params, cfg, inputs, rows, seq);
        // score per position, skipping the warmup prefix of overlapped rows
        const float* lp = logits.data().data();
        for (int r = 0; r < rows; ++r) {
            const int skip = (w0 + static_cast<size_t>(r)) == 0 ? 0 : warmup;
            for (int s = skip; s < seq; ++s) {
                const float* row = lp + (static_cast<int64_t>(r) * seq + s) * cfg.vocab;
                float mx = row[0];
                for (int v = 1; v < cfg.vocab; ++v) mx = std::max(mx, row[v]);
                double sum = 0.0;
                for (int v = 0; v < cfg.vocab; ++v) sum += std::exp(static_cast<double>(row[v]) - mx);
                total += mx + std::log(sum) - row[targets[static_cast<size_t>(r) * seq + s]];
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

double group_score(const std::vector<LanguageScore>& langs, const std::string& group) {
    double sum = 0.0;
    int n = 0;
    for (const auto& l : langs) {
        if (l.group != group) continue;
        sum += -(std::log(l.ppl) - std::log(l.floor_ppl));
        ++n;
    }
    return n ? sum / n : 0.0;
}

}  // namespace

double EvalReport::ppl_of(const std::string& id) const {
    for (const auto& l : languages)
        if (l.id == id) return l.ppl;
    throw ConfigError("report has no language '" + id + "'");
}

Json EvalReport::to_json() const {
    Json j;
    j["timestamp"] = timestamp;
    j["checkpoint_id"] = checkpoint_id;
    j["original_score"] = original_score;
    j["expanded_score"] = expanded_score;
    j["languages"] = Json::array();
    for (const auto& l : languages) {
        Json lj;
        lj["id"] = l.id;
        lj["group"] = l.group;
        lj["floor_ppl"] = l.floor_ppl;
        lj["ppl"] = l.ppl;
        j["languages"].push_back(lj);
    }
    return j;
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "language,group,floor_ppl,ppl\n";
    out.precision(10);
    for (const auto& l : languages) out << l.id << "," << l.group << "," << l.floor_ppl << "," << l.ppl << "\n";
    out.precision(10);
    out << "original_score,,," << original_score << "\n";
    out << "expanded_score,,," << expanded_score << "\n";
    return out.str();
}

EvalReport evaluate(ParamStore& params, const ModelConfig& cfg, const LanguageSuite& suite, int n_tokens) {
    if (n_tokens < 10 * cfg.seq_len)
        throw ConfigError("evaluate requires n_tokens >= 10 * seq_len (" + std::to_string(10 * cfg.seq_len) + ")");
    EvalReport report;
    report.timestamp = utc_now();
    for (const auto& spec : suite.specs()) {
        const MarkovSource& src = suite.source(spec.id);
        const std::vector<int> stream = src.heldout_set(n_tokens);
        LanguageScore score;
        score.id = spec.id;
        score.group = spec.group;
        score.floor_ppl = src.floor_perplexity();
        score.ppl = std::exp(model_stream_nll(params, cfg, stream));
        report.languages.push_back(score);
    }
    report.original_score = group_score(report.languages, "original");
    report.expanded_score = group_score(report.languages, "new");
    return report;
}

ForgettingDelta compare(const EvalReport& before, const EvalReport& after) {
    if (before.languages.size() != after.languages.size())
        throw ContractError("compare: reports cover different suites");
    ForgettingDelta d;
    double orig_sum = 0.0, new_sum = 0.0;
    int orig_n = 0, new_n = 0;
    for (size_t i = 0; i < before.languages.size(); ++i) {
        const auto& b = before.languages[i];
        const auto& a = after.languages[i];
        if (a.id != b.id || a.group != b.group)
            throw ContractError("compare: reports cover different suites ('" + b.id + "' vs '" + a.id + "')");
        const double delta = a.ppl - b.ppl;
        d.per_language.emplace_back(a.id, delta);
        if (a.group == "original") {
            orig_sum += delta;
            ++orig_n;
        } else {
            new_sum += delta;
            ++new_n;
        }
    }
    d.original_delta = orig_n ? orig_sum / orig_n : 0.0;
    d.expanded_delta = new_n ? new_sum / new_n : 0.0;
    return d;
}

}  // namespace moct
