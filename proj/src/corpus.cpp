// SPDX-License-Identifier: Apache-2.0
#include "moct/corpus.hpp"

#include <algorithm>
#include <cmath>

namespace moct {

namespace {

constexpr double kDirichletAlpha = 0.3;
constexpr double kOutOfSupportProb = 1e-12;

}  // namespace

Json LanguageSpec::to_json() const {
    Json j;
    j["id"] = id;
    j["slice"] = Json::array({slice_lo, slice_hi});
    j["markov_order"] = markov_order;
    j["transition_seed"] = transition_seed;
    j["overlap"] = Json::array({overlap_lo, overlap_hi});
    j["group"] = group;
    return j;
}

LanguageSpec LanguageSpec::from_json(const Json& j) {
    LanguageSpec s;
    s.id = j.at("id").get<std::string>();
    s.slice_lo = j.at("slice").at(0).get<int>();
    s.slice_hi = j.at("slice").at(1).get<int>();
    s.markov_order = j.value("markov_order", 1);
    s.transition_seed = j.value("transition_seed", uint64_t{0});
    if (j.contains("overlap")) {
        s.overlap_lo = j["overlap"].at(0).get<int>();
        s.overlap_hi = j["overlap"].at(1).get<int>();
    }
    s.group = j.value("group", std::string("original"));
    return s;
}

MarkovSource MarkovSource::build(const LanguageSpec& spec, int model_vocab) {
    if (spec.id.empty()) throw ConfigError("language spec requires a non-empty id");
    if (spec.markov_order != 1 && spec.markov_order != 2)
        throw ConfigError("language '" + spec.id + "': markov_order must be 1 or 2");
    if (spec.slice_lo < 0 || spec.slice_hi > model_vocab || spec.slice_lo >= spec.slice_hi)
        throw ConfigError("language '" + spec.id + "': private slice [" + std::to_string(spec.slice_lo) + "," +
                          std::to_string(spec.slice_hi) + ") outside vocab [0," + std::to_string(model_vocab) + ")");
    if (spec.overlap_lo < 0 || spec.overlap_hi > model_vocab || spec.overlap_lo > spec.overlap_hi)
        throw ConfigError("language '" + spec.id + "': overlap range outside vocab");
    if (spec.group != "original" && spec.group != "new")
        throw ConfigError("language '" + spec.id + "': group must be 'original' or 'new'");

    MarkovSource src;
    src.spec_ = spec;
    src.order_ = spec.markov_order;
    src.tok2idx_.assign(static_cast<size_t>(model_vocab), -1);
    for (int t = spec.overlap_lo; t < spec.overlap_hi; ++t) src.alphabet_.push_back(t);
    for (int t = spec.slice_lo; t < spec.slice_hi; ++t)
        if (t < spec.overlap_lo || t >= spec.overlap_hi) src.alphabet_.push_back(t);
    std::sort(src.alphabet_.begin(), src.alphabet_.end());
    src.a_ = static_cast<int>(src.alphabet_.size());
    for (int i = 0; i < src.a_; ++i) src.tok2idx_[static_cast<size_t>(src.alphabet_[static_cast<size_t>(i)])] = i;

    src.n_states_ = 1;
    for (int i = 0; i < src.order_; ++i) src.n_states_ *= src.a_;

    Rng rng(derive_seed(spec.transition_seed, "transition", fnv1a64(spec.id)));
    src.trans_.resize(static_cast<size_t>(src.n_states_) * src.a_);
    for (int s = 0; s < src.n_states_; ++s) {
        const auto row = rng.dirichlet(kDirichletAlpha, src.a_);
        std::copy(row.begin(), row.end(), src.trans_.begin() + static_cast<int64_t>(s) * src.a_);
    }

    // Stationary distribution of the state chain by power iteration. From
    // state s the chain moves to (s mod a^(order-1)) * a + j.
    const int shift = src.n_states_ / src.a_;
    std::vector<double> pi(static_cast<size_t>(src.n_states_), 1.0 / src.n_states_);
    std::vector<double> next(static_cast<size_t>(src.n_states_));
    for (int iter = 0; iter < 20000; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (int s = 0; s < src.n_states_; ++s) {
            const double ps = pi[static_cast<size_t>(s)];
            if (ps == 0.0) continue;
            const double* row = src.trans_.data() + static_cast<int64_t>(s) * src.a_;
            const int base = (s % shift) * src.a_;
            for (int j = 0; j < src.a_; ++j) next[static_cast<size_t>(base + j)] += ps * row[j];
        }
        double delta = 0.0, total = 0.0;
        for (size_t i = 0; i < pi.size(); ++i) {
            delta += std::abs(next[i] - pi[i]);
            total += next[i];
        }
        for (auto& v : next) v /= total;
        pi.swap(next);
        if (delta < 1e-13) break;
    }
    src.stationary_ = std::move(pi);

    double h = 0.0;
    for (int s = 0; s < src.n_states_; ++s) {
        const double* row = src.trans_.data() + static_cast<int64_t>(s) * src.a_;
        double hs = 0.0;
        for (int j = 0; j < src.a_; ++j)
            if (row[j] > 0.0) hs -= row[j] * std::log(row[j]);
        h += src.stationary_[static_cast<size_t>(s)] * hs;
    }
    src.entropy_rate_ = h;
    return src;
}

std::vector<double> MarkovSource::token_marginal() const {
    std::vector<double> out(static_cast<size_t>(a_), 0.0);
    for (int s = 0; s < n_states_; ++s) out[static_cast<size_t>(s % a_)] += stationary_[static_cast<size_t>(s)];
    return out;
}

int MarkovSource::sample_next(int state, Rng& rng) const {
    const double* row = trans_.data() + static_cast<int64_t>(state) * a_;
    double r = rng.uniform();
    for (int j = 0; j + 1 < a_; ++j) {
        r -= row[j];
        if (r < 0.0) return j;
    }
    return a_ - 1;
}

int MarkovSource::advance(int state, int tok_idx) const { return (state % (n_states_ / a_)) * a_ + tok_idx; }

std::vector<int> MarkovSource::sample_stream(int n_tokens, uint64_t stream_seed) const {
    if (n_tokens < order_) throw ConfigError("stream length must cover at least the markov order");
    Rng rng(stream_seed);
    std::vector<int> out;
    out.reserve(static_cast<size_t>(n_tokens));
    int state = rng.categorical(stationary_);
    // emit the state's tokens (most recent last), then walk the chain
    std::vector<int> ctx(static_cast<size_t>(order_));
    int s = state;
    for (int i = order_ - 1; i >= 0; --i) {
        ctx[static_cast<size_t>(i)] = s % a_;
        s /= a_;
    }
    for (int i = 0; i < order_ && static_cast<int>(out.size()) < n_tokens; ++i)
        out.push_back(alphabet_[static_cast<size_t>(ctx[static_cast<size_t>(i)])]);
    while (static_cast<int>(out.size()) < n_tokens) {
        const int j = sample_next(state, rng);
        out.push_back(alphabet_[static_cast<size_t>(j)]);
        state = advance(state, j);
    }
    return out;
}

TokenBatch MarkovSource::sample_batch(int batch, int seq, uint64_t stream_seed) const {
    TokenBatch b;
    b.batch = batch;
    b.seq = seq;
    b.language_id = spec_.id;
    b.tokens.reserve(static_cast<size_t>(batch) * seq);
    for (int r = 0; r < batch; ++r) {
        const auto row = sample_stream(seq, derive_seed(stream_seed, "row", static_cast<uint64_t>(r)));
        b.tokens.insert(b.tokens.end(), row.begin(), row.end());
    }
    return b;
}

std::vector<int> MarkovSource::heldout_set(int n_tokens) const {
    if (n_tokens < order_) throw ConfigError("heldout_set needs n_tokens >= markov order");
    const uint64_t seed = eval_stream_seed(derive_seed(spec_.transition_seed, "heldout", fnv1a64(spec_.id)));
    return sample_stream(n_tokens, seed);
}

double MarkovSource::stream_nll(const std::vector<int>& tokens) const {
    double total = 0.0;
    int64_t count = 0;
    int state = 0;
    int warm = 0;  // in-support tokens consumed since last reset
    for (int tok : tokens) {
        const int idx = (tok >= 0 && tok < static_cast<int>(tok2idx_.size())) ? tok2idx_[static_cast<size_t>(tok)] : -1;
        if (idx < 0) {
            total -= std::log(kOutOfSupportProb);
            ++count;
            warm = 0;
            state = 0;
            continue;
        }
        if (warm >= order_) {
            total -= std::log(trans_[static_cast<int64_t>(state) * a_ + idx]);
            ++count;
        }
        state = warm < order_ ? (state * a_ + idx) % n_states_ : advance(state, idx);
        ++warm;
    }
    if (count == 0) throw ConfigError("stream too short to score");
    return total / static_cast<double>(count);
}

LanguageSuite LanguageSuite::build(std::vector<LanguageSpec> specs, int model_vocab) {
    if (specs.empty()) throw ConfigError("language suite must not be empty");
    LanguageSuite suite;
    for (size_t i = 0; i < specs.size(); ++i) {
        for (size_t j = 0; j < i; ++j) {
            const auto& a = specs[i];
            const auto& b = specs[j];
            if (a.id == b.id) throw ConfigError("duplicate language id '" + a.id + "'");
            const bool disjoint = a.slice_hi <= b.slice_lo || b.slice_hi <= a.slice_lo;
            if (!disjoint)
                throw ConfigError("private slices of '" + a.id + "' and '" + b.id + "' overlap");
        }
        suite.index_[specs[i].id] = i;
        suite.sources_.push_back(MarkovSource::build(specs[i], model_vocab));
    }
    suite.specs_ = std::move(specs);
    return suite;
}

LanguageSuite LanguageSuite::default_suite(int model_vocab) {
    if (model_vocab < 64) throw ConfigError("default suite needs vocab >= 64");
    const int overlap_hi = model_vocab / 10;  // shared cross-lingual anchors
    std::vector<LanguageSpec> specs;
    const char* ids[6] = {"orig_a", "orig_b", "new_c", "new_d", "new_e", "new_f"};
    int lo = overlap_hi;
    for (int i = 0; i < 6; ++i) {
        LanguageSpec s;
        s.id = ids[i];
        s.slice_lo = lo;
        s.slice_hi = lo + 6;
        lo += 6;
        s.markov_order = i < 2 ? 2 : 1;
        s.transition_seed = 1000 + static_cast<uint64_t>(i);
        s.overlap_lo = 0;
        s.overlap_hi = overlap_hi;
        s.group = i < 2 ? "original" : "new";
        specs.push_back(std::move(s));
    }
    return build(std::move(specs), model_vocab);
}

LanguageSuite LanguageSuite::from_json(const Json& j, int model_vocab) {
    std::vector<LanguageSpec> specs;
    for (const auto& item : j.at("languages")) specs.push_back(LanguageSpec::from_json(item));
    return build(std::move(specs), model_vocab);
}

Json LanguageSuite::to_json() const {
    Json j;
    j["languages"] = Json::array();
    for (const auto& s : specs_) j["languages"].push_back(s.to_json());
    return j;
}

const MarkovSource& LanguageSuite::source(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ConfigError("unknown language id '" + id + "'");
    return sources_[it->second];
}

std::vector<std::string> LanguageSuite::ids() const {
    std::vector<std::string> out;
    for (const auto& s : specs_) out.push_back(s.id);
    return out;
}

std::vector<std::string> LanguageSuite::ids_in_group(const std::string& group) const {
    std::vector<std::string> out;
    for (const auto& s : specs_)
        if (s.group == group) out.push_back(s.id);
    return out;
}

MixSpec MixSpec::make(const std::map<std::string, double>& proportions) {
    if (proportions.empty()) throw ConfigError("mix requires at least one language");
    MixSpec m;
    for (const auto& [id, budget] : proportions) {
        if (!(budget > 0.0)) throw ConfigError("mix budget for '" + id + "' must be positive");
        m.budgets.emplace_back(id, budget);
    }
    return m;
}

const std::string& MixSpec::draw(Rng& rng) const {
    if (budgets.empty()) throw ConfigError("mix is empty");
    std::vector<double> w(budgets.size());
    for (size_t i = 0; i < budgets.size(); ++i) w[i] = budgets[i].second;
    return budgets[static_cast<size_t>(rng.categorical(w))].first;
}

double MixSpec::total() const {
    double t = 0.0;
    for (const auto& [id, b] : budgets) t += b;
    return t;
}

Json MixSpec::to_json() const {
    Json j = Json::object();
    for (const auto& [id, b] : budgets) j[id] = b;
    return j;
}

MixSpec MixSpec::from_json(const Json& j) {
    std::map<std::string, double> p;
    for (auto it = j.begin(); it != j.end(); ++it) p[it.key()] = it.value().get<double>();
    return make(p);
}

}  // namespace moct
