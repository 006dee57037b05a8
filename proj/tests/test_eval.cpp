// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "moct/ablation.hpp"
#include "moct/eval.hpp"
#include "moct/model.hpp"
#include "moct/report.hpp"
#include "test_util.hpp"

using namespace moct;

namespace {

ModelConfig eval_cfg() {
    ModelConfig c;
    c.n_layers = 1;
    c.hidden = 16;
    c.n_heads = 2;
    c.vocab = 64;
    c.seq_len = 32;
    c.ffn_mult = 2;
    return c;
}

const LanguageSuite& suite64() {
    static LanguageSuite s = LanguageSuite::default_suite(64);
    return s;
}

}  // namespace

TEST_CASE("untrained model scores near-vocab perplexity on every language") {
    ModelConfig cfg = eval_cfg();
    ParamStore p = init_dense<float>(cfg, 21);
    EvalReport r = evaluate(p, cfg, suite64(), 1280);
    for (const auto& l : r.languages) {
        CHECK(std::abs(l.ppl - cfg.vocab) / cfg.vocab < 0.10);
        // perplexity floor: no language can be beaten past sampling noise
        CHECK(l.ppl >= l.floor_ppl * 0.98);
    }
}

TEST_CASE("evaluate is deterministic") {
    ModelConfig cfg = eval_cfg();
    ParamStore p = init_dense<float>(cfg, 22);
    EvalReport a = evaluate(p, cfg, suite64(), 640);
    EvalReport b = evaluate(p, cfg, suite64(), 640);
    REQUIRE(a.languages.size() == b.languages.size());
    for (size_t i = 0; i < a.languages.size(); ++i) CHECK(a.languages[i].ppl == b.languages[i].ppl);
    CHECK(a.original_score == b.original_score);
    CHECK(a.to_csv() == b.to_csv());
}

TEST_CASE("evaluate enforces the minimum token count") {
    ModelConfig cfg = eval_cfg();
    ParamStore p = init_dense<float>(cfg, 23);
    CHECK_THROWS_AS(evaluate(p, cfg, suite64(), 10 * cfg.seq_len - 1), ConfigError);
}

TEST_CASE("report lookup of an unknown language fails") {
    ModelConfig cfg = eval_cfg();
    ParamStore p = init_dense<float>(cfg, 24);
    EvalReport r = evaluate(p, cfg, suite64(), 640);
    CHECK_THROWS_AS(r.ppl_of("klingon"), ConfigError);
}

TEST_CASE("compare of a report with itself is exactly zero") {
    ModelConfig cfg = eval_cfg();
    ParamStore p = init_dense<float>(cfg, 25);
    EvalReport r = evaluate(p, cfg, suite64(), 640);
    ForgettingDelta d = compare(r, r);
    for (const auto& [id, delta] : d.per_language) CHECK(delta == 0.0);
    CHECK(d.original_delta == 0.0);
    CHECK(d.expanded_delta == 0.0);
}

TEST_CASE("compare is antisymmetric") {
    ModelConfig cfg = eval_cfg();
    ParamStore p1 = init_dense<float>(cfg, 26);
    ParamStore p2 = init_dense<float>(cfg, 27);
    EvalReport a = evaluate(p1, cfg, suite64(), 640);
    EvalReport b = evaluate(p2, cfg, suite64(), 640);
    ForgettingDelta ab = compare(a, b);
    ForgettingDelta ba = compare(b, a);
    for (size_t i = 0; i < ab.per_language.size(); ++i)
        CHECK(ab.per_language[i].second == doctest::Approx(-ba.per_language[i].second).epsilon(1e-12));
    CHECK(ab.original_delta == doctest::Approx(-ba.original_delta).epsilon(1e-12));
    CHECK(ab.expanded_delta == doctest::Approx(-ba.expanded_delta).epsilon(1e-12));
}

TEST_CASE("compare rejects mismatched suites") {
    ModelConfig cfg = eval_cfg();
    ParamStore p = init_dense<float>(cfg, 28);
    EvalReport r = evaluate(p, cfg, suite64(), 640);
    EvalReport truncated = r;
    truncated.languages.pop_back();
    CHECK_THROWS_AS(compare(r, truncated), ContractError);
    EvalReport renamed = r;
    renamed.languages[0].id = "other";
    CHECK_THROWS_AS(compare(r, renamed), ContractError);
}

TEST_CASE("ablation grid validates axes and runs a 1-point grid like a single ct+eval") {
    Json bad;
    bad["axes"]["curvature"] = Json::array({1, 2});
    CHECK_THROWS_WITH_AS(AblationGrid::from_json(bad), doctest::Contains("curvature"), ConfigError);

    ModelConfig cfg = eval_cfg();
    ParamStore dense = init_dense<float>(cfg, 29);

    Json gj;
    gj["axes"]["fusion_weight"] = Json::array({0.5});
    gj["seeds"] = Json::array({0});
    gj["defaults"]["n_experts"] = 2;
    gj["defaults"]["data_ratio"] = "1:10";
    gj["train"]["steps"] = 5;
    gj["train"]["batch"] = 2;
    gj["train"]["seq"] = 32;
    gj["train"]["lr"] = 1e-3;
    gj["eval_tokens"] = 640;
    AblationGrid grid = AblationGrid::from_json(gj);

    const auto results = run_ablation(grid, dense, cfg, suite64(), 1);
    REQUIRE(results.size() == 1);

    // direct single run with the same recipe must reproduce the same numbers
    CtRecipe recipe = grid.defaults;
    recipe.fusion_weight = 0.5f;
    const auto direct = run_ct_point(dense, cfg, suite64(), recipe, grid.train, grid.eval_tokens, 0);
    for (size_t i = 0; i < direct.after.languages.size(); ++i)
        CHECK(results[0].after.languages[i].ppl == direct.after.languages[i].ppl);
    CHECK(results[0].delta.original_delta == direct.delta.original_delta);

    // CSV has the contracted columns
    const std::string csv = ablation_results_csv(grid, suite64(), results);
    CHECK(csv.find("point_id,seed,fusion_weight,ppl_orig_a") == 0);
    CHECK(csv.find("original_score,expanded_score,original_delta,expanded_delta") != std::string::npos);
}

TEST_CASE("ablation jobs=2 matches jobs=1 bit for bit") {
    ModelConfig cfg = eval_cfg();
    ParamStore dense = init_dense<float>(cfg, 30);
    Json gj;
    gj["axes"]["n_experts"] = Json::array({0, 2});
    gj["seeds"] = Json::array({0});
    gj["defaults"]["data_ratio"] = "1:10";
    gj["train"]["steps"] = 4;
    gj["train"]["batch"] = 2;
    gj["train"]["seq"] = 32;
    gj["train"]["lr"] = 1e-3;
    gj["eval_tokens"] = 640;
    AblationGrid grid = AblationGrid::from_json(gj);
    const auto seq = run_ablation(grid, dense, cfg, suite64(), 1);
    const auto par = run_ablation(grid, dense, cfg, suite64(), 2);
    REQUIRE(seq.size() == par.size());
    for (size_t i = 0; i < seq.size(); ++i) {
        CHECK(seq[i].point_id == par[i].point_id);
        for (size_t l = 0; l < seq[i].after.languages.size(); ++l)
            CHECK(seq[i].after.languages[l].ppl == par[i].after.languages[l].ppl);
    }
}

TEST_CASE("svg renderer emits a well-formed chart") {
    std::vector<SvgSeries> series = {{"fast", {{0.0, 1.0}, {0.5, 0.4}, {1.0, 0.1}}},
                                     {"slow", {{0.0, 0.9}, {0.5, 0.7}, {1.0, 0.6}}}};
    const std::string svg = render_line_chart_svg("title", "x", "y", series);
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("polyline") != std::string::npos);
    CHECK(svg.find("fast") != std::string::npos);
    CHECK(svg.rfind("</svg>\n") == svg.size() - 7);
}
