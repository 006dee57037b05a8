// SPDX-License-Identifier: Apache-2.0
//
// moct — operator surface for the MoE continual-training sandbox.
// Commands: pretrain, upcycle, ct, eval, ablate, inspect, plot.
// Exit codes: 0 success, 2 config error, 3 numeric failure,
// 4 checkpoint-kind mismatch.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "moct/ablation.hpp"
#include "moct/checkpoint.hpp"
#include "moct/config.hpp"
#include "moct/corpus.hpp"
#include "moct/errors.hpp"
#include "moct/eval.hpp"
#include "moct/model.hpp"
#include "moct/report.hpp"
#include "moct/train.hpp"

namespace fs = std::filesystem;
using namespace moct;

namespace {

Json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw ConfigError("malformed JSON in '" + path + "': " + e.what());
    }
}

// MOCT_SEED overrides any configured seed.
uint64_t resolve_seed(uint64_t configured) {
    if (const char* env = std::getenv("MOCT_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            throw ConfigError("MOCT_SEED must be an unsigned integer, got '" + std::string(env) + "'");
        }
    }
    return configured;
}

LanguageSuite suite_from_config(const Json& cfg, int vocab) {
    if (cfg.contains("suite_file")) return LanguageSuite::from_json(load_json_file(cfg["suite_file"]), vocab);
    if (cfg.contains("suite")) return LanguageSuite::from_json(cfg["suite"], vocab);
    return LanguageSuite::default_suite(vocab);
}

MixSpec mix_from_config(const Json& cfg, const LanguageSuite& suite) {
    if (cfg.contains("mix")) return MixSpec::from_json(cfg["mix"]);
    if (cfg.contains("data_ratio")) return mix_from_ratio_string(suite, cfg["data_ratio"].get<std::string>());
    throw ConfigError("config needs either 'mix' (language -> budget) or 'data_ratio' (\"orig:new\")");
}

void print_census(const ParamStore& params, const ModelConfig& cfg) {
    std::printf("%-28s %-14s %-7s %10s\n", "name", "shape", "frozen", "params");
    int64_t frozen_count = 0;
    for (const auto& [name, e] : params) {
        std::printf("%-28s %-14s %-7s %10lld\n", name.c_str(), shape_str(e.tensor.shape()).c_str(),
                    e.frozen ? "yes" : "no", static_cast<long long>(e.tensor.numel()));
        if (e.frozen) frozen_count += e.tensor.numel();
    }
    const int64_t total = params.param_count();
    std::printf("tensors: %zu\n", params.size());
    std::printf("total params: %lld (frozen %lld, trainable %lld)\n", static_cast<long long>(total),
                static_cast<long long>(frozen_count), static_cast<long long>(total - frozen_count));
    std::printf("activated params: %lld\n", static_cast<long long>(activated_param_count(cfg, total)));
}

int cmd_pretrain(const std::string& config_path, const std::string& out_dir, std::optional<int> steps_override) {
    const Json cfg = load_json_file(config_path);
    ModelConfig model = cfg.contains("model") ? ModelConfig::from_json(cfg["model"]) : ModelConfig{};
    model.validate();
    if (model.is_moe()) throw ConfigError("pretrain expects a dense model config (n_experts = 0)");
    TrainConfig train = cfg.contains("train") ? TrainConfig::from_json(cfg["train"]) : TrainConfig{};
    if (steps_override) train.steps = *steps_override;
    train.seed = resolve_seed(train.seed);

    const LanguageSuite suite = suite_from_config(cfg, model.vocab);
    MixSpec mix;
    if (cfg.contains("mix")) {
        mix = MixSpec::from_json(cfg["mix"]);
    } else {
        std::map<std::string, double> budgets;
        for (const auto& id : suite.ids_in_group("original")) budgets[id] = 1.0;
        mix = MixSpec::make(budgets);
    }

    ParamStore params = init_dense<float>(model, train.seed);
    TrainLog log = pretrain(params, model, suite, mix, train);

    fs::create_directories(out_dir);
    const fs::path ckpt = fs::path(out_dir) / "checkpoint.moct";
    save_checkpoint(ckpt, params, model);
    atomic_write(fs::path(out_dir) / "train_log.csv", log.to_csv(suite.ids()));

    RunManifest manifest;
    manifest.command = "pretrain";
    manifest.config_path = config_path;
    manifest.resolved_config["model"] = model.to_json();
    manifest.resolved_config["train"] = train.to_json();
    manifest.resolved_config["mix"] = mix.to_json();
    manifest.resolved_config["suite"] = suite.to_json();
    manifest.seed = train.seed;
    manifest.outputs = {ckpt.string(), (fs::path(out_dir) / "train_log.csv").string()};
    manifest.write(out_dir);

    std::printf("pretrain done: %d steps, final loss %.4f\n", train.steps,
                log.losses.empty() ? 0.0f : log.losses.back());
    std::printf("checkpoint: %s (%s)\n", ckpt.string().c_str(), file_content_hash(ckpt).c_str());
    return 0;
}

int cmd_upcycle(const std::string& in_path, int n_experts, int top_k, float fusion_w, const std::string& fusion_mode,
                float router_noise, const std::string& out_path) {
    Checkpoint ck = load_checkpoint(in_path);
    if (ck.config.is_moe() || store_is_moe(ck.params))
        throw KindError("upcycle input '" + in_path + "' is already a MoE checkpoint");
    ModelConfig cfg = ck.config;
    cfg.n_experts = n_experts;
    cfg.top_k = top_k;
    cfg.fusion_weight = fusion_w;
    cfg.fusion_mode = fusion_mode_from_string(fusion_mode);
    cfg.router_init_std = router_noise;
    cfg.validate();

    const uint64_t seed = resolve_seed(0);
    ParamStore moe = upcycle(ck.params, cfg, seed);
    save_checkpoint(out_path, moe, cfg);

    const int64_t dense_total = ck.params.param_count();
    const int64_t moe_total = moe.param_count();
    std::printf("%-8s %-8s %14s %14s\n", "kind", "experts", "total-params", "act-params");
    std::printf("%-8s %-8s %14lld %14lld\n", "dense", "-", static_cast<long long>(dense_total),
                static_cast<long long>(dense_total));
    std::printf("%-8s %-8d %14lld %14lld\n", "moe", n_experts, static_cast<long long>(moe_total),
                static_cast<long long>(activated_param_count(cfg, moe_total)));
    std::printf("checkpoint: %s (%s)\n", out_path.c_str(), file_content_hash(out_path).c_str());
    return 0;
}

int cmd_ct(const std::string& in_path, const std::string& config_path, const std::string& strategy_flag,
           const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(in_path);
    const Json cfg = load_json_file(config_path);
    TrainConfig train = cfg.contains("train") ? TrainConfig::from_json(cfg["train"]) : TrainConfig{};
    train.seed = resolve_seed(train.seed);

    const bool is_moe = ck.config.is_moe();
    std::string strategy_name = strategy_flag;
    if (strategy_name.empty() && cfg.contains("strategy")) strategy_name = cfg["strategy"].get<std::string>();
    const FreezeStrategy strategy = strategy_name.empty()
                                        ? (is_moe ? FreezeStrategy::kEmbeddingAndExperts : FreezeStrategy::kAll)
                                        : freeze_strategy_from_string(strategy_name);

    const LanguageSuite suite = suite_from_config(cfg, ck.config.vocab);
    const MixSpec mix = mix_from_config(cfg, suite);
    const int eval_tokens = cfg.value("eval_tokens", train.eval_tokens);

    apply_freeze(ck.params, strategy, is_moe);
    const EvalReport before = evaluate(ck.params, ck.config, suite, eval_tokens);
    TrainLog log = continual_train(ck.params, ck.config, suite, mix, train);
    const EvalReport after = evaluate(ck.params, ck.config, suite, eval_tokens);
    const ForgettingDelta delta = compare(before, after);

    fs::create_directories(out_dir);
    const fs::path ckpt = fs::path(out_dir) / "checkpoint.moct";
    save_checkpoint(ckpt, ck.params, ck.config);
    atomic_write(fs::path(out_dir) / "train_log.csv", log.to_csv(suite.ids()));
    atomic_write(fs::path(out_dir) / "eval_before.csv", before.to_csv());
    atomic_write(fs::path(out_dir) / "eval_after.csv", after.to_csv());

    RunManifest manifest;
    manifest.command = "ct";
    manifest.config_path = config_path;
    manifest.resolved_config["model"] = ck.config.to_json();
    manifest.resolved_config["train"] = train.to_json();
    manifest.resolved_config["mix"] = mix.to_json();
    manifest.resolved_config["strategy"] = to_string(strategy);
    manifest.resolved_config["eval_before"] = before.to_json();
    manifest.resolved_config["eval_after"] = after.to_json();
    manifest.seed = train.seed;
    manifest.input_checkpoint_hash = file_content_hash(in_path);
    manifest.outputs = {ckpt.string(), (fs::path(out_dir) / "train_log.csv").string()};
    manifest.write(out_dir);

    std::printf("ct done: strategy=%s steps=%d\n", to_string(strategy).c_str(), train.steps);
    std::printf("frozen-hash audit: before=%016llx after=%016llx (%s)\n",
                static_cast<unsigned long long>(log.frozen_hash_before),
                static_cast<unsigned long long>(log.frozen_hash_after),
                log.frozen_hash_before == log.frozen_hash_after ? "equal" : "MISMATCH");
    std::printf("original_delta=%+.4f expanded_delta=%+.4f\n", delta.original_delta, delta.expanded_delta);
    std::printf("checkpoint: %s (%s)\n", ckpt.string().c_str(), file_content_hash(ckpt).c_str());
    return 0;
}

int cmd_eval(const std::string& in_path, const std::string& suite_path, int tokens, const std::string& out_path) {
    Checkpoint ck = load_checkpoint(in_path);
    Json holder = Json::object();
    if (!suite_path.empty()) holder["suite_file"] = suite_path;
    const LanguageSuite suite = suite_from_config(holder, ck.config.vocab);
    EvalReport report = evaluate(ck.params, ck.config, suite, tokens);
    report.checkpoint_id = file_content_hash(in_path);
    const std::string csv = report.to_csv();
    if (out_path.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        atomic_write(out_path, csv);
        std::printf("report: %s\n", out_path.c_str());
    }
    return 0;
}

int cmd_ablate(const std::string& base_path, const std::string& grid_path, const std::string& out_dir, int jobs) {
    Checkpoint base = load_checkpoint(base_path);
    if (base.config.is_moe()) throw KindError("ablate expects a dense base checkpoint");
    const AblationGrid grid = AblationGrid::from_json(load_json_file(grid_path));
    const LanguageSuite suite = LanguageSuite::default_suite(base.config.vocab);

    const auto results = run_ablation(grid, base.params, base.config, suite, jobs);
    write_ablation_outputs(out_dir, grid, suite, results);

    RunManifest manifest;
    manifest.command = "ablate";
    manifest.config_path = grid_path;
    manifest.resolved_config["grid"] = grid.to_json();
    manifest.seed = grid.seeds.empty() ? 0 : grid.seeds[0];
    manifest.input_checkpoint_hash = file_content_hash(base_path);
    manifest.outputs = {(fs::path(out_dir) / "results.csv").string(), (fs::path(out_dir) / "summary.txt").string()};
    manifest.write(out_dir);

    std::printf("ablate done: %zu points -> %s\n", results.size(), out_dir.c_str());
    return 0;
}

int cmd_inspect(const std::string& in_path) {
    Checkpoint ck = load_checkpoint(in_path);
    std::printf("checkpoint: %s\n", in_path.c_str());
    std::printf("content hash: %s\n", file_content_hash(in_path).c_str());
    std::printf("kind: %s\n", ck.config.is_moe() ? "moe" : "dense");
    std::printf("config: %s\n", ck.config.to_json().dump().c_str());
    print_census(ck.params, ck.config);
    return 0;
}

// Figure-style chart from an ablation results.csv over the data_ratio axis:
// forgetting (original_delta) and expanded gain (-expanded_delta) vs the
// original-data share, averaged over seeds.
int cmd_plot(const std::string& results_path, const std::string& out_path) {
    std::ifstream in(results_path);
    if (!in) throw ConfigError("cannot read results file '" + results_path + "'");
    std::string header;
    if (!std::getline(in, header)) throw ConfigError("empty results file");
    std::vector<std::string> cols;
    {
        std::stringstream ss(header);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    auto col_of = [&](const std::string& name) {
        for (size_t i = 0; i < cols.size(); ++i)
            if (cols[i] == name) return static_cast<int>(i);
        throw ConfigError("results file lacks column '" + name + "'");
    };
    const int ratio_col = col_of("data_ratio");
    const int orig_col = col_of("original_delta");
    const int exp_col = col_of("expanded_delta");

    std::map<double, std::pair<std::vector<double>, std::vector<double>>> by_share;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cells.push_back(c);
        const std::string ratio = cells.at(static_cast<size_t>(ratio_col));
        const auto colon = ratio.find(':');
        if (colon == std::string::npos) throw ConfigError("data_ratio cell '" + ratio + "' is not 'orig:new'");
        const double o = std::stod(ratio.substr(0, colon));
        const double n = std::stod(ratio.substr(colon + 1));
        const double share = o / (o + n);
        by_share[share].first.push_back(std::stod(cells.at(static_cast<size_t>(orig_col))));
        by_share[share].second.push_back(std::stod(cells.at(static_cast<size_t>(exp_col))));
    }
    if (by_share.empty()) throw ConfigError("no data rows in results file");

    SvgSeries forgetting{"original forgetting (ppl increase)", {}};
    SvgSeries gain{"expanded gain (ppl decrease)", {}};
    for (const auto& [share, vals] : by_share) {
        double fo = 0.0, ga = 0.0;
        for (double v : vals.first) fo += v;
        for (double v : vals.second) ga += -v;
        forgetting.points.emplace_back(share, fo / static_cast<double>(vals.first.size()));
        gain.points.emplace_back(share, ga / static_cast<double>(vals.second.size()));
    }
    atomic_write(out_path, render_line_chart_svg("forgetting vs original-data share", "original-data share",
                                                 "mean ppl change", {forgetting, gain}));
    std::printf("figure: %s\n", out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"moct: dense pretraining, MoE upcycling, continual training and evaluation on synthetic corpora"};
    app.require_subcommand(1);

    std::string config_path, out_dir, in_path, out_path, strategy, suite_path, grid_path, results_path, fusion_mode;
    int n_experts = 2, top_k = 1, tokens = 4096, jobs = 1;
    float fusion_w = 0.5f, router_noise = 0.0f;
    int steps_flag = -1;

    auto* pre = app.add_subcommand("pretrain", "train a dense base model on the original languages");
    pre->add_option("--config", config_path, "run config JSON")->required();
    pre->add_option("--out-dir", out_dir, "output directory")->required();
    pre->add_option("--steps", steps_flag, "override train.steps");

    auto* up = app.add_subcommand("upcycle", "extend a dense checkpoint with a parallel MoE layer");
    up->add_option("--in", in_path, "dense input checkpoint")->required();
    up->add_option("--experts", n_experts, "number of experts")->required();
    up->add_option("--top-k", top_k, "experts activated per token");
    up->add_option("--fusion-w", fusion_w, "MoE fusion weight in [0,1]");
    up->add_option("--fusion-mode", fusion_mode, "fixed | learnable")->default_val("fixed");
    up->add_option("--router-noise", router_noise, "router init noise std (default 0)");
    up->add_option("--out", out_path, "output checkpoint")->required();

    auto* ct = app.add_subcommand("ct", "continual-train a checkpoint under a freeze strategy");
    ct->add_option("--in", in_path, "input checkpoint")->required();
    ct->add_option("--config", config_path, "run config JSON")->required();
    ct->add_option("--strategy", strategy, "freeze strategy (" + freeze_strategy_names_joined() + ")");
    ct->add_option("--out-dir", out_dir, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "teacher-forced perplexity report for a checkpoint");
    ev->add_option("--in", in_path, "checkpoint")->required();
    ev->add_option("--suite", suite_path, "language suite JSON (default: built-in 6-language suite)");
    ev->add_option("--tokens", tokens, "held-out tokens per language");
    ev->add_option("--out", out_path, "output CSV (stdout when omitted)");

    auto* ab = app.add_subcommand("ablate", "run a CT ablation grid from a shared dense base");
    ab->add_option("--base", in_path, "pretrained dense checkpoint")->required();
    ab->add_option("--grid", grid_path, "grid config JSON")->required();
    ab->add_option("--out-dir", out_dir, "output directory")->required();
    ab->add_option("--jobs", jobs, "parallel jobs");

    auto* ins = app.add_subcommand("inspect", "print checkpoint header and parameter census");
    ins->add_option("--in", in_path, "checkpoint")->required();

    auto* pl = app.add_subcommand("plot", "render forgetting-vs-ratio SVG from ablation results");
    pl->add_option("--results", results_path, "ablation results.csv")->required();
    pl->add_option("--out", out_path, "output SVG")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // parse failures are config errors
    }

    try {
        std::optional<int> steps_override;
        if (steps_flag >= 0) steps_override = steps_flag;
        if (pre->parsed()) return cmd_pretrain(config_path, out_dir, steps_override);
        if (up->parsed()) return cmd_upcycle(in_path, n_experts, top_k, fusion_w, fusion_mode, router_noise, out_path);
        if (ct->parsed()) return cmd_ct(in_path, config_path, strategy, out_dir);
        if (ev->parsed()) return cmd_eval(in_path, suite_path, tokens, out_path);
        if (ab->parsed()) return cmd_ablate(in_path, grid_path, out_dir, jobs);
        if (ins->parsed()) return cmd_inspect(in_path);
        if (pl->parsed()) return cmd_plot(results_path, out_path);
    } catch (const KindError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 0;
}
