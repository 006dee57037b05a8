// SPDX-License-Identifier: Apache-2.0
#include "moct/ablation.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "moct/model.hpp"
#include "moct/report.hpp"

namespace moct {

namespace {

const char* kValidAxes[] = {"freeze_strategy", "fusion_weight", "n_experts", "data_ratio"};

bool axis_valid(const std::string& name) {
    for (const char* a : kValidAxes)
        if (name == a) return true;
    return false;
}

std::string json_to_cell(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

void apply_axis(CtRecipe& recipe, const std::string& axis, const Json& value) {
    if (axis == "freeze_strategy")
        recipe.freeze_strategy = value.get<std::string>();
    else if (axis == "fusion_weight")
        recipe.fusion_weight = value.get<float>();
    else if (axis == "n_experts")
        recipe.n_experts = value.get<int>();
    else if (axis == "data_ratio")
        recipe.data_ratio = value.get<std::string>();
    else
        throw ConfigError("unknown ablation axis '" + axis + "'");
}

}  // namespace

AblationGrid AblationGrid::from_json(const Json& j) {
    AblationGrid g;
    if (!j.contains("axes") || j["axes"].empty()) throw ConfigError("ablation grid requires a non-empty 'axes' map");
    for (auto it = j["axes"].begin(); it != j["axes"].end(); ++it) {
        if (!axis_valid(it.key()))
            throw ConfigError("unknown ablation axis '" + it.key() +
                              "'; valid: freeze_strategy, fusion_weight, n_experts, data_ratio");
        if (!it.value().is_array() || it.value().empty())
            throw ConfigError("ablation axis '" + it.key() + "' needs a non-empty value list");
        g.axes.emplace_back(it.key(), std::vector<Json>(it.value().begin(), it.value().end()));
    }
    if (j.contains("seeds")) {
        g.seeds.clear();
        for (const auto& s : j["seeds"]) g.seeds.push_back(s.get<uint64_t>());
        if (g.seeds.empty()) throw ConfigError("ablation grid needs at least one seed");
    }
    if (j.contains("defaults")) {
        const auto& d = j["defaults"];
        g.defaults.n_experts = d.value("n_experts", g.defaults.n_experts);
        g.defaults.top_k = d.value("top_k", g.defaults.top_k);
        g.defaults.fusion_weight = d.value("fusion_weight", g.defaults.fusion_weight);
        g.defaults.fusion_mode = d.value("fusion_mode", g.defaults.fusion_mode);
        g.defaults.freeze_strategy = d.value("freeze_strategy", g.defaults.freeze_strategy);
        g.defaults.data_ratio = d.value("data_ratio", g.defaults.data_ratio);
    }
    if (j.contains("train")) g.train = TrainConfig::from_json(j["train"]);
    g.eval_tokens = j.value("eval_tokens", g.eval_tokens);
    return g;
}

Json AblationGrid::to_json() const {
    Json j;
    j["axes"] = Json::object();
    for (const auto& [name, values] : axes) j["axes"][name] = values;
    j["seeds"] = seeds;
    Json d;
    d["n_experts"] = defaults.n_experts;
    d["top_k"] = defaults.top_k;
    d["fusion_weight"] = defaults.fusion_weight;
    d["fusion_mode"] = defaults.fusion_mode;
    d["freeze_strategy"] = defaults.freeze_strategy;
    d["data_ratio"] = defaults.data_ratio;
    j["defaults"] = d;
    j["train"] = train.to_json();
    j["eval_tokens"] = eval_tokens;
    return j;
}

MixSpec mix_from_ratio(const LanguageSuite& suite, double orig_share, double new_share) {
    if (orig_share < 0.0 || new_share < 0.0 || (orig_share == 0.0 && new_share == 0.0))
        throw ConfigError("data ratio must have a positive total");
    const auto originals = suite.ids_in_group("original");
    const auto fresh = suite.ids_in_group("new");
    std::map<std::string, double> budgets;
    if (orig_share > 0.0) {
        if (originals.empty()) throw ConfigError("suite has no original languages");
        for (const auto& id : originals) budgets[id] = orig_share / static_cast<double>(originals.size());
    }
    if (new_share > 0.0) {
        if (fresh.empty()) throw ConfigError("suite has no new languages");
        for (const auto& id : fresh) budgets[id] = new_share / static_cast<double>(fresh.size());
    }
    return MixSpec::make(budgets);
}

MixSpec mix_from_ratio_string(const LanguageSuite& suite, const std::string& ratio) {
    const auto colon = ratio.find(':');
    if (colon == std::string::npos)
        throw ConfigError("data ratio '" + ratio + "' must look like 'orig:new', e.g. '2:20'");
    try {
        const double o = std::stod(ratio.substr(0, colon));
        const double n = std::stod(ratio.substr(colon + 1));
        return mix_from_ratio(suite, o, n);
    } catch (const std::invalid_argument&) {
        throw ConfigError("data ratio '" + ratio + "' has non-numeric parts");
    }
}

AblationPointResult run_ct_point(const ParamStore& base_dense, const ModelConfig& base_cfg,
                                 const LanguageSuite& suite, const CtRecipe& recipe, const TrainConfig& train,
                                 int eval_tokens, uint64_t seed) {
    AblationPointResult res;
    res.seed = seed;
    res.recipe = recipe;

    ModelConfig cfg = base_cfg;
    ParamStore params;
    if (recipe.n_experts > 0) {
        cfg.n_experts = recipe.n_experts;
        cfg.top_k = recipe.top_k;
        cfg.fusion_weight = recipe.fusion_weight;
        cfg.fusion_mode = fusion_mode_from_string(recipe.fusion_mode);
        params = upcycle(base_dense, cfg, seed);
    } else {
        cfg.n_experts = 0;
        params = base_dense.clone();
    }

    const bool is_moe = cfg.is_moe();
    const FreezeStrategy strategy =
        recipe.freeze_strategy.empty()
            ? (is_moe ? FreezeStrategy::kEmbeddingAndExperts : FreezeStrategy::kAll)
            : freeze_strategy_from_string(recipe.freeze_strategy);
    apply_freeze(params, strategy, is_moe);

    const MixSpec mix = mix_from_ratio_string(suite, recipe.data_ratio);
    TrainConfig tcfg = train;
    tcfg.seed = seed;

    res.before = evaluate(params, cfg, suite, eval_tokens);
    continual_train(params, cfg, suite, mix, tcfg);
    res.after = evaluate(params, cfg, suite, eval_tokens);
    res.delta = compare(res.before, res.after);
    return res;
}

std::vector<AblationPointResult> run_ablation(const AblationGrid& grid, const ParamStore& base_dense,
                                              const ModelConfig& base_cfg, const LanguageSuite& suite, int jobs) {
    if (grid.axes.empty()) throw ConfigError("ablation grid has no axes");
    for (const auto& [name, values] : grid.axes)
        if (!axis_valid(name)) throw ConfigError("unknown ablation axis '" + name + "'");

    // Cartesian product of axis values, then seeds (seed varies fastest).
    struct PointSpec {
        std::string point_id;
        std::vector<std::pair<std::string, std::string>> axis_values;
        CtRecipe recipe;
        uint64_t seed;
    };
    std::vector<PointSpec> points;
    std::vector<size_t> idx(grid.axes.size(), 0);
    for (;;) {
        CtRecipe recipe = grid.defaults;
        std::vector<std::pair<std::string, std::string>> cells;
        std::string id;
        for (size_t a = 0; a < grid.axes.size(); ++a) {
            const auto& [name, values] = grid.axes[a];
            apply_axis(recipe, name, values[idx[a]]);
            const std::string cell = json_to_cell(values[idx[a]]);
            cells.emplace_back(name, cell);
            if (!id.empty()) id += "/";
            id += name + "=" + cell;
        }
        for (uint64_t seed : grid.seeds) {
            PointSpec p;
            p.point_id = id + "/seed=" + std::to_string(seed);
            p.axis_values = cells;
            p.recipe = recipe;
            p.seed = seed;
            points.push_back(std::move(p));
        }
        size_t a = 0;
        for (; a < grid.axes.size(); ++a) {
            if (++idx[a] < grid.axes[a].second.size()) break;
            idx[a] = 0;
        }
        if (a == grid.axes.size()) break;
    }

    std::vector<AblationPointResult> results(points.size());
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= points.size()) return;
            try {
                const auto& p = points[i];
                results[i] = run_ct_point(base_dense, base_cfg, suite, p.recipe, grid.train, grid.eval_tokens, p.seed);
                results[i].point_id = p.point_id;
                results[i].axis_values = p.axis_values;
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(points.size())));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return results;
}

std::string ablation_results_csv(const AblationGrid& grid, const LanguageSuite& suite,
                                 const std::vector<AblationPointResult>& results) {
    std::ostringstream out;
    out.precision(10);
    out << "point_id,seed";
    for (const auto& [name, values] : grid.axes) out << "," << name;
    for (const auto& id : suite.ids()) out << ",ppl_" << id;
    out << ",original_score,expanded_score,original_delta,expanded_delta\n";
    for (const auto& r : results) {
        out << r.point_id << "," << r.seed;
        for (const auto& [axis, value] : r.axis_values) out << "," << value;
        for (const auto& id : suite.ids()) out << "," << r.after.ppl_of(id);
        out << "," << r.after.original_score << "," << r.after.expanded_score << "," << r.delta.original_delta << ","
            << r.delta.expanded_delta << "\n";
    }
    return out.str();
}

std::string ablation_trend_summary(const AblationGrid& grid, const std::vector<AblationPointResult>& results) {
    std::ostringstream out;
    out.precision(6);
    out << "ablation trend summary\n";
    out << "point count: " << results.size() << "\n\n";
    for (const auto& [axis, values] : grid.axes) {
        out << "axis " << axis << ":\n";
        for (uint64_t seed : grid.seeds) {
            out << "  seed " << seed << ":\n";
            for (const auto& v : values) {
                const std::string cell = json_to_cell(v);
                for (const auto& r : results) {
                    if (r.seed != seed) continue;
                    bool match = false;
                    for (const auto& [a, c] : r.axis_values)
                        if (a == axis && c == cell) match = true;
                    if (!match) continue;
                    out << "    " << axis << "=" << cell << "  original_delta=" << r.delta.original_delta
                        << "  expanded_delta=" << r.delta.expanded_delta
                        << "  original_score=" << r.after.original_score
                        << "  expanded_score=" << r.after.expanded_score << "\n";
                    break;
                }
            }
        }
    }
    return out.str();
}

void write_ablation_outputs(const std::filesystem::path& out_dir, const AblationGrid& grid,
                            const LanguageSuite& suite, const std::vector<AblationPointResult>& results) {
    std::filesystem::create_directories(out_dir);
    atomic_write(out_dir / "results.csv", ablation_results_csv(grid, suite, results));
    atomic_write(out_dir / "summary.txt", ablation_trend_summary(grid, results));
}

}  // namespace moct
