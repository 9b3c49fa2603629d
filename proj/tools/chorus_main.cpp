#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "chorus/costmodel.hpp"
#include "chorus/errors.hpp"
#include "chorus/evalkit.hpp"
#include "chorus/pool.hpp"
#include "chorus/runner.hpp"
#include "chorus/util.hpp"

using nlohmann::json;

namespace {

int cmd_run(const std::string& config_path, const chorus::RunOptions& options) {
    chorus::RunConfig config = chorus::RunConfig::from_file(config_path);
    chorus::RunManifest manifest = chorus::run_experiment(config, options);
    std::cout << "run " << manifest.run_id << " -> " << manifest.run_dir << "\n"
              << manifest.summary.dump(2) << "\n";
    if (manifest.degraded) {
        std::cerr << "run degraded: " << manifest.failure_count << "/" << manifest.record_count
                  << " instances failed\n";
        return 3;
    }
    return 0;
}

int cmd_compare(const std::vector<std::string>& manifest_paths, bool as_json) {
    std::vector<chorus::RunManifest> manifests;
    for (const auto& p : manifest_paths) {
        manifests.push_back(chorus::RunManifest::from_file(p));
    }
    const json comparison = chorus::compare_runs(manifests);
    if (as_json) {
        std::cout << comparison.dump(2) << "\n";
    } else {
        std::cout << chorus::render_comparison(comparison);
    }
    return 0;
}

chorus::CostParams cost_params_from_config(const chorus::RunConfig& config) {
    chorus::CostParams p;
    const chorus::ModelPool pool = chorus::load_pool(config.pool_spec);
    for (const auto& m : pool) {
        p.model_params.push_back(static_cast<double>(m->descriptor().param_count));
    }
    const auto records = chorus::downsample(
        chorus::load_dataset(config.dataset_path, config.split), config.downsample_cap,
        chorus::fnv1a("test", config.seed));
    p.dataset_size = static_cast<double>(records.size());
    p.max_tokens = static_cast<double>(config.generation.max_new_tokens);

    const json& h = config.hyper;
    const double n = static_cast<double>(pool.size());
    p.rounds = h.value("rounds", h.value("iterations", 2));
    p.patch_size = h.value("patch_size", 4);
    p.graph_count = h.value("graph_count", 1.0);
    p.sample_size = h.value("sample_size", 1.0);
    p.feedback_count = h.value("feedback_count", std::max(1.0, n - 1.0));
    // Auxiliary models (router/switcher/fuser) default to the pool max.
    const double max_k = p.model_params.empty()
                             ? 0.0
                             : *std::max_element(p.model_params.begin(), p.model_params.end());
    p.router_params = h.value("router_params", max_k);
    p.switcher_params = h.value("switcher_params", max_k);
    p.fuser_params = h.value("fuser_params", max_k);
    return p;
}

int cmd_estimate_cost(const std::string& config_path, bool as_json) {
    const chorus::RunConfig config = chorus::RunConfig::from_file(config_path);
    const chorus::CostParams params = cost_params_from_config(config);

    json table = json::array();
    for (const auto& method : chorus::cost_model_methods()) {
        json row = {{"method", method}};
        for (const auto phase : {chorus::CostPhase::train, chorus::CostPhase::infer}) {
            const char* name = phase == chorus::CostPhase::train ? "train" : "infer";
            try {
                const auto est = chorus::estimate_flops(method, phase, params);
                if (est.unlisted) {
                    row[name] = "unlisted";
                } else if (est.not_applicable) {
                    row[name] = "/";
                } else {
                    row[name] = est.flops;
                }
            } catch (const chorus::ArgumentError& e) {
                row[name] = std::string("error: ") + e.what();
            }
        }
        table.push_back(row);
    }
    if (as_json) {
        std::cout << table.dump(2) << "\n";
        return 0;
    }
    std::cout << std::left << std::setw(26) << "method" << std::setw(16) << "train FLOPs"
              << "infer FLOPs\n";
    for (const auto& row : table) {
        auto fmt = [](const json& v) -> std::string {
            if (v.is_number()) {
                std::ostringstream s;
                s << std::scientific << std::setprecision(3) << v.get<double>();
                return s.str();
            }
            return v.get<std::string>();
        };
        std::cout << std::left << std::setw(26) << row["method"].get<std::string>()
                  << std::setw(16) << fmt(row["train"]) << fmt(row["infer"]) << "\n";
    }
    return 0;
}

int cmd_emergence(const std::vector<std::string>& manifest_paths) {
    if (manifest_paths.size() < 2) {
        throw chorus::ArgumentError(
            "emergence needs the system manifest first, then per-model single-run manifests");
    }
    const auto system_run = chorus::RunManifest::from_file(manifest_paths[0]);
    std::vector<chorus::RunManifest> individuals;
    for (std::size_t i = 1; i < manifest_paths.size(); ++i) {
        individuals.push_back(chorus::RunManifest::from_file(manifest_paths[i]));
    }
    const auto matrix = chorus::correctness_from_manifests(system_run, individuals);
    const auto rate = chorus::collaborative_emergence(matrix);
    json out = {{"system_run", system_run.run_id},
                {"instances", matrix.instance_ids().size()},
                {"matrix", matrix.to_json()}};
    out["emergence_rate"] = rate ? json(*rate) : json(nullptr);
    std::cout << out.dump(2) << "\n";
    if (rate) {
        std::cout << "collaborative emergence: " << *rate << "\n";
    } else {
        std::cout << "collaborative emergence: not applicable (no individually unsolvable "
                     "instances)\n";
    }
    return 0;
}

int cmd_leave_one_out(const std::string& config_path, const chorus::RunOptions& options) {
    chorus::RunConfig config = chorus::RunConfig::from_file(config_path);
    if (options.seed_override) {
        json doc = config.normalized;
        doc["seed"] = *options.seed_override;
        config = chorus::RunConfig::from_json(doc, "");
    }
    const chorus::ModelPool pool = chorus::load_pool(config.pool_spec);
    const auto report = chorus::leave_one_out(
        [&](const chorus::ModelPool& sub) { return chorus::execute_for_score(config, sub); },
        pool);
    json entries = json::array();
    for (const auto& e : report.entries) {
        entries.push_back({{"omitted", e.omitted_id},
                           {"score", e.score ? json(*e.score) : json(nullptr)}});
    }
    const json out = {{"entries", entries},
                      {"mean", report.mean},
                      {"std", report.std_sample},
                      {"std_population", report.std_population},
                      {"has_missing", report.has_missing}};
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chorus: orchestrate and evaluate multi-model collaboration methods"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> manifest_paths;
    bool as_json = false;
    chorus::RunOptions options;
    std::uint64_t seed_value = 0;

    int concurrency_value = 0;
    auto* run = app.add_subcommand("run", "execute a run config");
    run->add_option("config", config_path, "run config JSON")->required();
    auto* run_seed = run->add_option("--seed", seed_value, "override the config seed");
    run->add_flag("--resume", options.resume, "resume from the last complete record");
    auto* run_conc =
        run->add_option("--max-concurrency", concurrency_value, "override the worker cap");

    auto* compare = app.add_subcommand("compare", "compare run manifests");
    compare->add_option("manifests", manifest_paths, "manifest.json paths")->required();
    compare->add_flag("--json", as_json, "emit JSON instead of the text table");

    auto* cost = app.add_subcommand("estimate-cost", "FLOPs estimates for a config");
    cost->add_option("config", config_path, "run config JSON")->required();
    cost->add_flag("--json", as_json, "emit JSON instead of the text table");

    auto* emergence = app.add_subcommand("emergence", "collaborative emergence from manifests");
    emergence
        ->add_option("manifests", manifest_paths,
                     "system manifest first, then single-run manifests")
        ->required();

    auto* loo = app.add_subcommand("leave-one-out", "pool sensitivity for a config");
    loo->add_option("config", config_path, "run config JSON")->required();
    auto* loo_seed = loo->add_option("--seed", seed_value, "override the config seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            if (run_seed->count() > 0) options.seed_override = seed_value;
            if (run_conc->count() > 0) options.concurrency_override = concurrency_value;
            return cmd_run(config_path, options);
        }
        if (compare->parsed()) return cmd_compare(manifest_paths, as_json);
        if (cost->parsed()) return cmd_estimate_cost(config_path, as_json);
        if (emergence->parsed()) return cmd_emergence(manifest_paths);
        if (loo->parsed()) {
            if (loo_seed->count() > 0) options.seed_override = seed_value;
            return cmd_leave_one_out(config_path, options);
        }
    } catch (const chorus::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const chorus::Error& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}
