#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chorus/evalkit.hpp"
#include "chorus/model.hpp"
#include "chorus/pool.hpp"
#include "chorus/prompts.hpp"

namespace chorus {

extern const char* kEngineVersion;

// Declarative experiment specification. Normalized (defaults applied, paths
// resolved) at parse time; the normalized document is what gets hashed into
// the run id and snapshotted into the manifest.
struct RunConfig {
    std::string method;
    nlohmann::json hyper = nlohmann::json::object();
    nlohmann::json pool_spec;
    std::string dataset_path;
    std::string split = "test";
    std::string dev_split = "dev";
    int downsample_cap = 1000;
    std::string judge_id;  // pool member judging open-ended instances
    GenerationParams generation;
    std::uint64_t seed = 0;
    int max_concurrency = 4;
    std::string output_dir = "runs";
    std::string templates_dir;

    nlohmann::json normalized;  // effective config document

    static RunConfig from_file(const std::string& path);
    static RunConfig from_json(const nlohmann::json& doc, const std::string& base_dir);

    std::string run_id() const;
};

struct RunManifest {
    std::string run_id;
    std::string engine_version;
    nlohmann::json config;
    std::string method;
    std::string started_at;
    std::string finished_at;
    int record_count = 0;
    int failure_count = 0;
    bool degraded = false;
    nlohmann::json summary;
    std::vector<std::string> warnings;
    std::string run_dir;

    nlohmann::json to_json() const;
    static RunManifest from_file(const std::string& path);
};

struct RunOptions {
    bool resume = false;
    std::optional<std::uint64_t> seed_override;
    std::optional<int> concurrency_override;
};

// Executes the configured method over the dataset, writing
// <output_dir>/<run-id>/{manifest.json, records.jsonl, summary.json}.
// Config errors leave the output directory untouched.
RunManifest run_experiment(const RunConfig& config, const RunOptions& options = {});

// Per-domain table across runs sharing a dataset+split: each non-baseline
// method is flagged when it strictly exceeds the best single-model run.
// IF-domain scores are min-max normalized across exactly the compared runs.
nlohmann::json compare_runs(const std::vector<RunManifest>& manifests);
std::string render_comparison(const nlohmann::json& comparison);

// Correctness rows from one system manifest plus per-model single runs.
CorrectnessMatrix correctness_from_manifests(const RunManifest& system_run,
                                             const std::vector<RunManifest>& individual_runs);

// Mean instance score of the configured method over the configured dataset
// when executed with `pool` (no persistence); the leave-one-out runner.
double execute_for_score(const RunConfig& config, const ModelPool& pool);

// All method ids the runner can execute (the 26 collaboration methods plus
// the "single" baseline).
std::vector<std::string> runner_methods();

}  // namespace chorus
