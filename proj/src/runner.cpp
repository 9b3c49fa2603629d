#include "chorus/runner.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "chorus/collab_api.hpp"
#include "chorus/collab_logit.hpp"
#include "chorus/collab_text.hpp"
#include "chorus/collab_weight.hpp"
#include "chorus/errors.hpp"
#include "chorus/util.hpp"

namespace chorus {

using nlohmann::json;
namespace fs = std::filesystem;

const char* kEngineVersion = "0.1.0";

namespace {

struct MethodInfo {
    std::set<std::string> hyper_keys;
    bool needs_dev = false;
    bool requires_objective = false;
    bool weight_family = false;
    bool needs_distributions = false;
};

const std::map<std::string, MethodInfo>& method_registry() {
    static const std::map<std::string, MethodInfo> kMethods = {
        {"single", {{"model_id"}, false, false, false, false}},
        {"prompt_routing", {{"router_id"}, false, false, false, false}},
        {"trained_router", {{"embedder_id", "k"}, true, false, false, false}},
        {"graph_router", {{"embedder_id"}, true, false, false, false}},
        {"cascade", {{"statistic", "threshold"}, false, false, false, false}},
        {"nudging", {{"base_id", "threshold", "nudge_cap"}, false, false, false, true}},
        {"switch_generation", {{"selector_id", "patch_size"}, false, false, false, true}},
        {"co_llm", {{"base_id", "assistant_id", "threshold"}, false, false, false, true}},
        {"mentor_collab",
         {{"generator_id", "mentor_id", "decider_id", "inspect_prob", "patch_size"},
          false, false, false, true}},
        {"multiagent_debate", {{"rounds", "summarizer_id"}, false, false, false, false}},
        {"multiagent_feedback", {{"rounds", "summarizer_id"}, false, false, false, false}},
        {"llm_blender", {{"ranker_id", "fuser_id", "top_k"}, false, false, false, false}},
        {"knowledge_card", {{"reader_id"}, false, false, false, false}},
        {"majority_vote", {{}, false, true, false, false}},
        {"hetero_swarms",
         {{"iterations", "particles", "inertia", "cognitive", "social"},
          true, true, false, false}},
        {"multiagent_finetuning", {{"rounds"}, true, true, false, false}},
        {"structured_interaction", {{"rounds", "edges"}, false, true, false, false}},
        {"bbmas", {{"rounds"}, false, false, false, false}},
        {"sparta", {{"rounds", "weighting"}, true, false, false, false}},
        {"agglm", {{"aggregator_id"}, true, true, false, false}},
        {"logit_fusion", {{}, false, false, false, true}},
        {"logit_contrastive", {{"k", "alpha"}, true, false, false, true}},
        {"greedy_soup", {{"evaluator"}, false, false, true, false}},
        {"dare_ties",
         {{"base_id", "drop_rate", "density", "evaluator"}, false, false, true, false}},
        {"model_swarms", {{"evaluator", "iterations"}, false, false, true, false}},
        {"lorahub", {{"evaluator", "base_id", "budget"}, false, false, true, false}},
        {"expo", {{"evaluator", "k", "alpha"}, false, false, true, false}},
    };
    return kMethods;
}

std::string resolve_path(const std::string& path, const std::string& base_dir) {
    if (path.empty() || base_dir.empty()) return path;
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(base_dir) / p).lexically_normal().string();
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
        }
    }
}

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%FT%TZ");
    return out.str();
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open run config '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("run config '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(doc, fs::path(path).parent_path().string());
}

RunConfig RunConfig::from_json(const json& doc, const std::string& base_dir) {
    check_keys(doc,
               {"method", "hyperparameters", "pool", "dataset", "generation", "seed",
                "max_concurrency", "output_dir", "templates_dir"},
               "run config");
    RunConfig cfg;
    if (!doc.contains("method") || !doc["method"].is_string()) {
        throw ConfigError("run config needs a string 'method'");
    }
    cfg.method = doc["method"].get<std::string>();
    if (!method_registry().count(cfg.method)) {
        throw ConfigError("unknown method id '" + cfg.method + "'");
    }
    cfg.hyper = doc.value("hyperparameters", json::object());
    check_keys(cfg.hyper, method_registry().at(cfg.method).hyper_keys,
               "hyperparameters for '" + cfg.method + "'");

    if (!doc.contains("pool")) throw ConfigError("run config needs a 'pool' section");
    cfg.pool_spec = doc["pool"];
    if (cfg.pool_spec.contains("models")) {
        for (json& m : cfg.pool_spec["models"]) {
            if (m.contains("backend") && m["backend"].is_object()) {
                for (const char* key : {"script_path", "path"}) {
                    if (m["backend"].contains(key)) {
                        m["backend"][key] =
                            resolve_path(m["backend"][key].get<std::string>(), base_dir);
                    }
                }
            }
        }
    }

    if (!doc.contains("dataset")) throw ConfigError("run config needs a 'dataset' section");
    const json& ds = doc["dataset"];
    check_keys(ds, {"path", "split", "dev_split", "downsample_cap", "judge_id"}, "dataset");
    if (!ds.contains("path")) throw ConfigError("dataset section needs a 'path'");
    cfg.dataset_path = resolve_path(ds["path"].get<std::string>(), base_dir);
    cfg.split = ds.value("split", cfg.split);
    cfg.dev_split = ds.value("dev_split", cfg.dev_split);
    cfg.downsample_cap = ds.value("downsample_cap", cfg.downsample_cap);
    cfg.judge_id = ds.value("judge_id", "");
    if (cfg.downsample_cap <= 0) throw ConfigError("downsample_cap must be positive");

    if (doc.contains("generation")) {
        const json& g = doc["generation"];
        check_keys(g, {"max_new_tokens", "temperature", "top_p"}, "generation");
        cfg.generation.max_new_tokens = g.value("max_new_tokens", cfg.generation.max_new_tokens);
        cfg.generation.temperature = g.value("temperature", cfg.generation.temperature);
        cfg.generation.top_p = g.value("top_p", cfg.generation.top_p);
    }
    try {
        cfg.generation.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.max_concurrency = doc.value("max_concurrency", cfg.max_concurrency);
    if (cfg.max_concurrency < 1) throw ConfigError("max_concurrency must be at least 1");
    cfg.output_dir = resolve_path(doc.value("output_dir", cfg.output_dir), base_dir);
    cfg.templates_dir = resolve_path(doc.value("templates_dir", ""), base_dir);

    cfg.normalized = {
        {"method", cfg.method},
        {"hyperparameters", cfg.hyper},
        {"pool", cfg.pool_spec},
        {"dataset",
         {{"path", cfg.dataset_path},
          {"split", cfg.split},
          {"dev_split", cfg.dev_split},
          {"downsample_cap", cfg.downsample_cap},
          {"judge_id", cfg.judge_id}}},
        {"generation",
         {{"max_new_tokens", cfg.generation.max_new_tokens},
          {"temperature", cfg.generation.temperature},
          {"top_p", cfg.generation.top_p}}},
        {"seed", cfg.seed},
        {"max_concurrency", cfg.max_concurrency},
        {"output_dir", cfg.output_dir},
        {"templates_dir", cfg.templates_dir},
    };
    return cfg;
}

std::string RunConfig::run_id() const {
    // Concurrency and output location do not change results, so they stay
    // out of the identity hash.
    json identity = normalized;
    identity.erase("max_concurrency");
    identity.erase("output_dir");
    return hex64(fnv1a(identity.dump()));
}

json RunManifest::to_json() const {
    return {{"run_id", run_id},
            {"engine_version", engine_version},
            {"method", method},
            {"config", config},
            {"started_at", started_at},
            {"finished_at", finished_at},
            {"record_count", record_count},
            {"failure_count", failure_count},
            {"degraded", degraded},
            {"summary", summary},
            {"warnings", warnings}};
}

RunManifest RunManifest::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError("manifest '" + path + "' is not valid JSON: " + e.what());
    }
    RunManifest m;
    m.run_id = doc.value("run_id", "");
    m.engine_version = doc.value("engine_version", "");
    m.method = doc.value("method", "");
    m.config = doc.value("config", json::object());
    m.started_at = doc.value("started_at", "");
    m.finished_at = doc.value("finished_at", "");
    m.record_count = doc.value("record_count", 0);
    m.failure_count = doc.value("failure_count", 0);
    m.degraded = doc.value("degraded", false);
    m.summary = doc.value("summary", json::object());
    if (doc.contains("warnings")) m.warnings = doc["warnings"].get<std::vector<std::string>>();
    m.run_dir = fs::path(path).parent_path().string();
    return m;
}

namespace {

struct InstanceOutcome {
    std::string id;
    std::string prompt;
    std::string domain;
    std::string answer;
    double score = 0.0;
    bool flagged = false;
    bool failed = false;
    std::string error;
    json artifacts = json::object();
};

json outcome_to_record(std::size_t index, const InstanceOutcome& o) {
    json rec = {{"index", index}, {"id", o.id},       {"prompt", o.prompt},
                {"domain", o.domain}, {"answer", o.answer}, {"score", o.score},
                {"artifacts", o.artifacts}};
    if (o.flagged) rec["flagged"] = true;
    if (o.failed) rec["error"] = o.error;
    return rec;
}

json spans_to_json(const std::vector<AttributionSpan>& spans) {
    json out = json::array();
    for (const auto& s : spans) {
        out.push_back({{"patch", s.patch_index},
                       {"model", s.model_id},
                       {"start", s.start},
                       {"len", s.length}});
    }
    return out;
}

MapEvaluator make_map_evaluator(const json& spec) {
    if (!spec.is_object() || !spec.contains("kind")) {
        throw ConfigError("weight-level methods need an 'evaluator' object with a 'kind'");
    }
    const std::string kind = spec["kind"].get<std::string>();
    if (kind == "quadratic") {
        const double target = spec.value("target", 0.0);
        return [target](const TensorMap& map) {
            double sum = 0.0;
            for (const auto& [name, t] : map.entries()) {
                for (double v : t.values) sum += (v - target) * (v - target);
            }
            return -sum / std::max<std::int64_t>(map.numel(), 1);
        };
    }
    if (kind == "target_map") {
        if (!spec.contains("path")) throw ConfigError("target_map evaluator needs a 'path'");
        TensorMap target = tensor_load(spec["path"].get<std::string>());
        return [target = std::move(target)](const TensorMap& map) {
            if (!map.same_schema(target)) {
                throw ShapeError("evaluated map does not match the target schema");
            }
            double sum = 0.0;
            for (const auto& [name, t] : map.entries()) {
                const auto& want = target.at(name).values;
                for (std::size_t i = 0; i < t.values.size(); ++i) {
                    sum += (t.values[i] - want[i]) * (t.values[i] - want[i]);
                }
            }
            return -sum / std::max<std::int64_t>(map.numel(), 1);
        };
    }
    throw ConfigError("unknown evaluator kind '" + kind + "'");
}

// Holds fitted state and executes instances for one configured method.
class MethodEngine {
public:
    MethodEngine(const RunConfig& config, const ModelPool& pool, const PromptLibrary& prompts,
                 std::vector<DatasetRecord> dev)
        : config_(config),
          pool_(pool),
          prompts_(prompts),
          dev_(std::move(dev)),
          info_(method_registry().at(config.method)) {}

    bool weight_family() const { return info_.weight_family; }

    void fit(std::vector<std::string>& warnings, json& artifacts) {
        const std::string& m = config_.method;
        GenerationParams fit_params = config_.generation;
        fit_params.seed = fnv1a("fit", config_.seed);
        if (m == "trained_router") {
            policy_ = fit_trained_router(pool_, dev_, member_ptr("embedder_id", 0),
                                         config_.hyper.value("k", 3), fit_params);
            artifacts["memorized"] = policy_->memory.size();
        } else if (m == "graph_router") {
            policy_ = fit_graph_router(pool_, dev_, member_ptr("embedder_id", 0), fit_params);
            json table = json::object();
            for (const auto& [task, scores] : policy_->task_scores) table[task] = scores;
            artifacts["task_scores"] = table;
        } else if (m == "hetero_swarms") {
            PsoParams pso;
            pso.iterations = config_.hyper.value("iterations", 10);
            pso.particles = config_.hyper.value("particles", 8);
            pso.inertia = config_.hyper.value("inertia", pso.inertia);
            pso.cognitive = config_.hyper.value("cognitive", pso.cognitive);
            pso.social = config_.hyper.value("social", pso.social);
            auto evaluator = [&](const InteractionGraph& g) {
                double sum = 0.0;
                for (std::size_t i = 0; i < dev_.size(); ++i) {
                    GenerationParams p = config_.generation;
                    p.seed = fnv1a_combine(fnv1a("swarm-dev", config_.seed), i);
                    const auto out = hetero_swarms_infer(g, pool_, dev_[i].prompt, p, prompts_);
                    sum += score_instance(dev_[i], out.final_text).value;
                }
                return dev_.empty() ? 0.0 : sum / dev_.size();
            };
            graph_ = hetero_swarms_fit(pool_, evaluator, pso, fnv1a("swarm", config_.seed));
            artifacts["graph"] = graph_->to_json();
        } else if (m == "multiagent_finetuning") {
            finetuning_ = multiagent_finetuning_build(
                pool_, dev_, config_.hyper.value("rounds", 2), fit_params, prompts_);
            artifacts["generation_examples"] = finetuning_->generation.size();
            artifacts["critic_examples"] = finetuning_->critic.size();
            artifacts["skipped"] = finetuning_->skipped;
        } else if (m == "sparta") {
            const std::string weight_kind = config_.hyper.value("weighting", "rating_share");
            sparta_ = sparta_collect(pool_, dev_, config_.hyper.value("rounds", 1),
                                     weight_kind == "uniform" ? JudgeWeighting::uniform
                                                              : JudgeWeighting::rating_share,
                                     fnv1a("sparta", config_.seed), fit_params, prompts_);
            for (const auto& w : sparta_->warnings) warnings.push_back(w);
            json ratings = json::object();
            for (const auto& [id, r] : sparta_->state.ratings) ratings[id] = r;
            artifacts["ratings"] = ratings;
            // Inference stand-in: route every query to the top-rated model.
            best_rated_ = 0;
            for (std::size_t i = 1; i < sparta_->state.ratings.size(); ++i) {
                if (sparta_->state.ratings[i].second >
                    sparta_->state.ratings[best_rated_].second) {
                    best_rated_ = static_cast<int>(i);
                }
            }
            artifacts["selected_model"] = pool_.at(best_rated_).descriptor().id;
        } else if (m == "agglm") {
            splits_ = agglm_build_splits(pool_, dev_, fit_params);
            artifacts["hard"] = splits_->hard_ids;
            artifacts["easy"] = splits_->easy_ids;
        } else if (m == "logit_contrastive") {
            contrastive_.k = config_.hyper.value("k", 1);
            contrastive_.alpha = config_.hyper.value("alpha", 0.1);
            contrastive_.ranking = rank_pool_by_dev(pool_, [&](ModelBackend& backend) {
                double sum = 0.0;
                for (const auto& record : dev_) {
                    sum += score_instance(record, generate(backend, record.prompt, fit_params).text)
                               .value;
                }
                return dev_.empty() ? 0.0 : sum / dev_.size();
            });
            artifacts["ranking"] = contrastive_.ranking;
        }
    }

    InstanceOutcome run_instance(std::size_t index, const DatasetRecord& record) const {
        InstanceOutcome out;
        out.id = record.id;
        out.prompt = record.prompt;
        out.domain = record.domain_tag;
        GenerationParams params = config_.generation;
        params.seed = fnv1a_combine(config_.seed, index);
        // code tasks default to the longer cap unless the config chose one
        if (record.task_kind == TaskKind::code && params.max_new_tokens == 512) {
            params.max_new_tokens = 1024;
        }
        try {
            out.answer = dispatch(record, params, out.artifacts);
            ModelBackend* judge = nullptr;
            if (!config_.judge_id.empty()) judge = &pool_.by_id(config_.judge_id);
            const ScoreResult s = score_instance(record, out.answer, judge, prompts_,
                                                 fnv1a("judge", params.seed));
            out.score = s.value;
            out.flagged = s.flagged;
        } catch (const std::exception& e) {
            out.failed = true;
            out.error = e.what();
            out.score = 0.0;
        }
        return out;
    }

    json run_weight(std::vector<json>& trace, std::optional<TensorMap>& merged) const {
        const std::string& m = config_.method;
        std::vector<TensorMap> maps;
        for (const auto& member : pool_) maps.push_back(member->weights());
        const std::vector<std::string> ids = pool_.ids();

        json summary;
        if (m == "greedy_soup") {
            const auto result =
                greedy_soup(maps, make_map_evaluator(config_.hyper.at("evaluator")), ids);
            for (const auto& d : result.decisions) {
                json line = {{"event", "soup_decision"},
                             {"model", d.note},
                             {"included", d.included}};
                if (d.candidate_score) line["candidate_score"] = *d.candidate_score;
                trace.push_back(line);
            }
            merged = result.soup;
            summary["utility"] = result.score;
        } else if (m == "dare_ties") {
            const int base_index = member_index("base_id", 0);
            const TensorMap& base = maps[base_index];
            std::vector<TensorMap> finetuned;
            for (std::size_t i = 0; i < maps.size(); ++i) {
                if (static_cast<int>(i) != base_index) finetuned.push_back(maps[i]);
            }
            if (finetuned.empty()) throw ConfigError("dare_ties needs at least 2 pool members");
            merged = dare_ties(base, finetuned, config_.hyper.value("drop_rate", 0.5),
                               config_.hyper.value("density", 1.0),
                               fnv1a("dare", config_.seed));
            trace.push_back({{"event", "merged"},
                             {"base", ids[base_index]},
                             {"drop_rate", config_.hyper.value("drop_rate", 0.5)},
                             {"density", config_.hyper.value("density", 1.0)}});
            if (config_.hyper.contains("evaluator")) {
                summary["utility"] = make_map_evaluator(config_.hyper["evaluator"])(*merged);
            }
        } else if (m == "model_swarms") {
            const auto evaluator = make_map_evaluator(config_.hyper.at("evaluator"));
            merged = model_swarms_search(maps, evaluator,
                                         config_.hyper.value("iterations", 10), PsoParams{},
                                         fnv1a("swarms", config_.seed));
            summary["utility"] = evaluator(*merged);
            trace.push_back({{"event", "search_complete"},
                             {"iterations", config_.hyper.value("iterations", 10)},
                             {"utility", summary["utility"]}});
        } else if (m == "lorahub") {
            const int base_index = member_index("base_id", 0);
            std::vector<WeightDelta> adapters;
            for (std::size_t i = 0; i < maps.size(); ++i) {
                if (static_cast<int>(i) == base_index) continue;
                adapters.push_back({ids[base_index], maps[i]});
            }
            if (adapters.empty()) throw ConfigError("lorahub needs at least 2 pool members");
            const auto result = lorahub_compose(
                maps[base_index], adapters, make_map_evaluator(config_.hyper.at("evaluator")),
                config_.hyper.value("budget", 200), fnv1a("lorahub", config_.seed));
            merged = result.composed;
            summary["utility"] = result.utility;
            trace.push_back(
                {{"event", "composed"}, {"weights", result.weights}, {"utility", result.utility}});
        } else if (m == "expo") {
            const auto evaluator = make_map_evaluator(config_.hyper.at("evaluator"));
            merged = expo(maps, evaluator, config_.hyper.value("k", 1),
                          config_.hyper.value("alpha", 0.5));
            summary["utility"] = evaluator(*merged);
            trace.push_back({{"event", "extrapolated"},
                             {"k", config_.hyper.value("k", 1)},
                             {"alpha", config_.hyper.value("alpha", 0.5)},
                             {"utility", summary["utility"]}});
        } else {
            throw ConfigError("'" + m + "' is not a weight-level method");
        }
        return summary;
    }

private:
    BackendPtr member_ptr(const char* key, int default_index) const {
        return pool_.ptr(member_index(key, default_index));
    }

    int member_index(const char* key, int default_index) const {
        if (config_.hyper.contains(key)) {
            const std::string id = config_.hyper[key].get<std::string>();
            const int idx = pool_.index_of(id);
            if (idx < 0) throw ConfigError(std::string(key) + " names unknown model '" + id + "'");
            return idx;
        }
        if (default_index >= static_cast<int>(pool_.size())) {
            throw ConfigError("method '" + config_.method + "' needs at least " +
                              std::to_string(default_index + 1) + " pool members");
        }
        return default_index;
    }

    ModelPool pool_without(int index) const {
        return pool_.without(static_cast<std::size_t>(index));
    }

    std::string dispatch(const DatasetRecord& record, const GenerationParams& params,
                         json& artifacts) const {
        const std::string& m = config_.method;
        const std::string& query = record.prompt;

        if (m == "single") {
            return generate(pool_.at(member_index("model_id", 0)), query, params).text;
        }
        if (m == "prompt_routing") {
            std::vector<std::string> warnings;
            const std::string id = prompt_route(pool_.at(member_index("router_id", 0)), pool_,
                                                query, prompts_, params.seed, &warnings);
            artifacts["routed_to"] = id;
            if (!warnings.empty()) artifacts["warnings"] = warnings;
            return generate(pool_.by_id(id), query, params).text;
        }
        if (m == "trained_router" || m == "graph_router") {
            const std::string id = route(*policy_, query, params.seed);
            artifacts["routed_to"] = id;
            return generate(pool_.by_id(id), query, params).text;
        }
        if (m == "cascade") {
            ConfidenceRule rule;
            rule.statistic = confidence_statistic_from_string(
                config_.hyper.value("statistic", "geomean_token_prob"));
            rule.threshold = config_.hyper.value("threshold", 0.5);
            const auto result = cascade(pool_, query, rule, params);
            artifacts["deciding_model"] = result.deciding_id;
            artifacts["deciding_index"] = result.deciding_index;
            json confs = json::array();
            for (const auto& c : result.confidences) {
                confs.push_back(c ? json(*c) : json(nullptr));
            }
            artifacts["confidences"] = confs;
            if (!result.warnings.empty()) artifacts["warnings"] = result.warnings;
            return result.output.text;
        }
        if (m == "nudging") {
            const int base = member_index("base_id", 0);
            ConfidenceRule rule{ConfidenceStatistic::top1_next_prob,
                                config_.hyper.value("threshold", 0.4)};
            const auto result =
                nudging_generate(pool_.at(base), pool_without(base), query, rule,
                                 config_.hyper.value("nudge_cap", 16), params);
            artifacts["attribution"] = spans_to_json(result.spans);
            artifacts["log"] = result.log;
            return result.output.text;
        }
        if (m == "switch_generation") {
            const auto result = switch_generation(
                Selector(member_ptr("selector_id", 0)), pool_, query,
                config_.hyper.value("patch_size", 4), params, prompts_);
            artifacts["attribution"] = spans_to_json(result.spans);
            return result.output.text;
        }
        if (m == "co_llm") {
            ConfidenceRule rule{ConfidenceStatistic::top1_next_prob,
                                config_.hyper.value("threshold", 0.4)};
            const auto result =
                co_llm_generate(pool_.at(member_index("base_id", 0)),
                                pool_.at(member_index("assistant_id", 1)), rule, query, params);
            artifacts["attribution"] = spans_to_json(result.spans);
            return result.output.text;
        }
        if (m == "mentor_collab") {
            const auto result = mentor_collab_generate(
                pool_.at(member_index("generator_id", 0)),
                pool_.at(member_index("mentor_id", 1)),
                config_.hyper.value("inspect_prob", 0.5),
                Selector(member_ptr("decider_id", 0)), config_.hyper.value("patch_size", 4),
                fnv1a("inspect", params.seed), query, params, prompts_);
            artifacts["attribution"] = spans_to_json(result.spans);
            artifacts["log"] = result.log;
            return result.output.text;
        }
        if (m == "multiagent_debate" || m == "multiagent_feedback") {
            ModelBackend& summarizer = pool_.at(member_index("summarizer_id", 0));
            const int rounds = config_.hyper.value("rounds", 2);
            const Transcript t =
                m == "multiagent_debate"
                    ? multiagent_debate(pool_, query, rounds, summarizer, params, prompts_)
                    : multiagent_feedback(pool_, query, rounds, summarizer, params, prompts_);
            artifacts["transcript"] = t.to_json();
            return t.final_answer;
        }
        if (m == "llm_blender") {
            const int top_k =
                config_.hyper.value("top_k", std::min<int>(3, static_cast<int>(pool_.size())));
            const auto result =
                llm_blender(pool_, query, pool_.at(member_index("ranker_id", 0)),
                            pool_.at(member_index("fuser_id", 0)), top_k, params, prompts_);
            artifacts["ranking"] = result.ranking;
            artifacts["wins"] = result.wins;
            return result.final_text;
        }
        if (m == "knowledge_card") {
            const auto result = knowledge_card(pool_, query,
                                               pool_.at(member_index("reader_id", 0)), params,
                                               prompts_);
            artifacts["knowledge"] = result.knowledge;
            return result.final_text;
        }
        if (m == "majority_vote") {
            std::vector<std::string> raw(pool_.size());
            std::vector<std::string> extracted(pool_.size());
            for (std::size_t i = 0; i < pool_.size(); ++i) {
                raw[i] = generate(pool_.at(i), query, params).text;
                extracted[i] = extract_answer(raw[i], record.task_kind);
            }
            const std::string voted = majority_vote(extracted);
            json answers = json::object();
            for (std::size_t i = 0; i < pool_.size(); ++i) {
                answers[pool_.at(i).descriptor().id] = raw[i];
            }
            artifacts["answers"] = answers;
            artifacts["voted"] = voted;
            return voted;
        }
        if (m == "hetero_swarms") {
            const auto result = hetero_swarms_infer(*graph_, pool_, query, params, prompts_);
            artifacts["node_outputs"] = result.node_outputs;
            return result.final_text;
        }
        if (m == "multiagent_finetuning") {
            const auto result = multiagent_finetuning_infer(
                pool_, query, config_.hyper.value("rounds", 2), record.task_kind, params,
                prompts_);
            artifacts["transcript"] = result.transcript.to_json();
            return result.final_answer;
        }
        if (m == "structured_interaction") {
            InteractionGraph graph;
            graph.nodes = pool_.ids();
            graph.acyclic = false;
            if (config_.hyper.contains("edges")) {
                for (const auto& e : config_.hyper["edges"]) {
                    graph.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
                }
            } else {
                // default: complete directed graph
                for (std::size_t i = 0; i < pool_.size(); ++i) {
                    for (std::size_t j = 0; j < pool_.size(); ++j) {
                        if (i != j) graph.edges.emplace_back(i, j);
                    }
                }
            }
            const Transcript t =
                structured_interaction(pool_, graph, query, config_.hyper.value("rounds", 2),
                                       record.task_kind, params, prompts_);
            artifacts["transcript"] = t.to_json();
            return t.final_answer;
        }
        if (m == "bbmas") {
            const auto result = bbmas(pool_, query, config_.hyper.value("rounds", 2), params,
                                      prompts_);
            artifacts["blackboard"] = [&] {
                json board = json::array();
                for (const auto& e : result.board) {
                    board.push_back({{"turn", e.turn},
                                     {"model", e.model_id},
                                     {"action", e.action},
                                     {"text", e.text}});
                }
                return board;
            }();
            artifacts["winning_entry"] = result.winning_entry;
            return result.transcript.final_answer;
        }
        if (m == "sparta") {
            artifacts["selected_model"] = pool_.at(best_rated_).descriptor().id;
            return generate(pool_.at(best_rated_), query, params).text;
        }
        if (m == "agglm") {
            std::vector<std::string> responses(pool_.size());
            for (std::size_t i = 0; i < pool_.size(); ++i) {
                responses[i] = generate(pool_.at(i), query, params).text;
            }
            return agglm_aggregate(pool_.at(member_index("aggregator_id", 0)), query, responses,
                                   params, prompts_);
        }
        if (m == "logit_fusion") {
            const auto result = fused_decode(pool_, query, params);
            if (!result.warnings.empty()) artifacts["warnings"] = result.warnings;
            return result.output.text;
        }
        if (m == "logit_contrastive") {
            const auto result = contrastive_decode(
                pool_, [](ModelBackend&) { return 0.0; }, contrastive_, query, params);
            if (!result.warnings.empty()) artifacts["warnings"] = result.warnings;
            return result.output.text;
        }
        throw ConfigError("method '" + m + "' has no instance dispatcher");
    }

    const RunConfig& config_;
    const ModelPool& pool_;
    const PromptLibrary& prompts_;
    std::vector<DatasetRecord> dev_;
    MethodInfo info_;

    // fitted state
    std::optional<SelectorPolicy> policy_;
    std::optional<InteractionGraph> graph_;
    std::optional<FinetuningDatasets> finetuning_;
    std::optional<SpartaResult> sparta_;
    std::optional<AgglmSplits> splits_;
    ContrastiveConfig contrastive_;
    int best_rated_ = 0;

    friend struct EngineAccess;
};

struct EngineAccess {
    static const std::optional<FinetuningDatasets>& finetuning(const MethodEngine& e) {
        return e.finetuning_;
    }
    static const std::optional<SpartaResult>& sparta(const MethodEngine& e) { return e.sparta_; }
};

struct LoadedRun {
    ModelPool pool;
    PromptLibrary prompts;
    std::vector<DatasetRecord> test;
    std::vector<DatasetRecord> dev;
};

LoadedRun load_run_inputs(const RunConfig& config) {
    LoadedRun loaded;
    loaded.pool = load_pool(config.pool_spec);
    loaded.prompts = config.templates_dir.empty() ? PromptLibrary::defaults()
                                                  : PromptLibrary::load_dir(config.templates_dir);
    const MethodInfo& info = method_registry().at(config.method);

    try {
        loaded.test = downsample(load_dataset(config.dataset_path, config.split),
                                 config.downsample_cap, fnv1a("test", config.seed));
        if (info.needs_dev) {
            loaded.dev = downsample(load_dataset(config.dataset_path, config.dev_split),
                                    config.downsample_cap, fnv1a("dev", config.seed));
            if (loaded.dev.empty()) {
                throw ConfigError("method '" + config.method + "' needs a nonempty dev split");
            }
        }
    } catch (const FormatError& e) {
        throw ConfigError(e.what());  // bad references surface as config errors
    }
    if (info.requires_objective) {
        for (const auto& r : loaded.test) {
            if (!r.objective()) {
                throw ConfigError("method '" + config.method +
                                  "' needs objective instances; '" + r.id + "' is open-ended");
            }
        }
    }
    if (!config.judge_id.empty() && !loaded.pool.contains(config.judge_id)) {
        throw ConfigError("judge_id names unknown model '" + config.judge_id + "'");
    }
    if (info.weight_family) {
        for (const auto& member : loaded.pool) {
            if (!member->capabilities().supports_weights) {
                throw ConfigError("method '" + config.method + "' needs weights; '" +
                                  member->descriptor().id + "' has none");
            }
        }
    }
    if (info.needs_distributions) {
        for (const auto& member : loaded.pool) {
            if (!member->capabilities().supports_token_distribution) {
                throw ConfigError("method '" + config.method + "' needs token distributions; '" +
                                  member->descriptor().id + "' has none");
            }
        }
    }
    return loaded;
}

// Complete ('\n'-terminated, parseable) records already on disk; the file is
// truncated back to the last complete line.
std::vector<json> recover_records(const std::string& path) {
    std::vector<json> complete;
    std::ifstream in(path, std::ios::binary);
    if (!in) return complete;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    std::size_t keep = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        const std::size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) break;  // truncated trailer
        const std::string line = content.substr(pos, nl - pos);
        try {
            complete.push_back(json::parse(line));
        } catch (const json::exception&) {
            break;  // damaged line and everything after it is recomputed
        }
        keep = nl + 1;
        pos = nl + 1;
    }
    if (keep != content.size()) {
        fs::resize_file(path, keep);
    }
    return complete;
}

json summarize_outcomes(const std::vector<InstanceOutcome>& outcomes) {
    double total = 0.0;
    int failures = 0;
    std::vector<std::string> domain_order;
    std::map<std::string, std::pair<double, int>> domains;
    for (const auto& o : outcomes) {
        total += o.score;
        if (o.failed) ++failures;
        if (!domains.count(o.domain)) domain_order.push_back(o.domain);
        domains[o.domain].first += o.score;
        domains[o.domain].second += 1;
    }
    json per_domain = json::object();
    for (const auto& d : domain_order) {
        per_domain[d] = domains[d].first / domains[d].second;
    }
    return {{"count", outcomes.size()},
            {"failures", failures},
            {"mean_score", outcomes.empty() ? 0.0 : total / outcomes.size()},
            {"per_domain", per_domain}};
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << content;
}

}  // namespace

RunManifest run_experiment(const RunConfig& input_config, const RunOptions& options) {
    RunConfig config = input_config;
    if (options.seed_override || options.concurrency_override) {
        json doc = config.normalized;
        if (options.seed_override) doc["seed"] = *options.seed_override;
        if (options.concurrency_override) doc["max_concurrency"] = *options.concurrency_override;
        config = RunConfig::from_json(doc, "");
    }

    // Everything that can reject the config happens before any output exists.
    LoadedRun loaded = load_run_inputs(config);
    MethodEngine engine(config, loaded.pool, loaded.prompts, loaded.dev);

    RunManifest manifest;
    manifest.run_id = config.run_id();
    manifest.engine_version = kEngineVersion;
    manifest.method = config.method;
    manifest.config = config.normalized;
    manifest.started_at = iso_now();

    const fs::path run_dir = fs::path(config.output_dir) / manifest.run_id;
    fs::create_directories(run_dir);
    manifest.run_dir = run_dir.string();
    const std::string records_path = (run_dir / "records.jsonl").string();

    json fit_artifacts = json::object();
    engine.fit(manifest.warnings, fit_artifacts);
    if (!fit_artifacts.empty()) {
        write_text((run_dir / "fit.json").string(), fit_artifacts.dump(2) + "\n");
    }
    if (const auto& ft = EngineAccess::finetuning(engine)) {
        std::string gen_lines, critic_lines;
        for (const auto& g : ft->generation) {
            gen_lines += json{{"instruction", g.instruction},
                              {"answer", g.answer},
                              {"model", g.model_id},
                              {"round", g.round}}
                             .dump() +
                         "\n";
        }
        for (const auto& c : ft->critic) {
            critic_lines += json{{"instruction", c.instruction},
                                 {"wrong_answer", c.wrong_answer},
                                 {"consensus", c.consensus},
                                 {"model", c.model_id},
                                 {"round", c.round}}
                                .dump() +
                            "\n";
        }
        write_text((run_dir / "finetuning_generation.jsonl").string(), gen_lines);
        write_text((run_dir / "finetuning_critic.jsonl").string(), critic_lines);
    }
    if (const auto& sp = EngineAccess::sparta(engine)) {
        std::string lines;
        for (const auto& record : sp->state.history) lines += record.to_json().dump() + "\n";
        write_text((run_dir / "preferences.jsonl").string(), lines);
    }

    std::vector<InstanceOutcome> outcomes;

    if (engine.weight_family()) {
        std::vector<json> trace;
        std::optional<TensorMap> merged;
        json weight_summary = engine.run_weight(trace, merged);
        std::string lines;
        for (const auto& t : trace) lines += t.dump() + "\n";
        write_text(records_path, lines);
        if (merged) tensor_save(*merged, (run_dir / "merged.safetensors").string());
        manifest.record_count = static_cast<int>(trace.size());
        manifest.summary = weight_summary;
        manifest.summary["count"] = trace.size();
        manifest.summary["failures"] = 0;
        if (weight_summary.contains("utility")) {
            manifest.summary["mean_score"] = weight_summary["utility"];
        }
        manifest.summary["per_domain"] = json::object();
    } else {
        const std::size_t n = loaded.test.size();
        std::size_t start = 0;
        if (options.resume) {
            const auto recovered = recover_records(records_path);
            start = recovered.size();
            for (const auto& rec : recovered) {
                InstanceOutcome o;
                o.id = rec.value("id", "");
                o.domain = rec.value("domain", "");
                o.score = rec.value("score", 0.0);
                o.failed = rec.contains("error");
                outcomes.push_back(std::move(o));
            }
            if (start > n) {
                throw ConfigError("existing records.jsonl has more lines than the dataset");
            }
        } else {
            write_text(records_path, "");
        }

        std::ofstream records(records_path, std::ios::binary | std::ios::app);
        if (!records) throw ConfigError("cannot append to '" + records_path + "'");

        std::vector<std::optional<InstanceOutcome>> slots(n);
        std::mutex mu;
        std::condition_variable ready;
        std::atomic<std::size_t> cursor{start};

        const int workers =
            std::max(1, std::min<int>(config.max_concurrency, static_cast<int>(n - start)));
        std::vector<std::thread> threads;
        threads.reserve(workers);
        for (int w = 0; w < workers; ++w) {
            threads.emplace_back([&] {
                while (true) {
                    const std::size_t i = cursor.fetch_add(1);
                    if (i >= n) break;
                    InstanceOutcome outcome = engine.run_instance(i, loaded.test[i]);
                    {
                        std::lock_guard lock(mu);
                        slots[i] = std::move(outcome);
                    }
                    ready.notify_all();
                }
            });
        }
        // Single appender: records land strictly in instance order.
        for (std::size_t i = start; i < n; ++i) {
            std::unique_lock lock(mu);
            ready.wait(lock, [&] { return slots[i].has_value(); });
            InstanceOutcome outcome = std::move(*slots[i]);
            slots[i].reset();
            lock.unlock();
            records << outcome_to_record(i, outcome).dump() << "\n";
            records.flush();
            outcomes.push_back(std::move(outcome));
        }
        for (auto& t : threads) t.join();
        records.close();

        manifest.record_count = static_cast<int>(outcomes.size());
        manifest.summary = summarize_outcomes(outcomes);
    }

    manifest.failure_count = manifest.summary.value("failures", 0);
    manifest.degraded =
        manifest.record_count > 0 &&
        manifest.failure_count * 10 > manifest.record_count;  // strict > 10%
    manifest.finished_at = iso_now();

    write_text((run_dir / "summary.json").string(), manifest.summary.dump(2) + "\n");
    write_text((run_dir / "manifest.json").string(), manifest.to_json().dump(2) + "\n");
    return manifest;
}

json compare_runs(const std::vector<RunManifest>& manifests) {
    if (manifests.empty()) throw ArgumentError("nothing to compare");
    const auto dataset_of = [](const RunManifest& m) {
        return std::pair(m.config.at("dataset").value("path", ""),
                         m.config.at("dataset").value("split", ""));
    };
    for (const auto& m : manifests) {
        if (dataset_of(m) != dataset_of(manifests[0])) {
            throw ArgumentError("compared runs must share dataset and split");
        }
    }

    std::vector<std::string> domains;
    for (const auto& m : manifests) {
        for (auto it = m.summary.at("per_domain").begin(); it != m.summary.at("per_domain").end();
             ++it) {
            if (std::find(domains.begin(), domains.end(), it.key()) == domains.end()) {
                domains.push_back(it.key());
            }
        }
    }

    // IF columns are min-max normalized across exactly the compared runs.
    std::map<std::string, std::pair<double, double>> if_bounds;
    for (const auto& d : domains) {
        if (d != "IF") continue;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& m : manifests) {
            if (m.summary.at("per_domain").contains(d)) {
                const double v = m.summary.at("per_domain").at(d).get<double>();
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
        if_bounds[d] = {lo, hi};
    }
    auto cell_value = [&](const RunManifest& m, const std::string& d) -> std::optional<double> {
        if (!m.summary.at("per_domain").contains(d)) return std::nullopt;
        double v = m.summary.at("per_domain").at(d).get<double>();
        if (d == "IF") {
            const auto& [lo, hi] = if_bounds.at(d);
            v = hi == lo ? 0.5 : (v - lo) / (hi - lo);
        }
        return v;
    };

    std::map<std::string, double> best_single;
    for (const auto& m : manifests) {
        if (m.method != "single") continue;
        for (const auto& d : domains) {
            if (const auto v = cell_value(m, d)) {
                auto it = best_single.find(d);
                if (it == best_single.end() || *v > it->second) best_single[d] = *v;
            }
        }
    }

    json rows = json::array();
    for (const auto& m : manifests) {
        json cells = json::object();
        double sum = 0.0;
        int present = 0;
        for (const auto& d : domains) {
            const auto v = cell_value(m, d);
            if (!v) continue;
            json cell = {{"value", *v}};
            if (m.method != "single" && best_single.count(d)) {
                cell["improved"] = *v > best_single.at(d);  // strict
            }
            cells[d] = cell;
            sum += *v;
            ++present;
        }
        rows.push_back({{"method", m.method},
                        {"run_id", m.run_id},
                        {"cells", cells},
                        {"overall", present ? sum / present : 0.0}});
    }

    json baseline = json::object();
    for (const auto& [d, v] : best_single) baseline[d] = v;
    return {{"dataset", dataset_of(manifests[0]).first},
            {"split", dataset_of(manifests[0]).second},
            {"domains", domains},
            {"best_single", baseline},
            {"rows", rows}};
}

std::string render_comparison(const json& comparison) {
    const auto domains = comparison.at("domains").get<std::vector<std::string>>();
    std::ostringstream out;
    out << std::left << std::setw(24) << "method";
    for (const auto& d : domains) out << std::setw(12) << d;
    out << std::setw(12) << "overall" << "\n";
    for (const auto& row : comparison.at("rows")) {
        out << std::left << std::setw(24) << row.at("method").get<std::string>();
        for (const auto& d : domains) {
            if (!row.at("cells").contains(d)) {
                out << std::setw(12) << "/";
                continue;
            }
            const auto& cell = row.at("cells").at(d);
            std::ostringstream v;
            v << std::fixed << std::setprecision(3) << cell.at("value").get<double>();
            if (cell.value("improved", false)) v << "*";
            out << std::setw(12) << v.str();
        }
        std::ostringstream v;
        v << std::fixed << std::setprecision(3) << row.at("overall").get<double>();
        out << std::setw(12) << v.str() << "\n";
    }
    out << "(* improves on the best single-model run; IF min-max normalized)\n";
    return out.str();
}

namespace {

std::pair<std::vector<std::string>, std::vector<bool>> read_correctness(
    const RunManifest& manifest) {
    std::ifstream in(fs::path(manifest.run_dir) / "records.jsonl");
    if (!in) throw ConfigError("run '" + manifest.run_id + "' has no records.jsonl");
    std::vector<std::string> ids;
    std::vector<bool> correct;
    std::string line;
    while (std::getline(in, line)) {
        if (strip(line).empty()) continue;
        const json rec = json::parse(line);
        ids.push_back(rec.at("id").get<std::string>());
        correct.push_back(rec.value("score", 0.0) >= 0.5);
    }
    return {ids, correct};
}

std::string single_run_model(const RunManifest& manifest) {
    if (manifest.config.contains("hyperparameters") &&
        manifest.config["hyperparameters"].contains("model_id")) {
        return manifest.config["hyperparameters"]["model_id"].get<std::string>();
    }
    return manifest.config.at("pool").at("models").at(0).at("id").get<std::string>();
}

}  // namespace

CorrectnessMatrix correctness_from_manifests(const RunManifest& system_run,
                                             const std::vector<RunManifest>& individual_runs) {
    auto [ids, system_bits] = read_correctness(system_run);
    CorrectnessMatrix matrix(ids);
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;

    for (const auto& run : individual_runs) {
        auto [run_ids, bits] = read_correctness(run);
        std::vector<bool> aligned(ids.size(), false);
        for (std::size_t i = 0; i < run_ids.size(); ++i) {
            auto it = index.find(run_ids[i]);
            if (it == index.end()) {
                throw ArgumentError("run '" + run.run_id + "' covers instance '" + run_ids[i] +
                                    "' missing from the system run");
            }
            aligned[it->second] = bits[i];
        }
        matrix.add_row(single_run_model(run), std::move(aligned));
    }
    matrix.add_row(kSystemRow, system_bits);
    return matrix;
}

double execute_for_score(const RunConfig& config, const ModelPool& pool) {
    PromptLibrary prompts = config.templates_dir.empty()
                                ? PromptLibrary::defaults()
                                : PromptLibrary::load_dir(config.templates_dir);
    const MethodInfo& info = method_registry().at(config.method);
    std::vector<DatasetRecord> test = downsample(load_dataset(config.dataset_path, config.split),
                                                 config.downsample_cap,
                                                 fnv1a("test", config.seed));
    std::vector<DatasetRecord> dev;
    if (info.needs_dev) {
        dev = downsample(load_dataset(config.dataset_path, config.dev_split),
                         config.downsample_cap, fnv1a("dev", config.seed));
    }
    MethodEngine engine(config, pool, prompts, std::move(dev));
    std::vector<std::string> warnings;
    json artifacts;
    engine.fit(warnings, artifacts);
    if (engine.weight_family()) {
        std::vector<json> trace;
        std::optional<TensorMap> merged;
        const json summary = engine.run_weight(trace, merged);
        return summary.value("utility", 0.0);
    }
    if (test.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        sum += engine.run_instance(i, test[i]).score;
    }
    return sum / test.size();
}

std::vector<std::string> runner_methods() {
    std::vector<std::string> out;
    for (const auto& [name, info] : method_registry()) out.push_back(name);
    return out;
}

}  // namespace chorus
