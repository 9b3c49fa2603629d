#include "chorus/collab_text.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <regex>
#include <set>

#include "chorus/errors.hpp"
#include "chorus/util.hpp"

namespace chorus {

using nlohmann::json;

const std::vector<std::string> kBlackboardActions = {"propose", "extend", "critique", "revise",
                                                     "synthesize"};

json Transcript::to_json() const {
    json rs = json::array();
    for (const auto& round : rounds) {
        json msgs = json::array();
        for (const auto& m : round) {
            msgs.push_back({{"model", m.model_id}, {"role", m.role}, {"text", m.text}});
        }
        rs.push_back(msgs);
    }
    return {{"rounds", rs}, {"final_answer", final_answer}};
}

void InteractionGraph::validate() const {
    const int n = static_cast<int>(nodes.size());
    for (const auto& [from, to] : edges) {
        if (from < 0 || from >= n || to < 0 || to >= n || from == to) {
            throw ArgumentError("graph edge (" + std::to_string(from) + "," + std::to_string(to) +
                                ") is out of range");
        }
        if (acyclic && from >= to) {
            throw ArgumentError("acyclic graph edge (" + std::to_string(from) + "," +
                                std::to_string(to) + ") violates the topological order");
        }
    }
    if (!receives_query.empty() && static_cast<int>(receives_query.size()) != n) {
        throw ArgumentError("receives_query size does not match node count");
    }
    if (answer_node >= n) throw ArgumentError("answer_node out of range");
}

std::vector<int> InteractionGraph::in_neighbors(int node) const {
    std::vector<int> in;
    for (const auto& [from, to] : edges) {
        if (to == node) in.push_back(from);
    }
    std::sort(in.begin(), in.end());
    return in;
}

json InteractionGraph::to_json() const {
    json es = json::array();
    for (const auto& [from, to] : edges) es.push_back({from, to});
    json j = {{"nodes", nodes}, {"edges", es}, {"acyclic", acyclic}};
    if (!receives_query.empty()) {
        json rq = json::array();
        for (bool b : receives_query) rq.push_back(b);
        j["receives_query"] = rq;
    }
    if (answer_node >= 0) j["answer_node"] = answer_node;
    return j;
}

json PreferenceRecord::to_json() const {
    return {{"instruction", instruction},
            {"chosen", winner_text},
            {"rejected", loser_text},
            {"winner_id", winner_id},
            {"loser_id", loser_id},
            {"ratings_before", {winner_rating_before, loser_rating_before}},
            {"ratings_after", {winner_rating_after, loser_rating_after}}};
}

double ReputationState::rating(const std::string& id) const {
    for (const auto& [rid, r] : ratings) {
        if (rid == id) return r;
    }
    throw ArgumentError("no rating for model '" + id + "'");
}

double ReputationState::total() const {
    double sum = 0.0;
    for (const auto& [id, r] : ratings) sum += r;
    return sum;
}

namespace {

// Failed generations become empty slots; the exchange continues without them.
std::string generate_or_empty(ModelBackend& backend, const std::string& prompt,
                              const GenerationParams& params) {
    try {
        return generate(backend, prompt, params).text;
    } catch (const Error&) {
        return "";
    }
}

std::string answer_lines(const std::vector<Message>& msgs, int exclude = -1) {
    std::string block;
    for (std::size_t j = 0; j < msgs.size(); ++j) {
        if (static_cast<int>(j) == exclude) continue;
        block += "[answer] " + msgs[j].text + "\n";
    }
    return block;
}

// Last standalone 'A' or 'B' in a judge reply; nullopt means abstain.
std::optional<char> parse_ab(const std::string& text) {
    std::optional<char> found;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != 'A' && c != 'B') continue;
        const bool left_ok = i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1]));
        const bool right_ok =
            i + 1 >= text.size() || !std::isalnum(static_cast<unsigned char>(text[i + 1]));
        if (left_ok && right_ok) found = c;
    }
    return found;
}

std::optional<int> parse_last_int(const std::string& text) {
    static const std::regex kInt(R"(\d+)");
    auto begin = std::sregex_iterator(text.begin(), text.end(), kInt);
    std::optional<int> found;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        try {
            found = std::stoi(it->str());
        } catch (const std::exception&) {
        }
    }
    return found;
}

std::vector<Message> independent_answers(const ModelPool& pool, const std::string& query,
                                         const GenerationParams& params,
                                         const PromptLibrary& prompts) {
    std::vector<Message> round(pool.size());
    const std::string prompt = prompts.render("debate_initial", {{"query", query}});
    parallel_for(static_cast<int>(pool.size()), [&](int i) {
        round[i] = {pool.at(i).descriptor().id, "answer",
                    generate_or_empty(pool.at(i), prompt, params)};
    });
    return round;
}

Message summarize(ModelBackend& summarizer, const std::string& query,
                  const std::vector<Message>& last_round, const GenerationParams& params,
                  const PromptLibrary& prompts) {
    const std::string prompt =
        prompts.render("summarize", {{"query", query}, {"answers", answer_lines(last_round)}});
    return {summarizer.descriptor().id, "summary", generate(summarizer, prompt, params).text};
}

}  // namespace

Transcript multiagent_debate(const ModelPool& pool, const std::string& query, int rounds,
                             ModelBackend& summarizer, const GenerationParams& params,
                             const PromptLibrary& prompts) {
    if (rounds < 1) throw ArgumentError("debate needs at least one round");
    if (pool.empty()) throw ArgumentError("debate needs a nonempty pool");

    Transcript t;
    t.rounds.push_back(independent_answers(pool, query, params, prompts));
    for (int r = 1; r < rounds; ++r) {
        const auto& prev = t.rounds.back();
        std::vector<Message> round(pool.size());
        parallel_for(static_cast<int>(pool.size()), [&](int i) {
            const std::string prompt =
                prompts.render("debate_refine", {{"query", query},
                                                 {"own_answer", prev[i].text},
                                                 {"other_answers", answer_lines(prev, i)}});
            round[i] = {pool.at(i).descriptor().id, "answer",
                        generate_or_empty(pool.at(i), prompt, params)};
        });
        t.rounds.push_back(std::move(round));
    }
    Message summary = summarize(summarizer, query, t.rounds.back(), params, prompts);
    t.final_answer = summary.text;
    t.rounds.push_back({std::move(summary)});
    return t;
}

Transcript multiagent_feedback(const ModelPool& pool, const std::string& query, int rounds,
                               ModelBackend& summarizer, const GenerationParams& params,
                               const PromptLibrary& prompts) {
    if (rounds < 1) throw ArgumentError("feedback needs at least one round");
    if (pool.empty()) throw ArgumentError("feedback needs a nonempty pool");
    const int n = static_cast<int>(pool.size());

    Transcript t;
    t.rounds.push_back(independent_answers(pool, query, params, prompts));
    for (int r = 1; r < rounds; ++r) {
        const std::vector<Message> prev = t.rounds.back();

        // Feedback phase: every model critiques every other answer. Kept as
        // its own round so refinements only reference earlier rounds.
        std::vector<Message> feedback(n * (n - 1));
        parallel_for(n * (n - 1), [&](int slot) {
            const int author = slot / (n - 1);
            int target = slot % (n - 1);
            if (target >= author) ++target;
            const std::string prompt = prompts.render(
                "feedback_write", {{"query", query},
                                   {"author", pool.at(target).descriptor().id},
                                   {"answer", prev[target].text}});
            feedback[slot] = {pool.at(author).descriptor().id,
                              "feedback:" + pool.at(target).descriptor().id,
                              generate_or_empty(pool.at(author), prompt, params)};
        });
        t.rounds.push_back(feedback);

        std::vector<Message> round(n);
        parallel_for(n, [&](int i) {
            std::string received;
            for (const auto& f : feedback) {
                if (f.role == "feedback:" + pool.at(i).descriptor().id) {
                    received += "[feedback] " + f.text + "\n";
                }
            }
            const std::string prompt =
                prompts.render("feedback_refine", {{"query", query},
                                                   {"own_answer", prev[i].text},
                                                   {"feedback", received}});
            round[i] = {pool.at(i).descriptor().id, "answer",
                        generate_or_empty(pool.at(i), prompt, params)};
        });
        t.rounds.push_back(std::move(round));
    }
    Message summary = summarize(summarizer, query, t.rounds.back(), params, prompts);
    t.final_answer = summary.text;
    t.rounds.push_back({std::move(summary)});
    return t;
}

BlenderResult llm_blender(const ModelPool& pool, const std::string& query, ModelBackend& ranker,
                          ModelBackend& fuser, int top_k, const GenerationParams& params,
                          const PromptLibrary& prompts) {
    const int n = static_cast<int>(pool.size());
    if (top_k < 1 || top_k > n) {
        throw ArgumentError("top_k must lie in [1, " + std::to_string(n) + "]");
    }
    BlenderResult result;
    result.responses = independent_answers(pool, query, params, prompts);
    result.wins.assign(n, 0);
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            const std::string prompt =
                prompts.render("judge_pair", {{"query", query},
                                              {"answer_a", result.responses[i].text},
                                              {"answer_b", result.responses[j].text}});
            try {
                const auto verdict = parse_ab(generate(ranker, prompt, params).text);
                if (verdict == 'A') result.wins[i] += 1;
                if (verdict == 'B') result.wins[j] += 1;
            } catch (const Error&) {
                // judge failure: this pair contributes no wins
            }
        }
    }
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return result.wins[a] > result.wins[b]; });
    for (int idx : order) result.ranking.push_back(pool.at(idx).descriptor().id);

    std::string block;
    for (int r = 0; r < top_k; ++r) block += "[answer] " + result.responses[order[r]].text + "\n";
    result.final_text =
        generate(fuser, prompts.render("fuse", {{"query", query}, {"answers", block}}), params)
            .text;
    return result;
}

KnowledgeCardResult knowledge_card(const ModelPool& pool, const std::string& query,
                                   ModelBackend& reader, const GenerationParams& params,
                                   const PromptLibrary& prompts) {
    if (pool.empty()) throw ArgumentError("knowledge card needs a nonempty pool");
    KnowledgeCardResult result;
    result.knowledge.assign(pool.size(), "");
    const std::string gen_prompt = prompts.render("knowledge_generate", {{"query", query}});
    parallel_for(static_cast<int>(pool.size()), [&](int i) {
        result.knowledge[i] = generate_or_empty(pool.at(i), gen_prompt, params);
    });
    std::string block;
    for (const auto& k : result.knowledge) block += "[knowledge] " + k + "\n";
    result.reader_prompt =
        prompts.render("knowledge_answer", {{"query", query}, {"knowledge", block}});
    result.final_text = generate(reader, result.reader_prompt, params).text;
    return result;
}

std::string majority_vote(const std::vector<std::string>& answers) {
    if (answers.empty()) throw ArgumentError("majority vote over an empty answer list");
    std::map<std::string, int> counts;
    std::map<std::string, std::size_t> first_seen;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        counts[answers[i]] += 1;
        if (!first_seen.count(answers[i])) first_seen[answers[i]] = i;
    }
    std::string winner;
    int best = -1;
    std::size_t best_first = 0;
    for (const auto& [answer, count] : counts) {
        const std::size_t first = first_seen[answer];
        if (count > best || (count == best && first < best_first)) {
            best = count;
            best_first = first;
            winner = answer;
        }
    }
    return winner;
}

namespace {

int pair_count(int n) { return n * (n - 1) / 2; }

InteractionGraph decode_swarm_particle(const TensorMap& particle,
                                       const std::vector<std::string>& ids) {
    const auto& w = particle.at("edges").values;
    const int n = static_cast<int>(ids.size());
    InteractionGraph g;
    g.nodes = ids;
    g.acyclic = true;
    std::size_t off = n;  // input-edge weights occupy [0, n)
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (w[off++] > 0.0) g.edges.emplace_back(i, j);
        }
    }
    g.receives_query.assign(n, false);
    for (int i = 0; i < n; ++i) g.receives_query[i] = w[i] > 0.0;
    // A node with no incoming edges would otherwise see an empty prompt.
    for (int i = 0; i < n; ++i) {
        if (g.in_neighbors(i).empty()) g.receives_query[i] = true;
    }
    g.answer_node = n - 1;
    for (int i = n - 1; i >= 0; --i) {
        if (w[n + pair_count(n) + i] > 0.0) {
            g.answer_node = i;
            break;
        }
    }
    return g;
}

}  // namespace

InteractionGraph hetero_swarms_fit(const ModelPool& pool,
                                   const std::function<double(const InteractionGraph&)>& evaluator,
                                   const PsoParams& pso, std::uint64_t seed) {
    if (pool.empty()) throw ArgumentError("swarm fit needs a nonempty pool");
    const int n = static_cast<int>(pool.size());
    const int dims = n + pair_count(n) + n;
    const std::vector<std::string> ids = pool.ids();

    Rng init_rng(fnv1a_combine(seed, 0x11));
    std::vector<TensorMap> particles;
    for (int p = 0; p < std::max(pso.particles, 1); ++p) {
        Tensor t;
        t.shape = {dims};
        t.dtype = Dtype::f64;
        t.values.resize(dims);
        for (double& v : t.values) v = init_rng.uniform(-1.0, 1.0);
        TensorMap m;
        m.put("edges", std::move(t));
        particles.push_back(std::move(m));
    }

    auto utility_of = [&](const TensorMap& particle) {
        try {
            return evaluator(decode_swarm_particle(particle, ids));
        } catch (const std::exception&) {
            return -std::numeric_limits<double>::infinity();
        }
    };
    auto evaluate_all = [&](const std::vector<TensorMap>& ps) {
        std::vector<double> utils;
        utils.reserve(ps.size());
        for (const auto& p : ps) utils.push_back(utility_of(p));
        return utils;
    };

    PSOState state = pso_init(std::move(particles), pso, fnv1a_combine(seed, 0x22));
    std::vector<double> utils = evaluate_all(state.particles);
    for (int t = 0; t < pso.iterations; ++t) {
        pso_step(state, utils);
        utils = evaluate_all(state.particles);
    }
    pso_update_bests(state, utils);
    if (!std::isfinite(state.global_best.utility)) {
        throw ArgumentError("swarm fit: the evaluator failed for every particle");
    }
    return decode_swarm_particle(state.global_best.position, ids);
}

SwarmInferResult hetero_swarms_infer(const InteractionGraph& graph, const ModelPool& pool,
                                     const std::string& query, const GenerationParams& params,
                                     const PromptLibrary& prompts) {
    if (!graph.acyclic) throw ArgumentError("swarm inference needs an acyclic graph");
    graph.validate();
    if (graph.nodes.size() != pool.size()) {
        throw ArgumentError("graph has " + std::to_string(graph.nodes.size()) +
                            " nodes for a pool of " + std::to_string(pool.size()));
    }
    SwarmInferResult result;
    result.node_outputs.resize(graph.nodes.size());
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
        std::string inputs;
        for (int from : graph.in_neighbors(static_cast<int>(i))) {
            inputs += "[input] " + result.node_outputs[from] + "\n";
        }
        const std::string prompt = prompts.render(
            "graph_node",
            {{"query", graph.node_receives_query(static_cast<int>(i)) ? query : ""},
             {"inputs", inputs}});
        result.node_outputs[i] = generate(pool.by_id(graph.nodes[i]), prompt, params).text;
    }
    result.final_text = result.node_outputs[graph.effective_answer_node()];
    return result;
}

FinetuningDatasets multiagent_finetuning_build(const ModelPool& pool,
                                               const std::vector<DatasetRecord>& dev, int rounds,
                                               const GenerationParams& params,
                                               const PromptLibrary& prompts) {
    if (rounds < 1) throw ArgumentError("finetuning build needs at least one round");
    FinetuningDatasets out;
    for (int round = 0; round < rounds; ++round) {
        for (const auto& record : dev) {
            if (!record.objective()) {
                throw ConfigError("finetuning build needs objective instances; '" + record.id +
                                  "' is open-ended");
            }
            const auto answers = independent_answers(pool, record.prompt, params, prompts);
            std::vector<std::string> extracted;
            for (const auto& a : answers) {
                extracted.push_back(extract_answer(a.text, record.task_kind));
            }
            const std::string consensus = majority_vote(extracted);
            int agreeing = 0;
            for (const auto& e : extracted) {
                if (e == consensus) ++agreeing;
            }
            if (agreeing <= 1 && pool.size() > 1) {  // all answers distinct
                out.skipped.push_back(std::to_string(round) + ":" + record.id);
                continue;
            }
            for (std::size_t i = 0; i < extracted.size(); ++i) {
                if (extracted[i] == consensus) {
                    out.generation.push_back(
                        {record.prompt, consensus, answers[i].model_id, round});
                } else {
                    out.critic.push_back(
                        {record.prompt, answers[i].text, consensus, answers[i].model_id, round});
                }
            }
        }
    }
    return out;
}

DebateVoteResult multiagent_finetuning_infer(const ModelPool& pool, const std::string& query,
                                             int rounds, TaskKind vote_kind,
                                             const GenerationParams& params,
                                             const PromptLibrary& prompts) {
    if (rounds < 1) throw ArgumentError("inference needs at least one round");
    DebateVoteResult result;
    Transcript t;
    t.rounds.push_back(independent_answers(pool, query, params, prompts));
    for (int r = 1; r < rounds; ++r) {
        const auto& prev = t.rounds.back();
        std::vector<Message> round(pool.size());
        parallel_for(static_cast<int>(pool.size()), [&](int i) {
            const std::string prompt =
                prompts.render("debate_refine", {{"query", query},
                                                 {"own_answer", prev[i].text},
                                                 {"other_answers", answer_lines(prev, i)}});
            round[i] = {pool.at(i).descriptor().id, "answer",
                        generate_or_empty(pool.at(i), prompt, params)};
        });
        t.rounds.push_back(std::move(round));
    }
    std::vector<std::string> extracted;
    for (const auto& m : t.rounds.back()) extracted.push_back(extract_answer(m.text, vote_kind));
    const std::string winner = majority_vote(extracted);
    for (std::size_t i = 0; i < extracted.size(); ++i) {
        if (extracted[i] == winner) {
            t.final_answer = t.rounds.back()[i].text;
            break;
        }
    }
    result.final_answer = t.final_answer;
    result.transcript = std::move(t);
    return result;
}

Transcript structured_interaction(const ModelPool& pool, const InteractionGraph& graph,
                                  const std::string& query, int rounds, TaskKind vote_kind,
                                  const GenerationParams& params, const PromptLibrary& prompts) {
    if (rounds < 1) throw ArgumentError("structured interaction needs at least one round");
    graph.validate();
    if (graph.nodes.size() != pool.size()) {
        throw ArgumentError("graph node count does not match the pool");
    }
    Transcript t;
    t.rounds.push_back(independent_answers(pool, query, params, prompts));
    for (int r = 1; r < rounds; ++r) {
        const std::vector<Message> prev = t.rounds.back();
        std::vector<Message> round(pool.size());
        parallel_for(static_cast<int>(pool.size()), [&](int i) {
            std::string neighbors;
            for (int from : graph.in_neighbors(i)) {
                neighbors += "[answer] " + prev[from].text + "\n";
            }
            const std::string prompt =
                prompts.render("structured_update", {{"query", query},
                                                     {"own_answer", prev[i].text},
                                                     {"neighbor_answers", neighbors}});
            round[i] = {pool.at(i).descriptor().id, "answer",
                        generate_or_empty(pool.at(i), prompt, params)};
        });
        t.rounds.push_back(std::move(round));
    }
    std::vector<std::string> extracted;
    for (const auto& m : t.rounds.back()) extracted.push_back(extract_answer(m.text, vote_kind));
    const std::string winner = majority_vote(extracted);
    for (std::size_t i = 0; i < extracted.size(); ++i) {
        if (extracted[i] == winner) {
            t.final_answer = t.rounds.back()[i].text;
            break;
        }
    }
    return t;
}

BbmasResult bbmas(const ModelPool& pool, const std::string& query, int rounds,
                  const GenerationParams& params, const PromptLibrary& prompts) {
    if (rounds < 1) throw ArgumentError("bbmas needs at least one round");
    if (pool.empty()) throw ArgumentError("bbmas needs a nonempty pool");

    BbmasResult result;
    auto board_text = [&] {
        std::string s;
        for (std::size_t k = 0; k < result.board.size(); ++k) {
            const auto& e = result.board[k];
            s += "[entry " + std::to_string(k) + "] (" + e.model_id + ", " + e.action + ") " +
                 e.text + "\n";
        }
        return s;
    };
    const std::string actions = join(kBlackboardActions.begin(), kBlackboardActions.end(), ", ");

    int turn = 0;
    for (int r = 0; r < rounds; ++r) {
        std::vector<Message> round;
        for (std::size_t i = 0; i < pool.size(); ++i, ++turn) {
            const std::string prompt = prompts.render(
                "blackboard_turn",
                {{"query", query}, {"blackboard", board_text()}, {"actions", actions}});
            const std::string reply = generate_or_empty(pool.at(i), prompt, params);

            // "action: <name>" on the first line selects the action;
            // anything unparseable is treated as a proposal.
            std::string action = "propose";
            std::string content = reply;
            const auto newline = reply.find('\n');
            const std::string first = strip(reply.substr(0, newline));
            const std::string lowered = to_lower(first);
            if (lowered.rfind("action:", 0) == 0) {
                const std::string name = strip(lowered.substr(7));
                if (std::find(kBlackboardActions.begin(), kBlackboardActions.end(), name) !=
                    kBlackboardActions.end()) {
                    action = name;
                    content = newline == std::string::npos ? "" : strip(reply.substr(newline + 1));
                }
            }
            result.board.push_back({turn, pool.at(i).descriptor().id, action, content});
            round.push_back({pool.at(i).descriptor().id, action, content});
        }
        result.transcript.rounds.push_back(std::move(round));
    }

    // Vote on the best conclusion; abstentions are dropped, and with no valid
    // vote the last synthesis (else the last entry) stands.
    std::vector<Message> vote_round;
    std::vector<std::string> valid_votes;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const std::string prompt = prompts.render(
            "blackboard_vote", {{"query", query}, {"blackboard", board_text()}});
        const std::string reply = generate_or_empty(pool.at(i), prompt, params);
        auto vote = parse_last_int(reply);
        if (vote && (*vote < 0 || *vote >= static_cast<int>(result.board.size()))) {
            vote = std::nullopt;
        }
        result.votes.push_back(vote);
        if (vote) valid_votes.push_back(std::to_string(*vote));
        vote_round.push_back(
            {pool.at(i).descriptor().id, "vote", vote ? std::to_string(*vote) : ""});
    }
    result.transcript.rounds.push_back(std::move(vote_round));

    if (!valid_votes.empty()) {
        result.winning_entry = std::stoi(majority_vote(valid_votes));
    } else {
        result.winning_entry = static_cast<int>(result.board.size()) - 1;
        for (int k = static_cast<int>(result.board.size()) - 1; k >= 0; --k) {
            if (result.board[k].action == "synthesize") {
                result.winning_entry = k;
                break;
            }
        }
    }
    result.transcript.final_answer = result.board[result.winning_entry].text;
    return result;
}

SpartaResult sparta_collect(const ModelPool& pool, const std::vector<DatasetRecord>& instructions,
                            int rounds, JudgeWeighting weighting, std::uint64_t seed,
                            const GenerationParams& params, const PromptLibrary& prompts) {
    const int n = static_cast<int>(pool.size());
    if (n < 3) throw ArgumentError("sparta needs at least 3 models (two contestants + a judge)");
    if (rounds < 1) throw ArgumentError("sparta needs at least one round");

    SpartaResult result;
    for (const auto& m : pool) result.state.ratings.emplace_back(m->descriptor().id, 1000.0);
    Rng rng(seed);

    for (int round = 0; round < rounds; ++round) {
        for (const auto& record : instructions) {
            // Contestant pair sampled uniformly without replacement.
            const int a = static_cast<int>(rng.below(n));
            int b = static_cast<int>(rng.below(n - 1));
            if (b >= a) ++b;

            const std::string ask =
                prompts.render("sparta_answer", {{"instruction", record.prompt}});
            const std::string answer_a = generate_or_empty(pool.at(a), ask, params);
            const std::string answer_b = generate_or_empty(pool.at(b), ask, params);

            // Rating-share weighting: dividing every vote by the voting
            // judges' rating sum never changes the comparison, so raw
            // ratings serve as the weights.
            double weight_a = 0.0, weight_b = 0.0;
            const std::string judge_prompt =
                prompts.render("sparta_judge", {{"instruction", record.prompt},
                                                {"answer_a", answer_a},
                                                {"answer_b", answer_b}});
            for (int j = 0; j < n; ++j) {
                if (j == a || j == b) continue;
                std::optional<char> verdict;
                try {
                    verdict = parse_ab(generate(pool.at(j), judge_prompt, params).text);
                } catch (const Error& e) {
                    result.warnings.push_back(pool.at(j).descriptor().id +
                                              " abstained: " + e.what());
                }
                if (!verdict) continue;  // abstention carries no weight
                const double w = weighting == JudgeWeighting::rating_share
                                     ? result.state.ratings[j].second
                                     : 1.0;
                (*verdict == 'A' ? weight_a : weight_b) += w;
            }

            const bool a_wins = weight_a >= weight_b;  // ties resolve toward A
            const int winner = a_wins ? a : b;
            const int loser = a_wins ? b : a;

            PreferenceRecord pref;
            pref.instruction = record.prompt;
            pref.winner_id = result.state.ratings[winner].first;
            pref.loser_id = result.state.ratings[loser].first;
            pref.winner_text = a_wins ? answer_a : answer_b;
            pref.loser_text = a_wins ? answer_b : answer_a;
            pref.winner_rating_before = result.state.ratings[winner].second;
            pref.loser_rating_before = result.state.ratings[loser].second;

            // Zero-sum Elo, K = 32.
            const double expected =
                1.0 / (1.0 + std::pow(10.0, (pref.loser_rating_before -
                                             pref.winner_rating_before) /
                                                400.0));
            const double delta = 32.0 * (1.0 - expected);
            result.state.ratings[winner].second += delta;
            result.state.ratings[loser].second -= delta;
            pref.winner_rating_after = result.state.ratings[winner].second;
            pref.loser_rating_after = result.state.ratings[loser].second;
            result.state.history.push_back(std::move(pref));
        }
    }
    return result;
}

std::string agglm_aggregate(ModelBackend& aggregator, const std::string& query,
                            const std::vector<std::string>& responses,
                            const GenerationParams& params, const PromptLibrary& prompts) {
    if (responses.empty()) throw ArgumentError("aggregation needs at least one response");
    std::string block;
    for (const auto& r : responses) block += "[response] " + r + "\n";
    return generate(aggregator,
                    prompts.render("aggregate", {{"query", query}, {"responses", block}}), params)
        .text;
}

AgglmSplits agglm_build_splits(const ModelPool& pool, const std::vector<DatasetRecord>& dev,
                               const GenerationParams& params) {
    AgglmSplits splits;
    for (const auto& record : dev) {
        if (!record.objective()) {
            throw ConfigError("split building needs objective instances; '" + record.id +
                              "' is open-ended");
        }
        std::vector<std::string> extracted(pool.size());
        parallel_for(static_cast<int>(pool.size()), [&](int i) {
            extracted[i] = extract_answer(
                generate_or_empty(pool.at(i), record.prompt, params), record.task_kind);
        });
        const std::string voted = majority_vote(extracted);
        DatasetRecord probe = record;
        const bool correct = score_instance(probe, voted).value >= 0.5;
        (correct ? splits.easy_ids : splits.hard_ids).push_back(record.id);
    }
    return splits;
}

}  // namespace chorus
