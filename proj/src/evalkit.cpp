#include "chorus/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>

#include "chorus/errors.hpp"
#include "chorus/util.hpp"

namespace chorus {

using nlohmann::json;

const std::string kNoAnswer = "[no-answer]";
const std::string kSystemRow = "system";

std::string to_string(TaskKind k) {
    switch (k) {
        case TaskKind::multiple_choice: return "multiple_choice";
        case TaskKind::exact_match: return "exact_match";
        case TaskKind::open_ended: return "open_ended";
        case TaskKind::code: return "code";
    }
    return "exact_match";
}

TaskKind task_kind_from_string(const std::string& s) {
    if (s == "multiple_choice") return TaskKind::multiple_choice;
    if (s == "exact_match") return TaskKind::exact_match;
    if (s == "open_ended") return TaskKind::open_ended;
    if (s == "code") return TaskKind::code;
    throw FormatError("unknown task_kind '" + s + "'");
}

void CorrectnessMatrix::add_row(const std::string& id, std::vector<bool> bits) {
    if (bits.size() != instance_ids_.size()) {
        throw ArgumentError("correctness row '" + id + "' has " + std::to_string(bits.size()) +
                            " entries, expected " + std::to_string(instance_ids_.size()));
    }
    if (find_row(id)) throw ArgumentError("duplicate correctness row '" + id + "'");
    rows_.emplace_back(id, std::move(bits));
}

const std::vector<bool>* CorrectnessMatrix::find_row(const std::string& id) const {
    for (const auto& [rid, bits] : rows_) {
        if (rid == id) return &bits;
    }
    return nullptr;
}

json CorrectnessMatrix::to_json() const {
    json rows = json::array();
    for (const auto& [id, bits] : rows_) {
        json correct = json::array();
        for (std::size_t i = 0; i < bits.size(); ++i) {
            if (bits[i]) correct.push_back(instance_ids_[i]);
        }
        rows.push_back({{"id", id}, {"correct", correct}});
    }
    return {{"instances", instance_ids_}, {"rows", rows}};
}

CorrectnessMatrix CorrectnessMatrix::from_json(const json& j) {
    CorrectnessMatrix m(j.at("instances").get<std::vector<std::string>>());
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < m.instance_ids_.size(); ++i) index[m.instance_ids_[i]] = i;
    for (const json& row : j.at("rows")) {
        std::vector<bool> bits(m.instance_ids_.size(), false);
        for (const auto& id : row.at("correct")) {
            auto it = index.find(id.get<std::string>());
            if (it == index.end()) {
                throw FormatError("correctness row references unknown instance '" +
                                  id.get<std::string>() + "'");
            }
            bits[it->second] = true;
        }
        m.add_row(row.at("id").get<std::string>(), std::move(bits));
    }
    return m;
}

json ScoreReport::to_json() const {
    json ds = json::array();
    for (const auto& d : datasets) {
        json e = {{"dataset", d.dataset}, {"domain", d.domain}, {"value", d.value}};
        if (d.if_min) e["if_min"] = *d.if_min;
        if (d.if_max) e["if_max"] = *d.if_max;
        ds.push_back(e);
    }
    json domains = json::object();
    for (const auto& [name, value] : per_domain) domains[name] = value;
    return {{"datasets", ds},
            {"per_domain", domains},
            {"overall", overall},
            {"normalization", normalization_note}};
}

std::vector<DatasetRecord> load_dataset(const std::string& path, const std::string& split) {
    std::filesystem::path p(path);
    if (std::filesystem::is_directory(p)) p /= split + ".jsonl";
    std::ifstream in(p);
    if (!in) throw FormatError("cannot open dataset '" + p.string() + "'");

    std::vector<DatasetRecord> records;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (strip(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(p.string() + " line " + std::to_string(line_no) +
                              ": invalid JSON: " + e.what());
        }
        auto need = [&](const char* field) {
            if (!j.contains(field)) {
                throw FormatError(p.string() + " line " + std::to_string(line_no) +
                                  ": missing required field '" + field + "'");
            }
        };
        need("id");
        need("prompt");
        need("task_kind");
        need("domain_tag");
        DatasetRecord r;
        r.id = j["id"].get<std::string>();
        r.prompt = j["prompt"].get<std::string>();
        r.task_kind = task_kind_from_string(j["task_kind"].get<std::string>());
        r.domain_tag = j["domain_tag"].get<std::string>();
        if (j.contains("gold") && !j["gold"].is_null()) {
            if (j["gold"].is_string()) {
                r.gold.push_back(j["gold"].get<std::string>());
            } else {
                r.gold = j["gold"].get<std::vector<std::string>>();
            }
        }
        if (r.objective() && r.gold.empty()) {
            throw FormatError(p.string() + " line " + std::to_string(line_no) +
                              ": objective record '" + r.id + "' has no gold answer");
        }
        if (!r.objective() && !r.gold.empty()) {
            throw FormatError(p.string() + " line " + std::to_string(line_no) +
                              ": open-ended record '" + r.id + "' must not carry gold");
        }
        if (!seen.insert(r.id).second) {
            throw FormatError(p.string() + " line " + std::to_string(line_no) +
                              ": duplicate record id '" + r.id + "'");
        }
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<DatasetRecord> downsample(const std::vector<DatasetRecord>& records, int cap,
                                      std::uint64_t seed) {
    if (cap <= 0) throw ArgumentError("downsample cap must be positive");
    if (static_cast<int>(records.size()) <= cap) return records;
    std::vector<std::size_t> indices(records.size());
    std::iota(indices.begin(), indices.end(), 0);
    Rng rng(seed);
    // Fisher-Yates prefix; the first `cap` entries are a uniform sample.
    for (std::size_t i = 0; i < static_cast<std::size_t>(cap); ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng.below(indices.size() - i));
        std::swap(indices[i], indices[j]);
    }
    indices.resize(cap);
    std::sort(indices.begin(), indices.end());
    std::vector<DatasetRecord> out;
    out.reserve(cap);
    for (std::size_t idx : indices) out.push_back(records[idx]);
    return out;
}

namespace {

std::string normalize_number(std::string num) {
    num.erase(std::remove(num.begin(), num.end(), ','), num.end());
    bool negative = false;
    if (!num.empty() && num[0] == '-') {
        negative = true;
        num.erase(num.begin());
    }
    if (num.find('.') != std::string::npos) {
        while (!num.empty() && num.back() == '0') num.pop_back();
        if (!num.empty() && num.back() == '.') num.pop_back();
    }
    std::size_t first = 0;
    while (first + 1 < num.size() && num[first] == '0' && num[first + 1] != '.') ++first;
    num = num.substr(first);
    if (num.empty() || num == "0") return "0";
    return negative ? "-" + num : num;
}

std::optional<std::string> last_number(const std::string& text) {
    static const std::regex kNumber(R"(-?\d[\d,]*(\.\d+)?)");
    auto begin = std::sregex_iterator(text.begin(), text.end(), kNumber);
    auto end = std::sregex_iterator();
    std::optional<std::string> found;
    for (auto it = begin; it != end; ++it) found = it->str();
    return found;
}

std::optional<std::string> last_option_letter(const std::string& text) {
    std::optional<std::string> found;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c < 'A' || c > 'E') continue;
        bool left_ok = i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1]));
        bool right_ok =
            i + 1 >= text.size() || !std::isalnum(static_cast<unsigned char>(text[i + 1]));
        if (left_ok && right_ok) found = std::string(1, c);
    }
    return found;
}

std::string final_line(const std::string& text) {
    auto lines = split_lines(text);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        std::string s = strip(*it);
        if (!s.empty()) return to_lower(s);
    }
    return "";
}

}  // namespace

std::string extract_answer(const std::string& raw, TaskKind kind) {
    if (strip(raw).empty()) return kNoAnswer;
    switch (kind) {
        case TaskKind::multiple_choice: {
            auto letter = last_option_letter(raw);
            return letter ? *letter : kNoAnswer;
        }
        case TaskKind::exact_match:
        case TaskKind::code: {
            if (auto num = last_number(raw)) return normalize_number(*num);
            std::string line = final_line(raw);
            return line.empty() ? kNoAnswer : line;
        }
        case TaskKind::open_ended:
            return strip(raw);
    }
    return kNoAnswer;
}

ScoreResult score_instance(const DatasetRecord& record, const std::string& output,
                           ModelBackend* judge, const PromptLibrary& prompts,
                           std::uint64_t seed) {
    if (record.objective()) {
        const std::string extracted = extract_answer(output, record.task_kind);
        if (extracted == kNoAnswer) return {0.0, false};
        for (const auto& g : record.gold) {
            std::string want = extract_answer(g, record.task_kind);
            if (want == kNoAnswer) want = to_lower(strip(g));
            if (extracted == want) return {1.0, false};
        }
        return {0.0, false};
    }
    if (!judge) throw ArgumentError("open-ended instance '" + record.id + "' needs a judge");
    GenerationParams params;
    params.seed = seed;
    params.temperature = 0.0;
    const std::string prompt =
        prompts.render("judge_score", {{"prompt", record.prompt}, {"response", output}});
    GenerationOutput verdict = generate(*judge, prompt, params);
    auto num = last_number(verdict.text);
    if (!num) return {0.0, true};
    double s = std::stod(normalize_number(*num));
    s = std::clamp(s, 1.0, 10.0);
    return {(s - 1.0) / 9.0, false};
}

ScoreReport domain_macro_average(const std::vector<DatasetScore>& inputs) {
    ScoreReport report;
    bool if_seen = false;
    for (const DatasetScore& in : inputs) {
        DatasetScore d = in;
        if (d.domain == "IF") {
            if (!d.if_min || !d.if_max) {
                throw ArgumentError("IF dataset '" + d.dataset +
                                    "' needs min/max over the compared systems");
            }
            if_seen = true;
            d.value = (*d.if_max == *d.if_min) ? 0.5
                                               : (d.value - *d.if_min) / (*d.if_max - *d.if_min);
        }
        report.datasets.push_back(d);
    }
    std::vector<std::string> domain_order;
    std::map<std::string, std::pair<double, int>> sums;
    for (const auto& d : report.datasets) {
        if (!sums.count(d.domain)) domain_order.push_back(d.domain);
        auto& [sum, count] = sums[d.domain];
        sum += d.value;
        count += 1;
    }
    double total = 0.0;
    for (const auto& name : domain_order) {
        const auto& [sum, count] = sums[name];
        const double avg = sum / count;
        report.per_domain.emplace_back(name, avg);
        total += avg;
    }
    report.overall = domain_order.empty() ? 0.0 : total / domain_order.size();
    report.normalization_note =
        if_seen ? "IF min-max standardized to 0-1 before macro-averaging" : "raw macro-average";
    return report;
}

std::optional<double> collaborative_emergence(const CorrectnessMatrix& matrix) {
    const std::vector<bool>* system = matrix.find_row(kSystemRow);
    if (!system) throw ArgumentError("correctness matrix has no '" + kSystemRow + "' row");
    if (matrix.rows().size() < 2) {
        throw ArgumentError("correctness matrix needs at least one individual row");
    }
    std::size_t unsolvable = 0;
    std::size_t emerged = 0;
    for (std::size_t col = 0; col < matrix.instance_ids().size(); ++col) {
        bool any_individual = false;
        for (const auto& [id, bits] : matrix.rows()) {
            if (id == kSystemRow) continue;
            if (bits[col]) {
                any_individual = true;
                break;
            }
        }
        if (any_individual) continue;
        ++unsolvable;
        if ((*system)[col]) ++emerged;
    }
    if (unsolvable == 0) return std::nullopt;
    return static_cast<double>(emerged) / static_cast<double>(unsolvable);
}

LeaveOneOutReport leave_one_out(const std::function<double(const ModelPool&)>& run_method,
                                const ModelPool& pool) {
    if (pool.size() < 2) throw ArgumentError("leave-one-out needs a pool of at least 2");
    LeaveOneOutReport report;
    std::vector<double> present;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        LeaveOneOutReport::Entry entry;
        entry.omitted_id = pool.at(i).descriptor().id;
        try {
            entry.score = run_method(pool.without(i));
            present.push_back(*entry.score);
        } catch (const Error&) {
            report.has_missing = true;
        }
        report.entries.push_back(std::move(entry));
    }
    if (!present.empty()) {
        double sum = std::accumulate(present.begin(), present.end(), 0.0);
        report.mean = sum / present.size();
        const bool all_equal =
            std::all_of(present.begin(), present.end(), [&](double v) { return v == present[0]; });
        if (all_equal) {
            report.mean = present[0];  // keep identical inputs exactly
        } else {
            double sq = 0.0;
            for (double v : present) sq += (v - report.mean) * (v - report.mean);
            report.std_population = std::sqrt(sq / present.size());
            report.std_sample = present.size() > 1 ? std::sqrt(sq / (present.size() - 1)) : 0.0;
        }
    }
    return report;
}

ModelPool build_diversity_pool(const ModelPool& unique_models, int a, int b) {
    if (a <= 0 || b <= 0) throw ArgumentError("diversity pool needs a > 0 and b > 0");
    if (a > static_cast<int>(unique_models.size())) {
        throw ArgumentError("diversity pool asks for " + std::to_string(a) +
                            " unique models but only " + std::to_string(unique_models.size()) +
                            " exist");
    }
    ModelPool out;
    for (int i = 0; i < a; ++i) {
        const BackendPtr& base = unique_models.ptr(i);
        if (b == 1) {
            out.push_back(base);
            continue;
        }
        for (int k = 1; k <= b; ++k) {
            ModelDescriptor d = base->descriptor();
            d.id += "#" + std::to_string(k);
            d.display_name += " (replica " + std::to_string(k) + ")";
            out.push_back(std::make_shared<AliasBackend>(std::move(d), base));
        }
    }
    return out;
}

std::vector<std::string> select_models_prompt(ModelBackend& selector,
                                              const std::vector<ModelDescriptor>& candidates,
                                              int m, const std::string& task,
                                              const PromptLibrary& prompts, std::uint64_t seed) {
    if (m < 0 || m > static_cast<int>(candidates.size())) {
        throw ArgumentError("cannot select " + std::to_string(m) + " of " +
                            std::to_string(candidates.size()) + " candidates");
    }
    std::string block;
    for (const auto& c : candidates) block += "- " + c.id + ": " + c.description + "\n";
    GenerationParams params;
    params.seed = seed;
    const std::string prompt = prompts.render(
        "select_models", {{"task", task}, {"candidates", block}, {"m", std::to_string(m)}});
    GenerationOutput out = generate(selector, prompt, params);

    std::vector<std::string> chosen;
    auto push_unique = [&](const std::string& id) {
        if (std::find(chosen.begin(), chosen.end(), id) == chosen.end() &&
            static_cast<int>(chosen.size()) < m) {
            chosen.push_back(id);
        }
    };
    // Ids in order of first whole-token appearance in the selector's reply.
    std::vector<std::pair<std::size_t, std::string>> hits;
    for (const auto& c : candidates) {
        const std::size_t pos = find_whole_token(out.text, c.id);
        if (pos != std::string::npos) hits.emplace_back(pos, c.id);
    }
    std::stable_sort(hits.begin(), hits.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    for (const auto& [pos, id] : hits) push_unique(id);
    for (const auto& c : candidates) push_unique(c.id);  // fill by candidate order
    return chosen;
}

SelectionResult select_models_similarity(ModelBackend& embedder,
                                         const std::vector<ModelDescriptor>& candidates, int m) {
    const int n = static_cast<int>(candidates.size());
    if (m < 0 || m > n) {
        throw ArgumentError("cannot select " + std::to_string(m) + " of " + std::to_string(n) +
                            " candidates");
    }
    SelectionResult result;
    if (m == 0) return result;

    std::vector<std::vector<double>> emb;
    emb.reserve(n);
    for (const auto& c : candidates) emb.push_back(embed_text(embedder, c.description));
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            dist[i][j] = dist[j][i] = cosine_distance(emb[i], emb[j]);
        }
    }

    // C(n, m) with early saturation at the enumeration bound.
    const double kBound = 1e5;
    double combos = 1.0;
    for (int i = 0; i < m && combos <= kBound; ++i) combos = combos * (n - i) / (i + 1);

    auto subset_ids = [&](const std::vector<int>& subset) {
        std::vector<std::string> ids;
        for (int idx : subset) ids.push_back(candidates[idx].id);
        return ids;
    };

    if (combos <= kBound) {
        std::vector<int> subset(m);
        std::iota(subset.begin(), subset.end(), 0);
        std::vector<int> best;
        double best_score = -1.0;
        std::vector<std::string> best_ids;
        while (true) {
            double score = 0.0;
            for (int i = 0; i < m; ++i) {
                for (int j = i + 1; j < m; ++j) score += dist[subset[i]][subset[j]];
            }
            auto ids = subset_ids(subset);
            std::vector<std::string> sorted_ids = ids;
            std::sort(sorted_ids.begin(), sorted_ids.end());
            if (score > best_score + 1e-15 ||
                (std::abs(score - best_score) <= 1e-15 &&
                 (best.empty() || sorted_ids < best_ids))) {
                best = subset;
                best_score = score;
                best_ids = sorted_ids;
            }
            // Next combination in lexicographic order.
            int i = m - 1;
            while (i >= 0 && subset[i] == n - m + i) --i;
            if (i < 0) break;
            ++subset[i];
            for (int j = i + 1; j < m; ++j) subset[j] = subset[j - 1] + 1;
        }
        result.ids = subset_ids(best);
        return result;
    }

    // Greedy farthest-point fallback, flagged.
    result.exhaustive = false;
    std::vector<int> chosen;
    int a = 0, b = 1;
    double best_pair = -1.0;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (dist[i][j] > best_pair) {
                best_pair = dist[i][j];
                a = i;
                b = j;
            }
        }
    }
    chosen = m == 1 ? std::vector<int>{a} : std::vector<int>{a, b};
    while (static_cast<int>(chosen.size()) < m) {
        int best_idx = -1;
        double best_gain = -1.0;
        for (int i = 0; i < n; ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            double gain = 0.0;
            for (int c : chosen) gain += dist[i][c];
            if (gain > best_gain) {
                best_gain = gain;
                best_idx = i;
            }
        }
        chosen.push_back(best_idx);
    }
    std::sort(chosen.begin(), chosen.end());
    result.ids = subset_ids(chosen);
    return result;
}

}  // namespace chorus
