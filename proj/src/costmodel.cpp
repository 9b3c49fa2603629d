#include "chorus/costmodel.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>

#include "chorus/errors.hpp"

namespace chorus {

namespace {

// Parameter accessors that fail loudly, naming the missing input.
struct Inputs {
    const CostParams& p;
    const std::string& method;

    double need(const std::optional<double>& v, const char* name) const {
        if (!v) {
            throw ArgumentError("cost estimate for '" + method + "' needs parameter '" + name +
                                "'");
        }
        if (*v < 0.0) throw ArgumentError(std::string("parameter '") + name + "' is negative");
        return *v;
    }
    const std::vector<double>& k() const {
        if (p.model_params.empty()) {
            throw ArgumentError("cost estimate for '" + method + "' needs parameter 'k'");
        }
        return p.model_params;
    }
    double D() const { return need(p.dataset_size, "D"); }
    double m() const { return need(p.max_tokens, "m"); }
    double n() const { return static_cast<double>(k().size()); }
    double max_k() const { return *std::max_element(k().begin(), k().end()); }
    double min_k() const { return *std::min_element(k().begin(), k().end()); }
    double mean_k() const {
        return std::accumulate(k().begin(), k().end(), 0.0) / k().size();
    }
    double r() const { return need(p.rounds, "r"); }
    double patch() const {
        const double v = need(p.patch_size, "patch");
        if (v <= 0.0) throw ArgumentError("parameter 'patch' must be positive");
        return v;
    }
    double G() const { return need(p.graph_count, "G"); }
    double s() const { return need(p.sample_size, "s"); }
    double f() const { return need(p.feedback_count, "f"); }
    double k_r() const { return need(p.router_params, "k_r"); }
    double k_s() const { return need(p.switcher_params, "k_s"); }
    double k_f() const { return need(p.fuser_params, "k_f"); }

    // sum_i k_i * prod_{j<i} d_j with d_j = 0.5 unless measured rates are
    // supplied ("each level defers 50%").
    double cascade_sum() const {
        const auto& ks = k();
        double sum = 0.0;
        double carry = 1.0;
        for (std::size_t i = 0; i < ks.size(); ++i) {
            if (i > 0) {
                double d = 0.5;
                if (p.deferral_rates) {
                    if (p.deferral_rates->size() < ks.size() - 1) {
                        throw ArgumentError("cascade needs a deferral rate per non-final level");
                    }
                    d = (*p.deferral_rates)[i - 1];
                    if (d < 0.0 || d > 1.0) {
                        throw ArgumentError("deferral rates must lie in [0,1]");
                    }
                }
                carry *= d;
            }
            sum += ks[i] * carry;
        }
        return sum;
    }
};

using Formula = std::function<double(const Inputs&)>;

struct Row {
    std::optional<Formula> train;  // nullopt renders as "/" (not applicable)
    std::optional<Formula> infer;
};

const std::map<std::string, Row>& rows() {
    static const std::map<std::string, Row> kRows = [] {
        std::map<std::string, Row> t;
        auto F = [](double (*fn)(const Inputs&)) { return Formula(fn); };

        t["cascade"] = {std::nullopt,
                        F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.cascade_sum(); })};
        t["graph_router"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.max_k(); })};
        t["prompt_routing"] = {
            std::nullopt,
            F(+[](const Inputs& c) { return 2 * c.D() * c.m() * (c.k_r() + c.max_k()); })};
        t["trained_router"] = {
            F(+[](const Inputs& c) {
                return 2 * c.n() * c.D() * c.m() * c.max_k() + 6 * c.r() * c.D() * c.m() * c.k_r();
            }),
            F(+[](const Inputs& c) { return 2 * c.D() * c.m() * (c.k_r() + c.max_k()); })};
        t["switch_generation"] = {
            F(+[](const Inputs& c) { return 6 * c.r() * c.D() * c.m() * c.k_s(); }),
            F(+[](const Inputs& c) {
                return 2 * c.D() * c.m() * (c.k_s() / c.patch() + c.max_k());
            })};
        t["mentor_collab"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.mean_k(); })};
        t["co_llm"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.mean_k(); })};
        t["nudging"] = {std::nullopt,
                        F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.max_k(); })};

        t["hetero_swarms"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.G() * c.r() * c.D() * c.m() * c.max_k(); })};
        t["knowledge_card"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); })};
        t["llm_blender"] = {
            F(+[](const Inputs& c) {
                return 2 * c.n() * c.D() * c.m() * c.max_k() +
                       6 * c.r() * c.D() * c.m() * (c.n() * c.n() * c.k_r() + c.k_f());
            }),
            F(+[](const Inputs& c) {
                return 2 * c.n() * c.D() * c.m() * c.max_k() +
                       2 * c.D() * c.m() * (c.k_r() + c.k_f());
            })};
        t["majority_vote"] = {
            std::nullopt,
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); })};
        t["multiagent_debate"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.n() * c.r() * c.D() * c.m() * c.max_k(); })};
        t["multiagent_feedback"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) {
                return 2 * c.n() * c.r() * c.f() * c.D() * c.m() * c.max_k();
            })};
        t["multiagent_finetuning"] = {
            F(+[](const Inputs& c) {
                return 2 * c.n() * c.D() * c.m() * c.max_k() +
                       6 * c.n() * c.r() * c.D() * c.m() * 2 * c.max_k();
            }),
            F(+[](const Inputs& c) { return 2 * c.n() * c.r() * c.D() * c.m() * c.max_k(); })};
        t["structured_interaction"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.G() * c.r() * c.D() * c.m() * c.max_k(); })};
        t["agglm"] = {
            F(+[](const Inputs& c) {
                return 2 * c.n() * c.s() * c.D() * c.m() * c.max_k() +
                       6 * c.r() * c.D() * c.m() * c.min_k();
            }),
            F(+[](const Inputs& c) {
                return 2 * c.D() * c.m() * (c.n() * c.max_k() + c.min_k());
            })};
        t["sparta"] = {
            F(+[](const Inputs& c) {
                return 2 * c.n() * c.D() * c.m() * c.max_k() +
                       6 * c.n() * c.r() * c.D() * c.m() * c.max_k();
            }),
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); })};

        t["logit_fusion"] = {
            std::nullopt,
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); })};
        t["logit_contrastive"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); })};

        t["dare_ties"] = {std::nullopt,
                          F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.max_k(); })};
        t["greedy_soup"] = {
            F(+[](const Inputs& c) {
                return 2 * (2 * c.n() - 1) * c.D() * c.m() * c.max_k();
            }),
            F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.max_k(); })};
        t["lorahub"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.max_k(); })};
        t["model_swarms"] = {
            F(+[](const Inputs& c) { return 2 * c.n() * c.r() * c.D() * c.m() * c.max_k(); }),
            F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.max_k(); })};
        t["expo"] = {F(+[](const Inputs& c) { return 2 * c.n() * c.D() * c.m() * c.max_k(); }),
                     F(+[](const Inputs& c) { return 2 * c.D() * c.m() * c.max_k(); })};
        return t;
    }();
    return kRows;
}

// Methods the engine runs that have no published complexity row.
const std::vector<std::string>& unlisted_methods() {
    static const std::vector<std::string> kUnlisted = {"bbmas", "single"};
    return kUnlisted;
}

}  // namespace

CostEstimate estimate_flops(const std::string& method, CostPhase phase,
                            const CostParams& params) {
    const auto& table = rows();
    auto it = table.find(method);
    if (it == table.end()) {
        if (std::find(unlisted_methods().begin(), unlisted_methods().end(), method) !=
            unlisted_methods().end()) {
            return {0.0, false, true};
        }
        throw ArgumentError("unknown method '" + method + "' in the cost model");
    }
    const auto& formula = phase == CostPhase::train ? it->second.train : it->second.infer;
    if (!formula) return {0.0, true, false};
    Inputs inputs{params, method};
    return {(*formula)(inputs), false, false};
}

const std::vector<std::string>& cost_model_methods() {
    static const std::vector<std::string> kAll = [] {
        std::vector<std::string> all;
        for (const auto& [name, row] : rows()) all.push_back(name);
        for (const auto& name : unlisted_methods()) all.push_back(name);
        std::sort(all.begin(), all.end());
        return all;
    }();
    return kAll;
}

bool cost_model_has(const std::string& method) {
    return rows().count(method) > 0 ||
           std::find(unlisted_methods().begin(), unlisted_methods().end(), method) !=
               unlisted_methods().end();
}

}  // namespace chorus
