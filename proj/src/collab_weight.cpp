#include "chorus/collab_weight.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "chorus/errors.hpp"

namespace chorus {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_same_schema(const TensorMap& a, const TensorMap& b, const char* what) {
    if (!a.same_schema(b)) {
        throw ShapeError(std::string(what) + ": tensor maps have different name/shape sets");
    }
}

TensorMap uniform_average(const std::vector<const TensorMap*>& maps) {
    TensorMap out = *maps[0];
    const double w = 1.0 / maps.size();
    for (auto& [name, t] : out.entries()) {
        for (double& v : t.values) v *= w;
    }
    for (std::size_t i = 1; i < maps.size(); ++i) {
        require_same_schema(*maps[0], *maps[i], "average");
        for (auto& [name, t] : out.entries()) {
            const auto& src = maps[i]->at(name).values;
            for (std::size_t e = 0; e < t.values.size(); ++e) t.values[e] += w * src[e];
        }
    }
    return out;
}

}  // namespace

TensorMap linear_combine(const std::vector<TensorMap>& maps, const std::vector<double>& weights) {
    if (maps.empty()) throw ArgumentError("linear_combine needs at least one map");
    if (maps.size() != weights.size()) {
        throw ArgumentError("linear_combine got " + std::to_string(maps.size()) + " maps but " +
                            std::to_string(weights.size()) + " weights");
    }
    TensorMap out = maps[0];
    for (auto& [name, t] : out.entries()) {
        for (double& v : t.values) v *= weights[0];
    }
    for (std::size_t i = 1; i < maps.size(); ++i) {
        require_same_schema(maps[0], maps[i], "linear_combine");
        for (auto& [name, t] : out.entries()) {
            const auto& src = maps[i].at(name).values;
            for (std::size_t e = 0; e < t.values.size(); ++e) t.values[e] += weights[i] * src[e];
        }
    }
    return out;
}

SoupResult greedy_soup(const std::vector<TensorMap>& pool, const MapEvaluator& evaluator,
                       const std::vector<std::string>& labels) {
    if (pool.empty()) throw ArgumentError("greedy_soup needs a nonempty pool");
    for (const auto& m : pool) require_same_schema(pool[0], m, "greedy_soup");

    std::vector<double> scores(pool.size(), kNegInf);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        try {
            scores[i] = evaluator(pool[i]);
        } catch (const std::exception&) {
        }
    }
    std::vector<int> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });
    if (!std::isfinite(scores[order[0]])) {
        throw ArgumentError("greedy_soup: the evaluator failed on every pool member");
    }

    auto label_of = [&](int idx) {
        return idx < static_cast<int>(labels.size()) ? labels[idx]
                                                     : "model[" + std::to_string(idx) + "]";
    };

    SoupResult result;
    std::vector<const TensorMap*> members{&pool[order[0]]};
    result.score = scores[order[0]];
    result.decisions.push_back({label_of(order[0]), order[0], true, scores[order[0]]});
    for (std::size_t r = 1; r < order.size(); ++r) {
        const int idx = order[r];
        SoupResult::Decision decision{label_of(idx), idx, false, std::nullopt};
        members.push_back(&pool[idx]);
        try {
            const TensorMap candidate = uniform_average(members);
            const double candidate_score = evaluator(candidate);
            decision.candidate_score = candidate_score;
            if (candidate_score > result.score) {  // strict improvement keeps it
                decision.included = true;
                result.score = candidate_score;
            }
        } catch (const std::exception&) {
            // evaluator failure rejects the candidate; decision stays logged
        }
        if (!decision.included) members.pop_back();
        result.decisions.push_back(std::move(decision));
    }
    result.soup = uniform_average(members);
    return result;
}

WeightDelta dare_prune(const WeightDelta& delta, double drop_rate, std::uint64_t seed) {
    if (drop_rate < 0.0 || drop_rate >= 1.0) {
        throw ArgumentError("DARE drop rate must lie in [0,1)");
    }
    WeightDelta out = delta;
    if (drop_rate == 0.0) return out;
    Rng rng(seed);
    const double scale = 1.0 / (1.0 - drop_rate);
    for (auto& [name, t] : out.delta.entries()) {
        for (double& v : t.values) {
            v = rng.uniform() < drop_rate ? 0.0 : v * scale;
        }
    }
    return out;
}

WeightDelta ties_merge(const std::vector<WeightDelta>& deltas, double density) {
    if (deltas.empty()) throw ArgumentError("ties_merge needs at least one delta");
    if (density <= 0.0) throw ArgumentError("ties_merge density must be positive");
    for (const auto& d : deltas) {
        require_same_schema(deltas[0].delta, d.delta, "ties_merge");
    }
    WeightDelta out;
    out.base_id = deltas[0].base_id;
    out.delta = deltas[0].delta;
    for (auto& [name, t] : out.delta.entries()) {
        for (std::size_t e = 0; e < t.values.size(); ++e) {
            double sum = 0.0;
            for (const auto& d : deltas) sum += d.delta.at(name).values[e];
            const double elected = sum < 0.0 ? -1.0 : 1.0;  // exact ties elect +
            double acc = 0.0;
            int matches = 0;
            for (const auto& d : deltas) {
                const double v = d.delta.at(name).values[e];
                if (v * elected > 0.0) {
                    acc += v;
                    ++matches;
                }
            }
            t.values[e] = matches == 0 ? 0.0 : density * acc / matches;
        }
    }
    return out;
}

TensorMap dare_ties(const TensorMap& base, const std::vector<TensorMap>& finetuned,
                    double drop_rate, double density, std::uint64_t seed) {
    if (finetuned.empty()) throw ArgumentError("dare_ties needs at least one fine-tuned model");
    std::vector<WeightDelta> deltas;
    deltas.reserve(finetuned.size());
    for (std::size_t i = 0; i < finetuned.size(); ++i) {
        require_same_schema(base, finetuned[i], "dare_ties");
        WeightDelta d;
        d.delta = linear_combine({finetuned[i], base}, {1.0, -1.0});
        deltas.push_back(dare_prune(d, drop_rate, seed + i));
    }
    const WeightDelta merged = ties_merge(deltas, density);
    return linear_combine({base, merged.delta}, {1.0, 1.0});
}

TensorMap expo(const std::vector<TensorMap>& pool, const MapEvaluator& evaluator, int k,
               double alpha) {
    const int n = static_cast<int>(pool.size());
    if (k < 1 || 2 * k > n) {
        throw ArgumentError("expo needs 1 <= k and 2k <= pool size (" + std::to_string(n) + ")");
    }
    for (const auto& m : pool) require_same_schema(pool[0], m, "expo");

    std::vector<double> scores(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) scores[i] = evaluator(pool[i]);
    std::vector<int> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[a] > scores[b]; });

    std::vector<const TensorMap*> top, bottom;
    for (int i = 0; i < k; ++i) top.push_back(&pool[order[i]]);
    for (int i = n - k; i < n; ++i) bottom.push_back(&pool[order[i]]);
    const TensorMap x_top = uniform_average(top);
    const TensorMap x_bottom = uniform_average(bottom);
    return linear_combine({x_top, x_bottom}, {1.0 + alpha, -alpha});
}

PSOState pso_init(std::vector<TensorMap> particles, const PsoParams& hyper, std::uint64_t seed) {
    if (particles.empty()) throw ArgumentError("PSO needs at least one particle");
    for (const auto& p : particles) require_same_schema(particles[0], p, "pso_init");
    PSOState state(seed);
    state.hyper = hyper;
    state.velocities.reserve(particles.size());
    for (const auto& p : particles) {
        TensorMap v = p;
        for (auto& [name, t] : v.entries()) {
            std::fill(t.values.begin(), t.values.end(), 0.0);
        }
        state.velocities.push_back(std::move(v));
    }
    // Bests start at the initial positions with -infinity utility so the
    // move step always has valid attraction targets.
    state.personal_bests.resize(particles.size());
    for (std::size_t i = 0; i < particles.size(); ++i) {
        state.personal_bests[i].position = particles[i];
    }
    state.global_best.position = particles[0];
    state.particles = std::move(particles);
    return state;
}

void pso_update_bests(PSOState& state, const std::vector<double>& utilities) {
    if (utilities.size() != state.particles.size()) {
        throw ArgumentError("PSO got " + std::to_string(utilities.size()) + " utilities for " +
                            std::to_string(state.particles.size()) + " particles");
    }
    for (std::size_t i = 0; i < state.particles.size(); ++i) {
        double u = utilities[i];
        if (!std::isfinite(u)) u = kNegInf;
        if (u > state.personal_bests[i].utility) {
            state.personal_bests[i] = {state.particles[i], u};
        }
    }
    for (const auto& pb : state.personal_bests) {
        if (pb.utility > state.global_best.utility) state.global_best = pb;
    }
}

void pso_step(PSOState& state, const std::vector<double>& utilities) {
    pso_update_bests(state, utilities);
    const auto& h = state.hyper;
    for (std::size_t i = 0; i < state.particles.size(); ++i) {
        TensorMap& x = state.particles[i];
        TensorMap& v = state.velocities[i];
        const TensorMap& pb = state.personal_bests[i].position;
        const TensorMap& gb = state.global_best.position;
        for (auto& [name, vt] : v.entries()) {
            auto& xt = x.entries()[name];
            const auto& pbt = pb.at(name).values;
            const auto& gbt = gb.at(name).values;
            for (std::size_t e = 0; e < vt.values.size(); ++e) {
                const double r1 = state.rng.uniform();
                const double r2 = state.rng.uniform();
                vt.values[e] = h.inertia * vt.values[e] +
                               h.cognitive * r1 * (pbt[e] - xt.values[e]) +
                               h.social * r2 * (gbt[e] - xt.values[e]);
                xt.values[e] += vt.values[e];
            }
        }
    }
}

TensorMap model_swarms_search(const std::vector<TensorMap>& pool, const MapEvaluator& evaluator,
                              int iterations, const PsoParams& hyper, std::uint64_t seed) {
    if (pool.empty()) throw ArgumentError("model swarms needs a nonempty pool");
    if (iterations < 0) throw ArgumentError("iterations must be non-negative");

    const CachedEvaluator cached(evaluator);
    auto evaluate_all = [&](const std::vector<TensorMap>& particles) {
        std::vector<double> utils;
        utils.reserve(particles.size());
        for (const auto& p : particles) {
            try {
                utils.push_back(cached(p));
            } catch (const std::exception&) {
                utils.push_back(kNegInf);
            }
        }
        return utils;
    };

    PsoParams params = hyper;
    params.particles = static_cast<int>(pool.size());
    PSOState state = pso_init(pool, params, seed);
    std::vector<double> utils = evaluate_all(state.particles);
    for (int t = 0; t < iterations; ++t) {
        pso_step(state, utils);
        utils = evaluate_all(state.particles);
    }
    pso_update_bests(state, utils);
    if (!std::isfinite(state.global_best.utility)) {
        throw ArgumentError("model swarms: the evaluator failed for every particle");
    }
    return state.global_best.position;
}

LorahubResult lorahub_compose(const TensorMap& base, const std::vector<WeightDelta>& adapters,
                              const MapEvaluator& evaluator, int budget, std::uint64_t seed) {
    if (adapters.empty()) throw ArgumentError("lorahub needs at least one adapter");
    for (const auto& a : adapters) require_same_schema(base, a.delta, "lorahub");
    if (budget < 0) throw ArgumentError("budget must be non-negative");

    const int n = static_cast<int>(adapters.size());
    auto compose = [&](const std::vector<double>& w) {
        std::vector<TensorMap> maps{base};
        std::vector<double> coeffs{1.0};
        for (int i = 0; i < n; ++i) {
            maps.push_back(adapters[i].delta);
            coeffs.push_back(w[i]);
        }
        return linear_combine(maps, coeffs);
    };

    const CachedEvaluator cached(evaluator, "lorahub");
    LorahubResult result;
    result.weights.assign(n, 1.0 / n);
    result.composed = compose(result.weights);
    if (budget == 0) {
        result.utility = cached(result.composed);
        return result;
    }

    Rng rng(seed);
    double best_utility = cached(result.composed);
    int used = 1;
    double step = 0.5;
    std::vector<double> incumbent = result.weights;
    while (used < budget) {
        std::vector<double> trial = incumbent;
        for (double& w : trial) {
            w = std::clamp(w + step * rng.gaussian(), -1.5, 1.5);
        }
        const double u = cached(compose(trial));
        ++used;
        if (u > best_utility) {
            best_utility = u;
            incumbent = trial;
        }
        step = std::max(step * 0.97, 0.01);
    }
    result.weights = incumbent;
    result.composed = compose(incumbent);
    result.utility = best_utility;
    return result;
}

CachedEvaluator::CachedEvaluator(MapEvaluator inner, std::string dataset_id)
    : inner_(std::move(inner)), dataset_id_(std::move(dataset_id)) {}

double CachedEvaluator::operator()(const TensorMap& map) const {
    const std::uint64_t key = fnv1a_combine(map.content_hash(), fnv1a(dataset_id_));
    auto it = cache_.find(key);
    if (it != cache_.end()) {
        ++hits_;
        return it->second;
    }
    const double value = inner_(map);
    ++misses_;
    cache_[key] = value;
    return value;
}

}  // namespace chorus
