#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chorus/tensor.hpp"
#include "chorus/util.hpp"

namespace chorus {

using MapEvaluator = std::function<double(const TensorMap&)>;

// Elementwise sum of w_i * map_i over maps sharing one name/shape set.
TensorMap linear_combine(const std::vector<TensorMap>& maps, const std::vector<double>& weights);

struct SoupResult {
    TensorMap soup;
    struct Decision {
        std::string note;  // model label in evaluation order
        int pool_index = 0;
        bool included = false;
        std::optional<double> candidate_score;  // empty when the evaluator failed
    };
    std::vector<Decision> decisions;
    double score = 0.0;
};

// Models sorted by dev score join the running average only when they
// strictly improve it.
SoupResult greedy_soup(const std::vector<TensorMap>& pool, const MapEvaluator& evaluator,
                       const std::vector<std::string>& labels = {});

// Zeroes each element with probability p (seeded) and rescales survivors by
// 1/(1-p); preserves the expectation.
WeightDelta dare_prune(const WeightDelta& delta, double drop_rate, std::uint64_t seed);

// Per-element sign election by signed sum (exact ties elect +), then
// lambda times the mean of sign-consistent values.
WeightDelta ties_merge(const std::vector<WeightDelta>& deltas, double density);

// DARE-prunes each fine-tuned-minus-base delta, TIES-merges, adds back.
TensorMap dare_ties(const TensorMap& base, const std::vector<TensorMap>& finetuned,
                    double drop_rate, double density, std::uint64_t seed);

// Ranks by dev score and extrapolates from the bottom-k merge through the
// top-k merge: top + alpha * (top - bottom).
TensorMap expo(const std::vector<TensorMap>& pool, const MapEvaluator& evaluator, int k,
               double alpha);

struct PsoParams {
    int particles = 8;
    int iterations = 10;
    double inertia = 0.7;
    double cognitive = 1.5;
    double social = 1.5;
};

struct PSOState {
    struct Best {
        TensorMap position;
        double utility = -std::numeric_limits<double>::infinity();
    };
    std::vector<TensorMap> particles;
    std::vector<TensorMap> velocities;
    std::vector<Best> personal_bests;
    Best global_best;
    PsoParams hyper;
    Rng rng;

    explicit PSOState(std::uint64_t seed) : rng(seed) {}
};

PSOState pso_init(std::vector<TensorMap> particles, const PsoParams& hyper, std::uint64_t seed);

// Folds utilities into personal/global bests. Non-finite utilities count as
// -infinity. Global best utility is non-decreasing across calls.
void pso_update_bests(PSOState& state, const std::vector<double>& utilities);

// Bests update followed by the velocity/position move:
//   v <- w v + c1 r1 (pbest - x) + c2 r2 (gbest - x);  x <- x + v
// with r1, r2 seeded uniforms per element.
void pso_step(PSOState& state, const std::vector<double>& utilities);

// Particles initialized at the pool members (velocities zero); returns the
// global-best map after `iterations` evaluate-step rounds. Evaluator calls
// are memoized by content hash.
TensorMap model_swarms_search(const std::vector<TensorMap>& pool, const MapEvaluator& evaluator,
                              int iterations, const PsoParams& hyper, std::uint64_t seed);

struct LorahubResult {
    std::vector<double> weights;
    TensorMap composed;
    double utility = 0.0;
};

// Derivative-free search for scalar adapter weights in [-1.5, 1.5]^n by
// seeded perturbation of the incumbent with shrinking step; `budget` bounds
// evaluator calls. Budget 0 returns uniform weights 1/n without search.
LorahubResult lorahub_compose(const TensorMap& base, const std::vector<WeightDelta>& adapters,
                              const MapEvaluator& evaluator, int budget, std::uint64_t seed);

// Memoizes a deterministic evaluator by tensor-map content hash.
class CachedEvaluator {
public:
    explicit CachedEvaluator(MapEvaluator inner, std::string dataset_id = "");
    double operator()(const TensorMap& map) const;
    std::size_t hits() const { return hits_; }
    std::size_t misses() const { return misses_; }

private:
    MapEvaluator inner_;
    std::string dataset_id_;
    mutable std::map<std::uint64_t, double> cache_;
    mutable std::size_t hits_ = 0;
    mutable std::size_t misses_ = 0;
};

}  // namespace chorus
