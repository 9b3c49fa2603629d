#pragma once

#include <optional>
#include <string>
#include <vector>

namespace chorus {

// Inputs to the closed-form FLOPs estimates. Only the parameters a given
// method's formula mentions need to be present; a missing one raises an
// argument error naming it.
struct CostParams {
    std::optional<double> dataset_size;    // D
    std::optional<double> max_tokens;      // m
    std::vector<double> model_params;      // k_i (n = size)
    std::optional<double> rounds;          // r
    std::optional<double> patch_size;      // patch
    std::optional<double> graph_count;     // G
    std::optional<double> sample_size;     // s
    std::optional<double> feedback_count;  // f
    std::optional<double> router_params;   // k_r
    std::optional<double> switcher_params; // k_s
    std::optional<double> fuser_params;    // k_f

    // Measured per-level deferral rates for the cascade variant; the
    // closed-form row assumes each level defers 50%.
    std::optional<std::vector<double>> deferral_rates;
};

enum class CostPhase { train, infer };

struct CostEstimate {
    double flops = 0.0;
    bool not_applicable = false;  // the method has no cost in this phase
    bool unlisted = false;        // no closed-form row exists for the method
};

// Forward passes cost 2 FLOPs per parameter, backward passes 6.
CostEstimate estimate_flops(const std::string& method, CostPhase phase, const CostParams& params);

// Every method id known to the cost model (rows plus unlisted entries).
const std::vector<std::string>& cost_model_methods();

bool cost_model_has(const std::string& method);

}  // namespace chorus
