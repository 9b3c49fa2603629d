#pragma once

#include "chorus/model.hpp"
#include "chorus/util.hpp"

namespace chorus {

// Temperature then nucleus truncation, renormalized. temperature 0 collapses
// to a point mass on the argmax.
TokenDistribution apply_sampling_transform(const TokenDistribution& dist, double temperature,
                                           double top_p);

// Draws a token id from the transformed distribution.
int sample_token(const TokenDistribution& dist, const GenerationParams& params, Rng& rng);

// Plain autoregressive decoding of a single distribution-capable backend;
// the baseline every degenerate-pool identity compares against.
GenerationOutput decode_single(ModelBackend& backend, const GenerationParams& params);

}  // namespace chorus
