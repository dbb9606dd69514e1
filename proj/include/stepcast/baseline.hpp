#pragma once

#include "stepcast/layers.hpp"

namespace stepcast {

/// Latent-free prediction head R_t -> f'_{t+1} of the deterministic ablation.
struct DeterministicPredictor {
  nn::Mlp mlp;

  DeterministicPredictor() = default;
  DeterministicPredictor(int feature_dim, int hidden, Rng& rng)
      : mlp("det", {feature_dim, hidden, hidden, feature_dim}, rng) {}

  ad::Var predict(ad::Tape& tape, ad::Var context) { return mlp.forward(tape, context); }
  void collect(nn::ParamList& out) { mlp.collect(out); }
};

}  // namespace stepcast
