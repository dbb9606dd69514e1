#pragma once

#include "stepcast/layers.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace stepcast {

struct ContextBlock {
  nn::LayerNorm ln_attn;
  nn::Linear wq, wk, wv, wo;
  nn::LayerNorm ln_ff;
  nn::Linear ff_in, ff_out;
};

/// Pre-norm causal transformer over step features. The output row at
/// position t is the context vector for the prefix f_0..f_t.
struct ContextEncoder {
  int dim = 0;
  int heads = 0;
  int max_positions = 0;
  nn::Parameter positions;  // max_positions x dim, learned
  std::vector<ContextBlock> blocks;
  nn::LayerNorm final_norm;

  ContextEncoder() = default;
  ContextEncoder(int dim, int layers, int heads, int ff_width, int max_positions, Rng& rng);

  /// `features` holds n_seq sequences of seq_len rows each (row = seq *
  /// seq_len + pos); rows at pos >= lengths[seq] are padding. Dropout is
  /// applied to both residual branches when rate > 0.
  ad::Var encode_context(ad::Tape& tape, ad::Var features, int n_seq, int seq_len,
                         std::span<const int> lengths, double dropout = 0.0,
                         std::uint64_t dropout_seed = 0);

  /// Convenience: one unpadded sequence, inference mode.
  ad::Matrix encode(const ad::Matrix& features);

  void collect(nn::ParamList& out);
};

}  // namespace stepcast
