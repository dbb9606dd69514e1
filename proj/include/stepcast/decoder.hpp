#pragma once

// Multi-layer LSTM that turns a step feature into a token sequence.
// The feature sets every layer's initial (h, c) through a learned affine map
// and is also concatenated to each input word embedding.

#include "stepcast/corpus.hpp"
#include "stepcast/layers.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace stepcast {

enum class DecodeSource { Greedy, Nucleus, Teacher };

std::string_view decode_source_name(DecodeSource s);

struct DecodedSentence {
  std::vector<int> ids;  // without the terminating EOS
  double logprob = 0.0;  // sum of log-probabilities of every emitted token, EOS included
  DecodeSource source = DecodeSource::Greedy;
  bool terminated = false;  // false when the length cap was hit before EOS

  Step to_step(const Vocabulary& vocab) const;
};

struct DecodeOptions {
  DecodeSource source = DecodeSource::Greedy;
  double nucleus_p = 0.9;
  int max_len = 10;
  /// One seed per row for nucleus sampling; ignored for greedy decoding.
  std::vector<std::uint64_t> seeds;
};

/// Samples an index from the smallest prefix of the probability-sorted
/// distribution whose mass reaches `p`, renormalised. Ties sort by index.
int nucleus_sample(std::span<const double> probs, double p, Rng& rng);

struct InstructionDecoder {
  int cond_dim = 0;
  int vocab_size = 0;
  int embed_dim = 0;
  int hidden = 0;
  int layers = 0;

  nn::Parameter embedding;               // vocab x embed
  std::vector<nn::Linear> input_proj;    // layer input -> 4 * hidden (gate order i, f, g, o)
  std::vector<nn::Parameter> recurrent;  // hidden x 4 * hidden
  nn::Linear init;                       // cond -> 2 * layers * hidden
  nn::Linear output;                     // hidden -> vocab

  InstructionDecoder() = default;
  InstructionDecoder(int cond_dim, int vocab_size, int embed_dim, int hidden, int layers,
                     Rng& rng);

  /// Zeroes the output layer so every next-token distribution is uniform.
  void make_uniform();

  /// Per-token NLL column for teacher forcing: inputs are BOS + target,
  /// predictions are target + EOS. Row j * n + r holds position j of
  /// sequence r (0 for positions past the end).
  ad::Var nll_tokens(ad::Tape& tape, ad::Var cond, const std::vector<std::vector<int>>& targets);

  /// Sum over sequences r of row_weights[r] * NLL(target r | cond r).
  ad::Var teacher_forced_nll(ad::Tape& tape, ad::Var cond,
                             const std::vector<std::vector<int>>& targets,
                             std::span<const double> row_weights);

  /// Single-sentence NLL. Throws DataError for empty targets or OOV ids.
  double teacher_forced_nll(const ad::Matrix& cond, const std::vector<int>& target);

  std::vector<DecodedSentence> decode(const ad::Matrix& cond, const DecodeOptions& opts);
  DecodedSentence decode_greedy(const ad::Matrix& cond, int max_len);
  DecodedSentence decode_nucleus(const ad::Matrix& cond, double p, std::uint64_t seed,
                                 int max_len);

  /// Next-token distribution after feeding `prefix` (BOS is implicit).
  std::vector<double> next_distribution(const ad::Matrix& cond, const std::vector<int>& prefix);

  void collect(nn::ParamList& out);

 private:
  // Parameter leaves bound to one tape, shared by every time step.
  struct Bound {
    ad::Var embedding;
    std::vector<ad::Var> wx, bx, wh;
    ad::Var init_w, init_b, out_w, out_b;
  };
  struct State {
    std::vector<ad::Var> h;
    std::vector<ad::Var> c;
  };
  Bound bind(ad::Tape& tape);
  State initial_state(const Bound& b, ad::Var cond) const;
  ad::Var step(const Bound& b, const std::vector<int>& input_ids, ad::Var cond,
               State& state) const;
  ad::Var logits(const Bound& b, ad::Var h_top) const;
  void check_targets(const std::vector<std::vector<int>>& targets) const;
};

/// Sum of per-token NLLs for each sequence, from a column produced by nll_tokens().
std::vector<double> per_sequence_nll(const ad::Matrix& token_column, std::size_t n_sequences);

}  // namespace stepcast
