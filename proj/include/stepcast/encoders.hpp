#pragma once

// Frozen sentence/clip encoders sharing one embedding space, the trainable
// projection head and the ingredient regressor that yields the step-0 feature.

#include "stepcast/corpus.hpp"
#include "stepcast/layers.hpp"

#include <cstdint>
#include <vector>

namespace stepcast {

using ad::Matrix;

enum class Modality { Text, Video };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view s);

/// Immutable encoder. The video variant adds Gaussian noise of scale
/// `noise_sigma` to the text output; both variants built from the same seed
/// share the embedding table and mixing matrix exactly.
class FrozenEncoder {
 public:
  FrozenEncoder(int vocab_size, int dim, std::uint64_t seed, Modality modality = Modality::Text,
                double noise_sigma = 0.0);
  FrozenEncoder(Matrix embed_table, Matrix mix_matrix, std::uint64_t seed, Modality modality,
                double noise_sigma);

  /// Same frozen tables, different modality.
  FrozenEncoder with_modality(Modality modality, double noise_sigma) const;

  /// Raw 1 x dim feature of one step. Throws DataError on out-of-vocabulary tokens.
  Matrix encode_step(const Step& step, const Vocabulary& vocab, std::uint64_t noise_seed) const;
  Matrix encode_ids(const std::vector<int>& token_ids, std::uint64_t noise_seed) const;

  Modality modality() const { return modality_; }
  double noise_sigma() const { return noise_sigma_; }
  std::uint64_t seed() const { return seed_; }
  int dim() const { return static_cast<int>(mix_.rows()); }
  int vocab_size() const { return static_cast<int>(embed_.rows()); }
  const Matrix& embed_table() const { return embed_; }
  const Matrix& mix_matrix() const { return mix_; }

 private:
  Matrix embed_;
  Matrix mix_;
  std::uint64_t seed_;
  Modality modality_;
  double noise_sigma_;
};

/// Residual MLP: x <- x + W2 gelu(W1 x + b1) + b2 per block. The second
/// layer of every block starts at zero, so a fresh head is the identity.
struct ProjectionHead {
  std::vector<nn::Linear> inner;
  std::vector<nn::Linear> outer;

  ProjectionHead() = default;
  ProjectionHead(int dim, int hidden, int blocks, Rng& rng);

  int dim() const { return inner.empty() ? 0 : inner.front().in_dim(); }

  /// Throws std::invalid_argument on dimension mismatch.
  ad::Var project(ad::Tape& tape, ad::Var raw);
  void collect(nn::ParamList& out);
};

/// Single affine layer from a multi-hot ingredient vector to a step feature.
struct IngredientRegressor {
  nn::Linear affine;

  IngredientRegressor() = default;
  IngredientRegressor(int n_ingredients, int dim, Rng& rng);

  int n_ingredients() const { return affine.in_dim(); }

  Matrix multi_hot(const std::vector<std::vector<int>>& sets) const;
  /// One output row per set. Throws DataError when an index is out of range.
  ad::Var embed_ingredients(ad::Tape& tape, const std::vector<std::vector<int>>& sets);
  void collect(nn::ParamList& out);
};

}  // namespace stepcast
