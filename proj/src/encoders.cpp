#include "stepcast/encoders.hpp"

#include "stepcast/errors.hpp"

#include <cmath>
#include <stdexcept>

namespace stepcast {

std::string_view modality_name(Modality m) { return m == Modality::Text ? "text" : "video"; }

Modality parse_modality(std::string_view s) {
  if (s == "text") {
    return Modality::Text;
  }
  if (s == "video") {
    return Modality::Video;
  }
  throw UsageError("unknown modality '" + std::string(s) + "' (expected text|video)");
}

FrozenEncoder::FrozenEncoder(int vocab_size, int dim, std::uint64_t seed, Modality modality,
                             double noise_sigma)
    : seed_(seed), modality_(modality), noise_sigma_(noise_sigma) {
  if (noise_sigma < 0.0) {
    throw std::invalid_argument("FrozenEncoder: noise_sigma must be non-negative");
  }
  Rng rng(derive_seed(seed, {0x656e63}));
  embed_ = nn::random_normal(rng, vocab_size, dim, 1.0);
  mix_ = nn::random_normal(rng, dim, dim, 1.0 / std::sqrt(static_cast<double>(dim)));
  if (modality_ == Modality::Text) {
    noise_sigma_ = 0.0;
  }
}

FrozenEncoder::FrozenEncoder(Matrix embed_table, Matrix mix_matrix, std::uint64_t seed,
                             Modality modality, double noise_sigma)
    : embed_(std::move(embed_table)),
      mix_(std::move(mix_matrix)),
      seed_(seed),
      modality_(modality),
      noise_sigma_(modality == Modality::Text ? 0.0 : noise_sigma) {
  if (mix_.rows() != mix_.cols() || embed_.cols() != mix_.rows()) {
    throw DataError("FrozenEncoder: inconsistent table shapes");
  }
}

FrozenEncoder FrozenEncoder::with_modality(Modality modality, double noise_sigma) const {
  return FrozenEncoder(embed_, mix_, seed_, modality, noise_sigma);
}

Matrix FrozenEncoder::encode_ids(const std::vector<int>& token_ids,
                                 std::uint64_t noise_seed) const {
  if (token_ids.empty()) {
    throw DataError("encode_step: empty step");
  }
  Matrix mean = Matrix::Zero(1, embed_.cols());
  for (int id : token_ids) {
    if (id < 0 || id >= embed_.rows()) {
      throw DataError("encode_step: token id " + std::to_string(id) + " outside the vocabulary");
    }
    mean += embed_.row(id);
  }
  mean /= static_cast<double>(token_ids.size());
  Matrix out = ad::gemm(mean, mix_);
  if (modality_ == Modality::Video && noise_sigma_ > 0.0) {
    Rng rng(noise_seed);
    for (ad::Index j = 0; j < out.cols(); ++j) {
      out(0, j) += noise_sigma_ * rng.normal();
    }
  }
  return out;
}

Matrix FrozenEncoder::encode_step(const Step& step, const Vocabulary& vocab,
                                  std::uint64_t noise_seed) const {
  std::vector<int> ids;
  ids.reserve(step.tokens.size());
  for (const auto& t : step.tokens) {
    ids.push_back(vocab.id(t.surface));
  }
  return encode_ids(ids, noise_seed);
}

ProjectionHead::ProjectionHead(int dim, int hidden, int blocks, Rng& rng) {
  for (int b = 0; b < blocks; ++b) {
    const std::string name = "proj.block" + std::to_string(b);
    inner.emplace_back(name + ".inner", dim, hidden, rng);
    outer.emplace_back(name + ".outer", hidden, dim, rng, /*zero=*/true);
  }
}

ad::Var ProjectionHead::project(ad::Tape& tape, ad::Var raw) {
  if (raw.cols() != dim()) {
    throw std::invalid_argument("project: expected " + std::to_string(dim()) +
                                " columns, got " + std::to_string(raw.cols()));
  }
  ad::Var x = raw;
  for (std::size_t b = 0; b < inner.size(); ++b) {
    x = ad::add(x, outer[b].forward(tape, ad::gelu(inner[b].forward(tape, x))));
  }
  return x;
}

void ProjectionHead::collect(nn::ParamList& out) {
  for (std::size_t b = 0; b < inner.size(); ++b) {
    inner[b].collect(out);
    outer[b].collect(out);
  }
}

IngredientRegressor::IngredientRegressor(int n_ingredients, int dim, Rng& rng)
    : affine("ingredients", n_ingredients, dim, rng) {}

Matrix IngredientRegressor::multi_hot(const std::vector<std::vector<int>>& sets) const {
  Matrix m = Matrix::Zero(static_cast<ad::Index>(sets.size()), n_ingredients());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    for (int ing : sets[i]) {
      if (ing < 0 || ing >= n_ingredients()) {
        throw DataError("embed_ingredients: index " + std::to_string(ing) + " out of range [0, " +
                        std::to_string(n_ingredients()) + ")");
      }
      m(static_cast<ad::Index>(i), ing) = 1.0;
    }
  }
  return m;
}

ad::Var IngredientRegressor::embed_ingredients(ad::Tape& tape,
                                              const std::vector<std::vector<int>>& sets) {
  return affine.forward(tape, tape.constant(multi_hot(sets)));
}

void IngredientRegressor::collect(nn::ParamList& out) { affine.collect(out); }

}  // namespace stepcast
