#pragma once

// The full anticipation model: frozen encoder, projection head, ingredient
// regressor, causal context encoder, CVAE (or the deterministic head of the
// ablation baseline) and the instruction decoder.

#include "stepcast/baseline.hpp"
#include "stepcast/config.hpp"
#include "stepcast/context.hpp"
#include "stepcast/corpus.hpp"
#include "stepcast/cvae.hpp"
#include "stepcast/decoder.hpp"
#include "stepcast/encoders.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace stepcast {

struct Model {
  ModelKind kind = ModelKind::Gepsan;
  ModelDims dims;
  int max_T = 8;
  int max_step_len = 8;
  FrozenEncoder encoder;
  ProjectionHead proj;
  IngredientRegressor ingredients;
  ContextEncoder context;
  PosteriorNet posterior;       // gepsan only
  PredictionHead head;          // gepsan only
  DeterministicPredictor det;   // baseline only
  InstructionDecoder decoder;

  Model(const ExperimentConfig& cfg, const Grammar& grammar);

  /// Every parameter updated by training. The frozen encoder is not a
  /// Parameter and therefore never appears here.
  nn::ParamList trainable();
  /// Parameters of the components shared by both model kinds.
  nn::ParamList shared_parameters();

  /// Decode length cap: `configured` when positive, else max_step_len + 2.
  int decode_cap(int configured) const { return configured > 0 ? configured : max_step_len + 2; }
};

/// Frozen features of one procedure, computed once per dataset.
struct EncodedProcedure {
  Matrix raw;                              // steps x d_f, frozen encoder output
  std::vector<std::vector<int>> step_ids;  // token ids of every step
  std::vector<int> ingredients;
};

struct Dataset {
  std::vector<Procedure> procedures;
  std::vector<EncodedProcedure> encoded;
  Modality modality = Modality::Text;
};

/// Runs the frozen encoder over every step. Video noise for step s of
/// procedure i is seeded by (noise_seed, i, s), so features are fixed per dataset.
Dataset encode_dataset(const FrozenEncoder& encoder, const Vocabulary& vocab,
                       std::vector<Procedure> procedures, std::uint64_t noise_seed);

/// Trainable part of the forward pass shared by training and evaluation.
struct BatchFeatures {
  ad::Var next;     // pairs x d_f, f_{t+1} for every (procedure, t)
  ad::Var context;  // pairs x d_f, R_t
  std::vector<int> pair_procedure;  // index into the batch
  std::vector<std::vector<int>> targets;  // token ids of step t+1
};

/// Pairs (procedure, t) for t = 0..T-1, in procedure-major order.
BatchFeatures encode_batch(ad::Tape& tape, Model& model, const Dataset& data,
                           std::span<const int> procedures, double dropout = 0.0,
                           std::uint64_t dropout_seed = 0);

/// R_0..R_n for a procedure whose first n steps are observed (inference mode).
Matrix context_vectors(Model& model, const EncodedProcedure& proc, int n_observed);

enum class PredictMode { Single, Multi };

std::string_view predict_mode_name(PredictMode m);
PredictMode parse_predict_mode(std::string_view s);

struct PredictRequest {
  PredictMode mode = PredictMode::Single;
  int k = 5;
  double nucleus_p = 0.9;
  int max_len = 10;
  std::uint64_t seed = 0;
};

struct Candidate {
  DecodedSentence sentence;
  std::uint64_t sample_seed = 0;  // latent (gepsan) or nucleus (baseline) seed; 0 for SINGLE
};

/// Candidates for every context row. `context_keys` give each row a stable
/// identity so sampled latents do not depend on batch composition.
/// gepsan: SINGLE decodes z = 0 greedily, MULTI decodes k prior samples greedily.
/// baseline: SINGLE decodes greedily, MULTI draws k nucleus samples.
std::vector<std::vector<Candidate>> predict_next(Model& model, const Matrix& contexts,
                                                 std::span<const std::uint64_t> context_keys,
                                                 const PredictRequest& request);

/// Deterministic ablation: SINGLE is one greedy decode of the predicted
/// embedding, MULTI is k nucleus samples of that same embedding. Throws
/// UsageError when `model` is not a baseline.
std::vector<Candidate> baseline_predict(Model& model, const Matrix& context, PredictMode mode,
                                        int k, double p, int max_len, std::uint64_t seed);

}  // namespace stepcast
