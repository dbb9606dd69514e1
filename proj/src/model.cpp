#include "stepcast/model.hpp"

#include "stepcast/errors.hpp"

#include <algorithm>
#include <array>

namespace stepcast {

Model::Model(const ExperimentConfig& cfg, const Grammar& grammar)
    : kind(cfg.kind),
      dims(cfg.dims),
      max_T(grammar.max_T),
      max_step_len(grammar.max_step_len),
      encoder(grammar.vocab.size(), cfg.dims.d_f, cfg.encoder_seed) {
  cfg.validate();
  const ModelDims& d = cfg.dims;
  // Shared components draw from their own stream so both model kinds start
  // from identical weights.
  Rng shared(derive_seed(cfg.init_seed, {1}));
  proj = ProjectionHead(d.d_f, d.proj_hidden, d.proj_blocks, shared);
  ingredients = IngredientRegressor(grammar.vocab.ingredient_count(), d.d_f, shared);
  context = ContextEncoder(d.d_f, d.ctx_layers, d.ctx_heads, d.ctx_ff, grammar.max_T + 1, shared);
  decoder = InstructionDecoder(d.d_f, grammar.vocab.size(), d.dec_embed, d.dec_hidden,
                               d.dec_layers, shared);
  Rng own(derive_seed(cfg.init_seed, {2}));
  if (kind == ModelKind::Gepsan) {
    posterior = PosteriorNet(d.d_f, d.d_z, d.mlp_hidden, own, d.logvar_clamp);
    head = PredictionHead(d.d_f, d.d_z, d.mlp_hidden, own);
  } else {
    det = DeterministicPredictor(d.d_f, d.mlp_hidden, own);
  }
}

nn::ParamList Model::shared_parameters() {
  nn::ParamList out;
  proj.collect(out);
  ingredients.collect(out);
  context.collect(out);
  decoder.collect(out);
  return out;
}

nn::ParamList Model::trainable() {
  nn::ParamList out = shared_parameters();
  if (kind == ModelKind::Gepsan) {
    posterior.collect(out);
    head.collect(out);
  } else {
    det.collect(out);
  }
  return out;
}

Dataset encode_dataset(const FrozenEncoder& encoder, const Vocabulary& vocab,
                       std::vector<Procedure> procedures, std::uint64_t noise_seed) {
  Dataset ds;
  ds.modality = encoder.modality();
  ds.encoded.reserve(procedures.size());
  for (std::size_t i = 0; i < procedures.size(); ++i) {
    const Procedure& p = procedures[i];
    EncodedProcedure e;
    e.ingredients = p.ingredients;
    e.raw.resize(static_cast<ad::Index>(p.steps.size()), encoder.dim());
    for (std::size_t s = 0; s < p.steps.size(); ++s) {
      std::vector<int> ids;
      for (const auto& t : p.steps[s].tokens) {
        ids.push_back(vocab.id(t.surface));
      }
      e.raw.row(static_cast<ad::Index>(s)) = encoder.encode_ids(ids, derive_seed(noise_seed, {i, s}));
      e.step_ids.push_back(std::move(ids));
    }
    ds.encoded.push_back(std::move(e));
  }
  ds.procedures = std::move(procedures);
  return ds;
}

BatchFeatures encode_batch(ad::Tape& tape, Model& model, const Dataset& data,
                           std::span<const int> procedures, double dropout,
                           std::uint64_t dropout_seed) {
  if (procedures.empty()) {
    throw std::invalid_argument("encode_batch: empty batch");
  }
  const int d = model.dims.d_f;
  const auto n_seq = static_cast<int>(procedures.size());
  int seq_len = 0;
  ad::Index total_steps = 0;
  std::vector<std::vector<int>> sets;
  for (int pi : procedures) {
    const EncodedProcedure& e = data.encoded.at(static_cast<std::size_t>(pi));
    seq_len = std::max(seq_len, static_cast<int>(e.raw.rows()));
    total_steps += e.raw.rows();
    sets.push_back(e.ingredients);
  }
  Matrix raw(total_steps, d);
  BatchFeatures out;
  std::vector<int> lengths;
  std::vector<int> gather(static_cast<std::size_t>(n_seq) * static_cast<std::size_t>(seq_len));
  std::vector<int> context_rows;
  const int zero_row = n_seq + static_cast<int>(total_steps);
  ad::Index off = 0;
  for (int b = 0; b < n_seq; ++b) {
    const EncodedProcedure& e = data.encoded[static_cast<std::size_t>(procedures[static_cast<std::size_t>(b)])];
    const auto steps = static_cast<int>(e.raw.rows());
    raw.middleRows(off, steps) = e.raw;
    lengths.push_back(steps);
    for (int p = 0; p < seq_len; ++p) {
      int row = zero_row;
      if (p == 0) {
        row = b;
      } else if (p < steps) {
        row = n_seq + static_cast<int>(off) + p - 1;
      }
      gather[static_cast<std::size_t>(b * seq_len + p)] = row;
    }
    for (int t = 0; t < steps; ++t) {
      out.pair_procedure.push_back(b);
      out.targets.push_back(e.step_ids[static_cast<std::size_t>(t)]);
      context_rows.push_back(b * seq_len + t);
    }
    off += steps;
  }
  ad::Var steps_f = model.proj.project(tape, tape.constant(std::move(raw)));
  ad::Var f0 = model.ingredients.embed_ingredients(tape, sets);
  const std::array<ad::Var, 3> pool{f0, steps_f, tape.constant(Matrix::Zero(1, d))};
  ad::Var seq = ad::gather_rows(ad::concat_rows(pool), gather);
  ad::Var ctx = model.context.encode_context(tape, seq, n_seq, seq_len, lengths, dropout,
                                             dropout_seed);
  out.context = ad::gather_rows(ctx, context_rows);
  out.next = steps_f;
  return out;
}

Matrix context_vectors(Model& model, const EncodedProcedure& proc, int n_observed) {
  if (n_observed < 0 || n_observed > proc.raw.rows()) {
    throw std::invalid_argument("context_vectors: observed step count out of range");
  }
  if (n_observed + 1 > model.context.max_positions) {
    throw DataError("context of " + std::to_string(n_observed) + " steps exceeds max_T (" +
                    std::to_string(model.max_T) + ")");
  }
  ad::Tape tape(false);
  ad::Var f0 = model.ingredients.embed_ingredients(tape, {proc.ingredients});
  ad::Var seq = f0;
  if (n_observed > 0) {
    ad::Var steps = model.proj.project(tape, tape.constant(proc.raw.topRows(n_observed)));
    const std::array<ad::Var, 2> parts{f0, steps};
    seq = ad::concat_rows(parts);
  }
  const int lengths[1] = {n_observed + 1};
  return model.context.encode_context(tape, seq, 1, n_observed + 1, lengths).value();
}

std::string_view predict_mode_name(PredictMode m) {
  return m == PredictMode::Single ? "single" : "multi";
}

PredictMode parse_predict_mode(std::string_view s) {
  if (s == "single") {
    return PredictMode::Single;
  }
  if (s == "multi") {
    return PredictMode::Multi;
  }
  throw UsageError("mode must be single|multi, got '" + std::string(s) + "'");
}

std::vector<std::vector<Candidate>> predict_next(Model& model, const Matrix& contexts,
                                                 std::span<const std::uint64_t> context_keys,
                                                 const PredictRequest& request) {
  const auto n = static_cast<std::size_t>(contexts.rows());
  if (context_keys.size() != n) {
    throw std::invalid_argument("predict_next: one key per context required");
  }
  if (request.k < 1) {
    throw UsageError("k must be >= 1");
  }
  const std::size_t k = request.mode == PredictMode::Single ? 1 : static_cast<std::size_t>(request.k);
  std::vector<std::vector<Candidate>> out(n);
  if (n == 0) {
    return out;
  }
  // Rows are context-major: row c * k + i is candidate i of context c.
  std::vector<int> rep;
  std::vector<std::uint64_t> seeds;
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < k; ++i) {
      rep.push_back(static_cast<int>(c));
      seeds.push_back(request.mode == PredictMode::Single
                          ? 0
                          : derive_seed(request.seed, {context_keys[c], i}));
    }
  }
  ad::Tape tape(false);
  ad::Var r = ad::gather_rows(tape.constant(contexts), rep);
  DecodeOptions opts;
  opts.max_len = request.max_len;
  opts.nucleus_p = request.nucleus_p;
  ad::Var cond;
  if (model.kind == ModelKind::Gepsan) {
    Matrix z = Matrix::Zero(static_cast<ad::Index>(rep.size()), model.dims.d_z);
    if (request.mode == PredictMode::Multi) {
      for (std::size_t row = 0; row < rep.size(); ++row) {
        z.row(static_cast<ad::Index>(row)) = sample_prior(1, model.dims.d_z, seeds[row]);
      }
    }
    cond = model.head.predict_embedding(tape, tape.constant(std::move(z)), r);
    opts.source = DecodeSource::Greedy;
  } else {
    cond = model.det.predict(tape, r);
    if (request.mode == PredictMode::Multi) {
      opts.source = DecodeSource::Nucleus;
      opts.seeds = seeds;
    }
  }
  std::vector<DecodedSentence> decoded = model.decoder.decode(cond.value(), opts);
  for (std::size_t row = 0; row < rep.size(); ++row) {
    out[static_cast<std::size_t>(rep[row])].push_back({std::move(decoded[row]), seeds[row]});
  }
  return out;
}

}  // namespace stepcast
