#pragma once

// Run configuration. Documents are JSON objects whose nested keys mirror the
// dotted names used on the command line (`loss.alpha`, `optim.lr`, ...).

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stepcast {

enum class ModelKind { Gepsan, Baseline };

std::string_view model_kind_name(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

enum class Averaging { Micro, Macro, Both };

std::string_view averaging_name(Averaging a);
Averaging parse_averaging(std::string_view s);

struct ModelDims {
  int d_f = 32;
  int d_z = 16;
  int ctx_layers = 2;
  int ctx_heads = 4;
  int ctx_ff = 128;
  int proj_blocks = 3;
  int proj_hidden = 32;
  int mlp_hidden = 64;
  int dec_layers = 3;
  int dec_hidden = 32;
  int dec_embed = 16;
  double dropout = 0.1;
  double logvar_clamp = 10.0;
};

struct LossToggles {
  bool l_pred = true;
  bool l_aux = true;
  bool l_rec = true;
};

struct LossWeights {
  double alpha = 3.0;
  double beta_max = 0.2;
  /// 0 means half of the scheduled optimizer steps.
  long beta_anneal_steps = 100000;
  double gamma = 1.0;
  LossToggles toggles;
};

struct OptimConfig {
  double lr = 1e-4;
  double finetune_lr = 0.0;  // 0: same as lr
  double weight_decay = 0.01;
  double warmup_epochs = 1.0;
  double clip_norm = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int batch_size = 50;
  int epochs = 5;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;
  int log_every = 50;
  std::string log_path;  // empty: no training log file
};

struct DecodeConfig {
  double nucleus_p = 0.9;
  int max_len = 0;  // 0: max_step_len + 2 of the grammar
};

struct EvalConfig {
  int k = 5;
  std::uint64_t seed = 7;
  /// Contexts evaluated per held-out procedure prefix; 0 uses all.
  int max_contexts = 0;
};

struct DataConfig {
  std::string grammar;
  std::string train_corpus;
  std::string video_corpus;
  std::string eval_corpus;
  std::vector<std::string> unseen_types;
  std::uint64_t corpus_seed = 11;
  // Sizes of generated corpora when no file is given.
  int n_text = 20000;
  int n_video = 1000;
  int n_eval = 400;
};

struct ExperimentConfig {
  std::string preset = "desk";
  ModelKind kind = ModelKind::Gepsan;
  std::uint64_t init_seed = 3;
  ModelDims dims;
  std::uint64_t encoder_seed = 5;
  double video_noise_sigma = 0.1;
  LossWeights loss;
  OptimConfig optim;
  TrainConfig train;
  DecodeConfig decode;
  EvalConfig eval;
  Averaging averaging = Averaging::Both;
  DataConfig data;
  std::string output_dir = "runs";

  /// Throws UsageError on inconsistent values.
  void validate() const;

  nlohmann::json to_json() const;
  /// Unknown keys are rejected; missing keys keep the preset's value.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Applies `key=value` overrides with dotted keys (value parsed as JSON,
  /// falling back to a plain string).
  void apply_override(const std::string& assignment);
};

/// Scaled-down defaults that train on one CPU core in minutes.
ExperimentConfig desk_preset();
/// Published hyperparameters; far too large for desk-scale runs.
ExperimentConfig full_preset();

}  // namespace stepcast
