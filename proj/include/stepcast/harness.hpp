#pragma once

// Experiment orchestration: data preparation with seen/unseen splits,
// pretraining, finetuning, evaluation and the ablation matrix.

#include "stepcast/checkpoint.hpp"
#include "stepcast/config.hpp"
#include "stepcast/corpus.hpp"
#include "stepcast/metrics.hpp"
#include "stepcast/model.hpp"
#include "stepcast/objectives.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace stepcast {

/// The built-in grammar when `data.grammar` is empty or "builtin".
Grammar load_grammar(const ExperimentConfig& cfg);

/// `data.unseen_types`, defaulting to the built-in split for the built-in grammar.
std::vector<std::string> unseen_types(const ExperimentConfig& cfg);

/// Throws DataError when a procedure of an unseen recipe type is present.
void check_split_hygiene(const std::vector<Procedure>& procs,
                         const std::vector<std::string>& unseen, const std::string& what);

struct ExperimentData {
  Grammar grammar;
  std::vector<std::string> unseen;
  std::vector<Procedure> text;   // pretraining corpus, seen types only
  std::vector<Procedure> video;  // finetuning corpus, seen types only
  std::vector<Procedure> eval_seen;
  std::vector<Procedure> eval_unseen;
};

/// Reads the configured corpora, generating any that are not given.
ExperimentData prepare_data(const ExperimentConfig& cfg);

/// Deterministic train/validation split.
void split_validation(const std::vector<Procedure>& all, double fraction, std::uint64_t seed,
                      std::vector<Procedure>& train, std::vector<Procedure>& val);

/// Encodes procedures with `encoder` switched to the requested modality.
Dataset make_dataset(const Model& model, const Grammar& grammar, std::vector<Procedure> procs,
                     Modality modality, double sigma, std::uint64_t noise_seed);

struct StagePlan {
  std::string stage;
  std::uint64_t tag = 0;
  long steps_per_epoch = 0;
  long total_steps = 0;
  long warmup_steps = 0;
  long anneal_steps = 0;  // 0: constant beta_max
};

/// Schedule for one training stage over `n_train` procedures. Automatic beta
/// annealing ramps over half the pretraining steps and is constant when
/// finetuning.
StagePlan plan_stage(const ExperimentConfig& cfg, std::size_t n_train, const std::string& stage);

/// Checkpoint holding a freshly initialised model.
Checkpoint fresh_checkpoint(const ExperimentConfig& cfg, const Grammar& grammar);

struct ValidationRecord {
  std::string stage;
  long step = 0;
  double nll_posterior = 0.0;  // per pair, z = posterior mean
  double nll_prior = 0.0;      // per pair, z = 0
  double mean_kl = 0.0;        // per pair
  double max_abs_raw_logvar = 0.0;
  double mean_logvar_norm = 0.0;  // mean L2 norm of the raw log-variance vector

  nlohmann::json to_json() const;
  static ValidationRecord from_json(const nlohmann::json& j);
};

ValidationRecord validate_model(Model& model, const Dataset& val, const std::string& stage,
                                long step);

/// Single-writer training loop over one stage. Batch order and every random
/// draw are functions of (train seed, stage, step), so a run resumed from a
/// checkpoint continues exactly where it stopped.
class Trainer {
 public:
  Trainer(Checkpoint& ckpt, const Dataset& train, const Dataset* val, StagePlan plan);

  /// One optimizer step; returns the loss computed before the update.
  LossBreakdown step();
  /// Loss of step `step` without updating anything.
  LossBreakdown loss_at(long step);
  /// Runs until the stage ends or `max_steps` more steps were taken (< 0: no limit).
  void run(long max_steps = -1);
  bool done() const;
  const StagePlan& plan() const { return plan_; }

 private:
  std::vector<int> batch_for(long step) const;
  LossInputs inputs_for(long step, const std::vector<int>& batch) const;
  void log_step(const LossBreakdown& b, const StepReport& r);

  Checkpoint& ckpt_;
  const Dataset& train_;
  const Dataset* val_;
  StagePlan plan_;
  nn::ParamList params_;
};

struct SentinelResult {
  bool flagged = false;
  std::string reason;
  double max_abs_raw_logvar = 0.0;
  double mean_logvar_norm = 0.0;
  // Validation objective: posterior-path NLL + beta * KL, per pair.
  double first_objective = 0.0;
  double best_objective = 0.0;
  double final_objective = 0.0;
};

/// Divergence/collapse flag over the validation history of `stage`: non-finite
/// statistics, a final mean norm of the raw posterior log-variance beyond the
/// clamp bound, or a validation objective that ends no lower than it started.
SentinelResult collapse_sentinel(const nlohmann::json& history, const std::string& stage,
                                 double clamp, double beta);

/// Trains a stage to completion on `train` (validated on `val` when given).
void train_stage(Checkpoint& ckpt, const Dataset& train, const Dataset* val,
                 const std::string& stage);

struct EvalOutcome {
  MetricsReport single;
  MetricsReport multi;
  std::vector<MetricsReport> best_of_k;  // nested k = 1..K
};

/// Predictions and best-of-k metrics over every (procedure, t) context of `data`.
EvalOutcome evaluate_model(Model& model, const Dataset& data, const Vocabulary& vocab,
                           const ExperimentConfig& cfg);

/// Stable key of context (procedure i, t observed steps).
std::uint64_t context_key(std::size_t procedure, std::size_t t);
std::string context_id(std::size_t procedure, std::size_t t);

/// Labelled report document for one evaluation.
nlohmann::json report_document(const EvalOutcome& out, const std::string& model,
                               const std::string& setting, const std::string& split,
                               Modality modality, double sigma);

/// Zero-shot evaluation of `ckpt` on video features of `procs`. Throws
/// DataError when the configured encoder seed differs from the checkpoint's.
EvalOutcome transfer_eval(Checkpoint& ckpt, const ExperimentConfig& cfg,
                          const std::vector<Procedure>& procs, double sigma);

/// Deep copy (the model is duplicated).
Checkpoint clone_checkpoint(const Checkpoint& c);

/// Sampler for diversity_tv backed by `model` (MULTI mode, one sample per context).
NextStepSampler model_sampler(Model& model, const Grammar& grammar, const ExperimentConfig& cfg);

/// Flat comparison table (CSV) over report documents. Throws DataError when
/// reports disagree on their metric columns.
std::string render_table(const std::vector<nlohmann::json>& reports);

/// Runs the experiment matrix, writing reports, checkpoints and a summary to
/// cfg.output_dir. Returns the summary document.
nlohmann::json run_ablation(const ExperimentConfig& cfg);

/// Writes a JSON document with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace stepcast
