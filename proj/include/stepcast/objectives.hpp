#pragma once

// Training objective (ELBO + auxiliary + reconstruction terms), the KL weight
// schedule and the AdamW optimizer with warm-up and global-norm clipping.

#include "stepcast/config.hpp"
#include "stepcast/model.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <span>
#include <string>

namespace stepcast {

/// min(step / anneal_steps, 1) * beta_max; anneal_steps <= 0 means no ramp.
double beta_at(long step, double beta_max, long anneal_steps);

/// Per-row MSE (mean over coordinates) with the target detached from the graph.
ad::Var aux_loss(ad::Var f_pred, ad::Var f_target);

struct LossBreakdown {
  ad::Var total;  // differentiable scalar
  double total_value = 0.0;
  double l_pred = 0.0;
  double l_kl = 0.0;
  double l_aux = 0.0;
  double l_rec = 0.0;
  double beta = 0.0;
  long step = 0;
  int procedures = 0;
  int pairs = 0;
  int skipped = 0;
  double mean_kl_per_pair = 0.0;
  double max_abs_raw_logvar = 0.0;

  nlohmann::json to_json() const;
};

struct LossInputs {
  std::span<const int> procedures;  // indices into the dataset
  long step = 0;                    // optimizer step used for beta and seeds
  double beta = 0.0;
  std::uint64_t eps_seed = 0;
  std::uint64_t dropout_seed = 0;
  double dropout = 0.0;
};

/// Sum over t within each procedure, mean over procedures. Disabled terms are
/// still reported when they are cheap (l_aux, l_kl) and left at 0 otherwise.
/// Procedures with fewer than 2 steps are skipped with a warning; a non-finite
/// component throws NumericalError.
LossBreakdown total_loss(ad::Tape& tape, Model& model, const Dataset& data,
                         const LossWeights& weights, const LossInputs& in);

struct Moments {
  Matrix m;
  Matrix v;
};

struct AdamState {
  long updates = 0;
  std::map<std::string, Moments> moments;

  nlohmann::json to_json() const;
  static AdamState from_json(const nlohmann::json& j);
};

/// base_lr * min(step / warmup_steps, 1); warmup_steps <= 0 means constant.
double lr_at(long step, double base_lr, long warmup_steps);

struct StepReport {
  double lr = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
};

/// One AdamW update of `params` from their accumulated gradients. The update
/// number (1-based) sets both the bias correction and the learning rate.
StepReport optimizer_step(const nn::ParamList& params, AdamState& state, const OptimConfig& cfg,
                          long warmup_steps);

double global_grad_norm(const nn::ParamList& params);

}  // namespace stepcast
