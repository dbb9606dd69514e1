#pragma once

// Conditional VAE over next-step features: posterior network, standard-normal
// prior, reparameterised sampling and the prediction head.

#include "stepcast/layers.hpp"

#include <cstdint>

namespace stepcast {

using ad::Matrix;

/// Diagonal Gaussian; `logvar` is clamped, `raw_logvar` is the network output.
struct GaussianParams {
  ad::Var mu;
  ad::Var logvar;
  ad::Var raw_logvar;
};

inline constexpr double kDefaultLogvarClamp = 10.0;

struct PosteriorNet {
  nn::Mlp mlp;  // [f_next; R] -> [mu; logvar]
  int latent_dim = 0;
  double logvar_clamp = kDefaultLogvarClamp;

  PosteriorNet() = default;
  PosteriorNet(int feature_dim, int latent_dim, int hidden, Rng& rng,
               double logvar_clamp = kDefaultLogvarClamp);

  GaussianParams posterior(ad::Tape& tape, ad::Var f_next, ad::Var context);
  void collect(nn::ParamList& out);
};

struct PredictionHead {
  nn::Mlp mlp;  // [z; R] -> f'
  int latent_dim = 0;

  PredictionHead() = default;
  PredictionHead(int feature_dim, int latent_dim, int hidden, Rng& rng);

  ad::Var predict_embedding(ad::Tape& tape, ad::Var z, ad::Var context);
  void collect(nn::ParamList& out);
};

/// rows x cols matrix of independent standard normals drawn from `seed`.
Matrix standard_normal(ad::Index rows, ad::Index cols, std::uint64_t seed);

/// z = mu + exp(logvar / 2) * eps, differentiable in mu and logvar.
ad::Var sample_latent(ad::Tape& tape, const GaussianParams& params, const Matrix& eps);
ad::Var sample_latent(ad::Tape& tape, const GaussianParams& params, std::uint64_t eps_seed);

/// k independent prior draws, one per row. Throws UsageError when k < 1.
Matrix sample_prior(int k, int latent_dim, std::uint64_t seed);
/// The single-prediction latent: the prior mean, exactly zero.
Matrix single_latent(int latent_dim);

/// Closed-form KL(N(mu, diag(exp(logvar))) || N(0, I)) for one row.
double kl_to_standard_normal(const Matrix& mu, const Matrix& logvar);

}  // namespace stepcast
