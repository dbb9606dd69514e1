#include "stepcast/cvae.hpp"

#include "stepcast/errors.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace stepcast {

PosteriorNet::PosteriorNet(int feature_dim, int latent_dim_, int hidden, Rng& rng,
                           double logvar_clamp_)
    : mlp("posterior", {2 * feature_dim, hidden, hidden, 2 * latent_dim_}, rng,
          /*zero_last=*/true),
      latent_dim(latent_dim_),
      logvar_clamp(logvar_clamp_) {}

GaussianParams PosteriorNet::posterior(ad::Tape& tape, ad::Var f_next, ad::Var context) {
  if (f_next.rows() != context.rows() || 2 * f_next.cols() != mlp.in_dim() ||
      context.cols() != f_next.cols()) {
    throw std::invalid_argument("posterior: feature/context dimensions do not match the network");
  }
  const std::array<ad::Var, 2> parts{f_next, context};
  ad::Var out = mlp.forward(tape, ad::concat_cols(parts));
  GaussianParams g;
  g.mu = ad::slice_cols(out, 0, latent_dim);
  g.raw_logvar = ad::slice_cols(out, latent_dim, latent_dim);
  g.logvar = ad::clamp(g.raw_logvar, -logvar_clamp, logvar_clamp);
  return g;
}

void PosteriorNet::collect(nn::ParamList& out) { mlp.collect(out); }

PredictionHead::PredictionHead(int feature_dim, int latent_dim_, int hidden, Rng& rng)
    : mlp("head", {latent_dim_ + feature_dim, hidden, hidden, feature_dim}, rng),
      latent_dim(latent_dim_) {}

ad::Var PredictionHead::predict_embedding(ad::Tape& tape, ad::Var z, ad::Var context) {
  if (z.cols() != latent_dim || z.rows() != context.rows() ||
      z.cols() + context.cols() != mlp.in_dim()) {
    throw std::invalid_argument("predict_embedding: latent/context dimensions do not match");
  }
  const std::array<ad::Var, 2> parts{z, context};
  return mlp.forward(tape, ad::concat_cols(parts));
}

void PredictionHead::collect(nn::ParamList& out) { mlp.collect(out); }

Matrix standard_normal(ad::Index rows, ad::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.normal();
  }
  return m;
}

ad::Var sample_latent(ad::Tape& tape, const GaussianParams& params, const Matrix& eps) {
  if (eps.rows() != params.mu.rows() || eps.cols() != params.mu.cols()) {
    throw std::invalid_argument("sample_latent: noise shape does not match the posterior");
  }
  ad::Var sd = ad::exp(ad::scale(params.logvar, 0.5));
  return ad::add(params.mu, ad::mul(sd, tape.constant(eps)));
}

ad::Var sample_latent(ad::Tape& tape, const GaussianParams& params, std::uint64_t eps_seed) {
  return sample_latent(tape, params,
                       standard_normal(params.mu.rows(), params.mu.cols(), eps_seed));
}

Matrix sample_prior(int k, int latent_dim, std::uint64_t seed) {
  if (k < 1) {
    throw UsageError("sample_prior: k must be >= 1");
  }
  return standard_normal(k, latent_dim, seed);
}

Matrix single_latent(int latent_dim) { return Matrix::Zero(1, latent_dim); }

double kl_to_standard_normal(const Matrix& mu, const Matrix& logvar) {
  if (mu.size() != logvar.size()) {
    throw std::invalid_argument("kl_to_standard_normal: shape mismatch");
  }
  double s = 0.0;
  for (ad::Index i = 0; i < mu.size(); ++i) {
    const double lv = logvar.data()[i];
    const double m = mu.data()[i];
    s += std::exp(lv) + m * m - 1.0 - lv;
  }
  return 0.5 * s;
}

}  // namespace stepcast
