#include "stepcast/objectives.hpp"

#include "stepcast/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stepcast {

double beta_at(long step, double beta_max, long anneal_steps) {
  if (anneal_steps <= 0) {
    return beta_max;
  }
  const double frac = std::min(static_cast<double>(std::max(step, 0L)) /
                                   static_cast<double>(anneal_steps),
                               1.0);
  return frac * beta_max;
}

ad::Var aux_loss(ad::Var f_pred, ad::Var f_target) {
  if (f_pred.rows() != f_target.rows() || f_pred.cols() != f_target.cols()) {
    throw std::invalid_argument("aux_loss: dimension mismatch");
  }
  return ad::mse_rows(f_pred, ad::detach(f_target));
}

nlohmann::json LossBreakdown::to_json() const {
  return {{"step", step},         {"total", total_value}, {"l_pred", l_pred},
          {"l_kl", l_kl},         {"l_aux", l_aux},       {"l_rec", l_rec},
          {"beta", beta},         {"procedures", procedures}, {"pairs", pairs},
          {"skipped", skipped},   {"mean_kl_per_pair", mean_kl_per_pair},
          {"max_abs_raw_logvar", max_abs_raw_logvar}};
}

namespace {

double column_sum(const Matrix& m) {
  double s = 0.0;
  for (ad::Index i = 0; i < m.rows(); ++i) {
    s += m(i, 0);
  }
  return s;
}

void check_finite(const LossBreakdown& b) {
  const std::pair<const char*, double> parts[] = {
      {"l_pred", b.l_pred}, {"l_kl", b.l_kl}, {"l_aux", b.l_aux},
      {"l_rec", b.l_rec},   {"total", b.total_value}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << "non-finite " << name << " at step " << b.step << " (l_pred=" << b.l_pred
         << " l_kl=" << b.l_kl << " l_aux=" << b.l_aux << " l_rec=" << b.l_rec
         << " max|raw logvar|=" << b.max_abs_raw_logvar << ")";
      throw NumericalError(os.str());
    }
  }
}

}  // namespace

LossBreakdown total_loss(ad::Tape& tape, Model& model, const Dataset& data,
                         const LossWeights& weights, const LossInputs& in) {
  LossBreakdown out;
  out.step = in.step;
  out.beta = in.beta;
  std::vector<int> valid;
  for (int p : in.procedures) {
    if (data.encoded.at(static_cast<std::size_t>(p)).raw.rows() < 2) {
      spdlog::warn("skipping procedure {} with fewer than 2 steps", p);
      ++out.skipped;
      continue;
    }
    valid.push_back(p);
  }
  if (valid.empty()) {
    throw DataError("batch has no procedure with at least 2 steps");
  }
  out.procedures = static_cast<int>(valid.size());
  const double inv_b = 1.0 / static_cast<double>(valid.size());

  BatchFeatures feats = encode_batch(tape, model, data, valid, in.dropout, in.dropout_seed);
  const auto n_pairs = static_cast<std::size_t>(feats.next.rows());
  out.pairs = static_cast<int>(n_pairs);
  const std::vector<double> mean_w(n_pairs, inv_b);
  const LossToggles& on = weights.toggles;

  ad::Var f_pred;
  ad::Var kl_term;
  if (model.kind == ModelKind::Gepsan) {
    GaussianParams post = model.posterior.posterior(tape, feats.next, feats.context);
    ad::Var z = sample_latent(tape, post, in.eps_seed);
    f_pred = model.head.predict_embedding(tape, z, feats.context);
    ad::Var kl_rows = ad::kl_normal_rows(post.mu, post.logvar);
    kl_term = ad::weighted_sum(kl_rows, mean_w);
    out.l_kl = kl_term.scalar();
    out.mean_kl_per_pair = column_sum(kl_rows.value()) / static_cast<double>(n_pairs);
    out.max_abs_raw_logvar = post.raw_logvar.value().cwiseAbs().maxCoeff();
  } else {
    f_pred = model.det.predict(tape, feats.context);
  }

  ad::Var aux_term = ad::weighted_sum(aux_loss(f_pred, feats.next), mean_w);
  out.l_aux = aux_term.scalar();

  std::vector<ad::Var> terms;
  if (on.l_pred || on.l_rec) {
    // Prediction and reconstruction share one decoder pass over stacked rows.
    std::vector<ad::Var> conds;
    std::vector<std::vector<int>> targets;
    if (on.l_pred) {
      conds.push_back(f_pred);
      targets.insert(targets.end(), feats.targets.begin(), feats.targets.end());
    }
    if (on.l_rec) {
      conds.push_back(feats.next);
      targets.insert(targets.end(), feats.targets.begin(), feats.targets.end());
    }
    ad::Var col = model.decoder.nll_tokens(tape, ad::concat_rows(conds), targets);
    const std::size_t n_rows = targets.size();
    const auto n_tok = static_cast<std::size_t>(col.rows());
    std::vector<double> w_pred(n_tok, 0.0);
    std::vector<double> w_rec(n_tok, 0.0);
    for (std::size_t i = 0; i < n_tok; ++i) {
      const std::size_t r = i % n_rows;
      const bool is_pred = on.l_pred && r < n_pairs;
      (is_pred ? w_pred : w_rec)[i] = inv_b;
    }
    if (on.l_pred) {
      ad::Var t = ad::weighted_sum(col, w_pred);
      out.l_pred = t.scalar();
      terms.push_back(t);
    }
    if (on.l_rec) {
      ad::Var t = ad::weighted_sum(col, w_rec);
      out.l_rec = t.scalar();
      terms.push_back(t * weights.gamma);
    }
  }
  if (kl_term.valid()) {
    terms.push_back(kl_term * in.beta);
  }
  if (on.l_aux) {
    terms.push_back(aux_term * weights.alpha);
  }
  if (terms.empty()) {
    out.total = tape.constant(Matrix::Zero(1, 1));
  } else {
    out.total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) {
      out.total = out.total + terms[i];
    }
  }
  out.total_value = out.total.scalar();
  check_finite(out);
  return out;
}

nlohmann::json AdamState::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [name, mv] : moments) {
    m[name] = {{"m", std::vector<double>(mv.m.data(), mv.m.data() + mv.m.size())},
               {"v", std::vector<double>(mv.v.data(), mv.v.data() + mv.v.size())},
               {"rows", mv.m.rows()},
               {"cols", mv.m.cols()}};
  }
  return {{"updates", updates}, {"moments", std::move(m)}};
}

AdamState AdamState::from_json(const nlohmann::json& j) {
  AdamState s;
  s.updates = j.at("updates").get<long>();
  for (const auto& [name, e] : j.at("moments").items()) {
    const auto rows = e.at("rows").get<ad::Index>();
    const auto cols = e.at("cols").get<ad::Index>();
    const auto m = e.at("m").get<std::vector<double>>();
    const auto v = e.at("v").get<std::vector<double>>();
    if (m.size() != static_cast<std::size_t>(rows * cols) || v.size() != m.size()) {
      throw DataError("optimizer moments for '" + name + "' have the wrong size");
    }
    Moments mv;
    mv.m = Eigen::Map<const Matrix>(m.data(), rows, cols);
    mv.v = Eigen::Map<const Matrix>(v.data(), rows, cols);
    s.moments.emplace(name, std::move(mv));
  }
  return s;
}

double lr_at(long step, double base_lr, long warmup_steps) {
  if (warmup_steps <= 0) {
    return base_lr;
  }
  return base_lr * std::min(static_cast<double>(std::max(step, 0L)) /
                                static_cast<double>(warmup_steps),
                            1.0);
}

double global_grad_norm(const nn::ParamList& params) {
  double s = 0.0;
  for (const ad::Parameter* p : params) {
    if (p->grad.size() != 0) {
      s += p->grad.squaredNorm();
    }
  }
  return std::sqrt(s);
}

StepReport optimizer_step(const nn::ParamList& params, AdamState& state, const OptimConfig& cfg,
                          long warmup_steps) {
  StepReport rep;
  rep.grad_norm = global_grad_norm(params);
  if (!std::isfinite(rep.grad_norm)) {
    throw NumericalError("non-finite gradient norm at update " + std::to_string(state.updates + 1));
  }
  double gscale = 1.0;
  if (cfg.clip_norm > 0.0 && rep.grad_norm > cfg.clip_norm) {
    gscale = cfg.clip_norm / rep.grad_norm;
    rep.clipped = true;
  }
  state.updates += 1;
  const long t = state.updates;
  rep.lr = lr_at(t, cfg.lr, warmup_steps);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (ad::Parameter* p : params) {
    auto it = state.moments.find(p->name);
    if (it == state.moments.end()) {
      it = state.moments
               .emplace(p->name, Moments{Matrix::Zero(p->value.rows(), p->value.cols()),
                                         Matrix::Zero(p->value.rows(), p->value.cols())})
               .first;
    }
    Moments& mv = it->second;
    if (mv.m.rows() != p->value.rows() || mv.m.cols() != p->value.cols()) {
      throw DataError("optimizer state shape mismatch for '" + p->name + "'");
    }
    const bool has_grad = p->grad.size() == p->value.size();
    for (ad::Index i = 0; i < p->value.size(); ++i) {
      const double g = has_grad ? p->grad.data()[i] * gscale : 0.0;
      double& m = mv.m.data()[i];
      double& v = mv.v.data()[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      double& w = p->value.data()[i];
      w -= rep.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w);
    }
  }
  return rep;
}

}  // namespace stepcast
