#include "stepcast/harness.hpp"

#include "stepcast/desk_grammar.hpp"
#include "stepcast/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace stepcast {

using nlohmann::json;

namespace {

bool is_builtin(const std::string& g) { return g.empty() || g == "builtin"; }

std::uint64_t stage_tag(const std::string& stage) {
  if (stage == "pretrain") return 1;
  if (stage == "finetune") return 2;
  if (stage == "scratch") return 3;
  throw UsageError("unknown training stage '" + stage + "'");
}

}  // namespace

Grammar load_grammar(const ExperimentConfig& cfg) {
  return is_builtin(cfg.data.grammar) ? desk_grammar() : Grammar::load(cfg.data.grammar);
}

std::vector<std::string> unseen_types(const ExperimentConfig& cfg) {
  if (!cfg.data.unseen_types.empty() || !is_builtin(cfg.data.grammar)) {
    return cfg.data.unseen_types;
  }
  return desk_unseen_types();
}

void check_split_hygiene(const std::vector<Procedure>& procs,
                         const std::vector<std::string>& unseen, const std::string& what) {
  const std::set<std::string> bad(unseen.begin(), unseen.end());
  for (std::size_t i = 0; i < procs.size(); ++i) {
    if (bad.contains(procs[i].recipe_type)) {
      throw DataError(what + " procedure " + std::to_string(i) + " has unseen recipe type '" +
                      procs[i].recipe_type + "'");
    }
  }
}

ExperimentData prepare_data(const ExperimentConfig& cfg) {
  ExperimentData d;
  d.grammar = load_grammar(cfg);
  d.unseen = unseen_types(cfg);
  const Grammar seen_g = d.grammar.restrict_to(d.unseen, true);
  const std::uint64_t s = cfg.data.corpus_seed;
  auto corpus = [&](const std::string& path, const Grammar& g, int n, std::uint64_t tag) {
    return path.empty() ? generate_corpus(g, n, derive_seed(s, {tag}))
                        : read_corpus(path, d.grammar.vocab);
  };
  d.text = corpus(cfg.data.train_corpus, seen_g, cfg.data.n_text, 1);
  check_split_hygiene(d.text, d.unseen, "training corpus");
  d.video = corpus(cfg.data.video_corpus, seen_g, cfg.data.n_video, 2);
  check_split_hygiene(d.video, d.unseen, "video corpus");
  if (!cfg.data.eval_corpus.empty()) {
    const std::set<std::string> bad(d.unseen.begin(), d.unseen.end());
    for (auto& p : read_corpus(cfg.data.eval_corpus, d.grammar.vocab)) {
      (bad.contains(p.recipe_type) ? d.eval_unseen : d.eval_seen).push_back(std::move(p));
    }
  } else {
    d.eval_seen = generate_corpus(seen_g, cfg.data.n_eval, derive_seed(s, {3}));
    if (!d.unseen.empty()) {
      d.eval_unseen = generate_corpus(d.grammar.restrict_to(d.unseen), cfg.data.n_eval,
                                      derive_seed(s, {4}));
    }
  }
  return d;
}

void split_validation(const std::vector<Procedure>& all, double fraction, std::uint64_t seed,
                      std::vector<Procedure>& train, std::vector<Procedure>& val) {
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {0x76616c}));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  const auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(all.size())));
  std::vector<bool> is_val(all.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) {
    is_val[order[i]] = true;
  }
  train.clear();
  val.clear();
  for (std::size_t i = 0; i < all.size(); ++i) {
    (is_val[i] ? val : train).push_back(all[i]);
  }
}

Dataset make_dataset(const Model& model, const Grammar& grammar, std::vector<Procedure> procs,
                     Modality modality, double sigma, std::uint64_t noise_seed) {
  const FrozenEncoder enc =
      model.encoder.with_modality(modality, modality == Modality::Video ? sigma : 0.0);
  return encode_dataset(enc, grammar.vocab, std::move(procs), noise_seed);
}

StagePlan plan_stage(const ExperimentConfig& cfg, std::size_t n_train, const std::string& stage) {
  if (n_train == 0) {
    throw DataError("training set is empty");
  }
  StagePlan p;
  p.stage = stage;
  p.tag = stage_tag(stage);
  const auto bs = static_cast<std::size_t>(cfg.train.batch_size);
  p.steps_per_epoch = static_cast<long>((n_train + bs - 1) / bs);
  p.total_steps = p.steps_per_epoch * cfg.train.epochs;
  p.warmup_steps = std::lround(cfg.optim.warmup_epochs * static_cast<double>(p.steps_per_epoch));
  if (cfg.loss.beta_anneal_steps > 0) {
    p.anneal_steps = cfg.loss.beta_anneal_steps;
  } else if (stage == "finetune") {
    p.anneal_steps = 0;
  } else {
    p.anneal_steps = std::max(1L, p.total_steps / 2);
  }
  return p;
}

Checkpoint fresh_checkpoint(const ExperimentConfig& cfg, const Grammar& grammar) {
  Checkpoint c;
  c.config = cfg;
  c.grammar = grammar;
  c.model = std::make_unique<Model>(cfg, grammar);
  return c;
}

Checkpoint clone_checkpoint(const Checkpoint& c) {
  Checkpoint out;
  out.config = c.config;
  out.grammar = c.grammar;
  out.model = std::make_unique<Model>(*c.model);
  out.adam = c.adam;
  out.progress = c.progress;
  out.history = c.history;
  return out;
}

// ---------------------------------------------------------------------------
// Validation

json ValidationRecord::to_json() const {
  return {{"stage", stage},
          {"step", step},
          {"nll_posterior", nll_posterior},
          {"nll_prior", nll_prior},
          {"mean_kl", mean_kl},
          {"max_abs_raw_logvar", max_abs_raw_logvar},
          {"mean_logvar_norm", mean_logvar_norm}};
}

ValidationRecord ValidationRecord::from_json(const json& j) {
  ValidationRecord r;
  r.stage = j.at("stage").get<std::string>();
  r.step = j.at("step").get<long>();
  r.nll_posterior = j.at("nll_posterior").get<double>();
  r.nll_prior = j.at("nll_prior").get<double>();
  r.mean_kl = j.at("mean_kl").get<double>();
  r.max_abs_raw_logvar = j.at("max_abs_raw_logvar").get<double>();
  r.mean_logvar_norm = j.at("mean_logvar_norm").get<double>();
  return r;
}

ValidationRecord validate_model(Model& model, const Dataset& val, const std::string& stage,
                                long step) {
  ValidationRecord rec;
  rec.stage = stage;
  rec.step = step;
  std::vector<int> usable;
  for (std::size_t i = 0; i < val.encoded.size(); ++i) {
    if (val.encoded[i].raw.rows() >= 2) {
      usable.push_back(static_cast<int>(i));
    }
  }
  if (usable.empty()) {
    return rec;
  }
  constexpr std::size_t kChunk = 64;
  double nll_post = 0.0, nll_prior = 0.0, kl = 0.0, norm = 0.0;
  long pairs = 0;
  for (std::size_t start = 0; start < usable.size(); start += kChunk) {
    const std::size_t end = std::min(usable.size(), start + kChunk);
    const std::span<const int> batch(usable.data() + start, end - start);
    ad::Tape tape(false);
    BatchFeatures f = encode_batch(tape, model, val, batch);
    const auto n = static_cast<std::size_t>(f.next.rows());
    std::vector<ad::Var> conds;
    if (model.kind == ModelKind::Gepsan) {
      GaussianParams post = model.posterior.posterior(tape, f.next, f.context);
      conds.push_back(model.head.predict_embedding(tape, post.mu, f.context));
      conds.push_back(model.head.predict_embedding(
          tape, tape.constant(Matrix::Zero(static_cast<ad::Index>(n), model.dims.d_z)),
          f.context));
      const Matrix kl_rows = ad::kl_normal_rows(post.mu, post.logvar).value();
      kl += kl_rows.sum();
      const Matrix& raw = post.raw_logvar.value();
      rec.max_abs_raw_logvar = std::max(rec.max_abs_raw_logvar, raw.cwiseAbs().maxCoeff());
      for (ad::Index r = 0; r < raw.rows(); ++r) {
        norm += raw.row(r).norm();
      }
    } else {
      conds.push_back(model.det.predict(tape, f.context));
    }
    std::vector<std::vector<int>> targets;
    for (std::size_t c = 0; c < conds.size(); ++c) {
      targets.insert(targets.end(), f.targets.begin(), f.targets.end());
    }
    const Matrix col = model.decoder.nll_tokens(tape, ad::concat_rows(conds), targets).value();
    const std::vector<double> per = per_sequence_nll(col, targets.size());
    for (std::size_t r = 0; r < n; ++r) {
      nll_post += per[r];
      nll_prior += conds.size() > 1 ? per[n + r] : per[r];
    }
    pairs += static_cast<long>(n);
  }
  const double np = static_cast<double>(pairs);
  rec.nll_posterior = nll_post / np;
  rec.nll_prior = nll_prior / np;
  rec.mean_kl = kl / np;
  rec.mean_logvar_norm = norm / np;
  return rec;
}

// ---------------------------------------------------------------------------
// Training

Trainer::Trainer(Checkpoint& ckpt, const Dataset& train, const Dataset* val, StagePlan plan)
    : ckpt_(ckpt), train_(train), val_(val), plan_(std::move(plan)) {
  if (!ckpt_.model) {
    throw std::invalid_argument("Trainer: checkpoint has no model");
  }
  params_ = ckpt_.model->trainable();
  if (ckpt_.progress.stage != plan_.stage) {
    ckpt_.progress.stage = plan_.stage;
    ckpt_.progress.stage_step = 0;
  }
  ckpt_.progress.stage_total = plan_.total_steps;
}

bool Trainer::done() const { return ckpt_.progress.stage_step >= plan_.total_steps; }

std::vector<int> Trainer::batch_for(long step) const {
  const long epoch = step / plan_.steps_per_epoch;
  const long index = step % plan_.steps_per_epoch;
  std::vector<int> order(train_.encoded.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(ckpt_.config.train.seed, {plan_.tag, static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  const auto bs = static_cast<std::size_t>(ckpt_.config.train.batch_size);
  const std::size_t lo = static_cast<std::size_t>(index) * bs;
  const std::size_t hi = std::min(order.size(), lo + bs);
  return {order.begin() + static_cast<std::ptrdiff_t>(lo),
          order.begin() + static_cast<std::ptrdiff_t>(hi)};
}

LossInputs Trainer::inputs_for(long step, const std::vector<int>& batch) const {
  const auto& cfg = ckpt_.config;
  LossInputs in;
  in.procedures = batch;
  in.step = step;
  in.beta = beta_at(step, cfg.loss.beta_max, plan_.anneal_steps);
  const auto s = static_cast<std::uint64_t>(step);
  in.eps_seed = derive_seed(cfg.train.seed, {plan_.tag, s, 1});
  in.dropout_seed = derive_seed(cfg.train.seed, {plan_.tag, s, 2});
  in.dropout = cfg.dims.dropout;
  return in;
}

LossBreakdown Trainer::loss_at(long step) {
  const std::vector<int> batch = batch_for(step);
  ad::Tape tape(false);
  return total_loss(tape, *ckpt_.model, train_, ckpt_.config.loss, inputs_for(step, batch));
}

LossBreakdown Trainer::step() {
  const long s = ckpt_.progress.stage_step;
  const std::vector<int> batch = batch_for(s);
  for (ad::Parameter* p : params_) {
    p->zero_grad();
  }
  ad::Tape tape(true);
  LossBreakdown b = total_loss(tape, *ckpt_.model, train_, ckpt_.config.loss, inputs_for(s, batch));
  tape.backward(b.total);
  OptimConfig oc = ckpt_.config.optim;
  if (plan_.stage == "finetune" && oc.finetune_lr > 0.0) {
    oc.lr = oc.finetune_lr;
  }
  const StepReport r = optimizer_step(params_, ckpt_.adam, oc, plan_.warmup_steps);
  ckpt_.progress.stage_step = s + 1;
  log_step(b, r);
  return b;
}

void Trainer::log_step(const LossBreakdown& b, const StepReport& r) {
  const auto& cfg = ckpt_.config.train;
  const bool periodic = cfg.log_every > 0 && (b.step % cfg.log_every == 0);
  if (periodic) {
    spdlog::info("{} step {}/{} loss {:.4f} pred {:.4f} kl {:.4f} aux {:.5f} rec {:.4f} beta {:.3f} lr {:.2e}",
                 plan_.stage, b.step + 1, plan_.total_steps, b.total_value, b.l_pred, b.l_kl,
                 b.l_aux, b.l_rec, b.beta, r.lr);
  }
  if (!cfg.log_path.empty()) {
    std::ofstream out(cfg.log_path, std::ios::app);
    json j = b.to_json();
    j["stage"] = plan_.stage;
    j["lr"] = r.lr;
    j["grad_norm"] = r.grad_norm;
    out << j.dump() << '\n';
  }
}

void Trainer::run(long max_steps) {
  auto validate = [&] {
    if (val_ == nullptr || val_->encoded.empty()) {
      return;
    }
    const ValidationRecord v =
        validate_model(*ckpt_.model, *val_, plan_.stage, ckpt_.progress.stage_step);
    spdlog::info("{} validation at step {}: nll(post) {:.4f} nll(prior) {:.4f} kl {:.4f} |logvar| {:.3f}",
                 plan_.stage, v.step, v.nll_posterior, v.nll_prior, v.mean_kl, v.mean_logvar_norm);
    ckpt_.history.push_back(v.to_json());
  };
  if (ckpt_.progress.stage_step == 0 && !done()) {
    validate();
  }
  long taken = 0;
  while (!done() && (max_steps < 0 || taken < max_steps)) {
    step();
    ++taken;
    const long s = ckpt_.progress.stage_step;
    if (s % plan_.steps_per_epoch == 0 || s == plan_.total_steps) {
      validate();
    }
  }
}

void train_stage(Checkpoint& ckpt, const Dataset& train, const Dataset* val,
                 const std::string& stage) {
  if (stage == "finetune" && ckpt.progress.stage != "finetune") {
    ckpt.adam = AdamState{};
  }
  Trainer t(ckpt, train, val, plan_stage(ckpt.config, train.encoded.size(), stage));
  t.run();
}

SentinelResult collapse_sentinel(const json& history, const std::string& stage, double clamp,
                                 double beta) {
  SentinelResult s;
  std::vector<ValidationRecord> recs;
  for (const auto& j : history) {
    ValidationRecord r = ValidationRecord::from_json(j);
    if (r.stage == stage) {
      recs.push_back(std::move(r));
    }
  }
  if (recs.size() < 2) {
    throw DataError("sentinel needs at least two validation records for stage " + stage);
  }
  auto objective = [beta](const ValidationRecord& r) { return r.nll_posterior + beta * r.mean_kl; };
  s.first_objective = objective(recs.front());
  s.final_objective = objective(recs.back());
  s.best_objective = s.first_objective;
  for (const auto& r : recs) {
    s.max_abs_raw_logvar = std::max(s.max_abs_raw_logvar, r.max_abs_raw_logvar);
    s.best_objective = std::min(s.best_objective, objective(r));
  }
  s.mean_logvar_norm = recs.back().mean_logvar_norm;
  std::ostringstream why;
  if (!std::isfinite(s.final_objective) || !std::isfinite(s.mean_logvar_norm)) {
    why << "non-finite validation statistics";
  } else if (s.mean_logvar_norm > clamp) {
    why << "mean posterior log-variance norm " << s.mean_logvar_norm << " exceeds clamp " << clamp;
  } else if (s.final_objective >= s.first_objective) {
    why << "validation objective never improved (" << s.first_objective << " -> "
        << s.final_objective << ")";
  }
  s.reason = why.str();
  s.flagged = !s.reason.empty();
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

std::uint64_t context_key(std::size_t procedure, std::size_t t) {
  return (static_cast<std::uint64_t>(procedure) << 16) | static_cast<std::uint64_t>(t);
}

std::string context_id(std::size_t procedure, std::size_t t) {
  return std::to_string(procedure) + ":" + std::to_string(t);
}

EvalOutcome evaluate_model(Model& model, const Dataset& data, const Vocabulary& vocab,
                           const ExperimentConfig& cfg) {
  struct Ctx {
    std::size_t proc;
    std::size_t t;
  };
  std::vector<Ctx> ctxs;
  std::vector<Matrix> rows;
  const auto cap = static_cast<std::size_t>(cfg.eval.max_contexts);
  for (std::size_t i = 0; i < data.encoded.size(); ++i) {
    const EncodedProcedure& e = data.encoded[i];
    const auto T = static_cast<int>(e.raw.rows());
    if (T < 1) {
      continue;
    }
    const Matrix R = context_vectors(model, e, T - 1);
    for (int t = 0; t < T; ++t) {
      if (cap > 0 && ctxs.size() >= cap) {
        break;
      }
      ctxs.push_back({i, static_cast<std::size_t>(t)});
      rows.push_back(R.row(t));
    }
  }
  if (ctxs.empty()) {
    throw DataError("evaluation set has no contexts");
  }
  PredictRequest single;
  single.mode = PredictMode::Single;
  single.nucleus_p = cfg.decode.nucleus_p;
  single.max_len = model.decode_cap(cfg.decode.max_len);
  single.seed = cfg.eval.seed;
  PredictRequest multi = single;
  multi.mode = PredictMode::Multi;
  multi.k = cfg.eval.k;

  std::vector<EvalPair> s_pairs;
  std::vector<EvalPair> m_pairs;
  constexpr std::size_t kChunk = 256;
  for (std::size_t lo = 0; lo < ctxs.size(); lo += kChunk) {
    const std::size_t hi = std::min(ctxs.size(), lo + kChunk);
    Matrix R(static_cast<ad::Index>(hi - lo), model.dims.d_f);
    std::vector<std::uint64_t> keys;
    for (std::size_t c = lo; c < hi; ++c) {
      R.row(static_cast<ad::Index>(c - lo)) = rows[c];
      keys.push_back(context_key(ctxs[c].proc, ctxs[c].t));
    }
    const auto s_out = predict_next(model, R, keys, single);
    const auto m_out = predict_next(model, R, keys, multi);
    for (std::size_t c = lo; c < hi; ++c) {
      const Step& gt = data.procedures[ctxs[c].proc].steps[ctxs[c].t];
      EvalPair sp{context_id(ctxs[c].proc, ctxs[c].t), gt, {}};
      EvalPair mp = sp;
      for (const auto& cand : s_out[c - lo]) {
        sp.candidates.push_back(cand.sentence.to_step(vocab));
      }
      for (const auto& cand : m_out[c - lo]) {
        mp.candidates.push_back(cand.sentence.to_step(vocab));
      }
      s_pairs.push_back(std::move(sp));
      m_pairs.push_back(std::move(mp));
    }
  }
  EvalOutcome out;
  out.single = evaluate_pairs(s_pairs, "S", 1, cfg.averaging);
  out.multi = evaluate_pairs(m_pairs, "M", cfg.eval.k, cfg.averaging);
  for (int k = 1; k <= cfg.eval.k; ++k) {
    out.best_of_k.push_back(evaluate_pairs(m_pairs, "M", k, cfg.averaging));
  }
  return out;
}

json report_document(const EvalOutcome& out, const std::string& model, const std::string& setting,
                     const std::string& split, Modality modality, double sigma) {
  json bok = json::array();
  for (const auto& r : out.best_of_k) {
    bok.push_back(r.to_json());
  }
  return {{"model", model},
          {"setting", setting},
          {"split", split},
          {"modality", std::string(modality_name(modality))},
          {"sigma", sigma},
          {"rows", json::array({out.single.to_json(), out.multi.to_json()})},
          {"best_of_k", bok}};
}

EvalOutcome transfer_eval(Checkpoint& ckpt, const ExperimentConfig& cfg,
                          const std::vector<Procedure>& procs, double sigma) {
  if (ckpt.model->encoder.seed() != cfg.encoder_seed) {
    throw DataError("encoder seed " + std::to_string(cfg.encoder_seed) +
                    " does not match the checkpoint's frozen encoder (seed " +
                    std::to_string(ckpt.model->encoder.seed()) + ")");
  }
  const Dataset ds = make_dataset(*ckpt.model, ckpt.grammar, procs, Modality::Video, sigma,
                                  derive_seed(cfg.data.corpus_seed, {0x766964}));
  ExperimentConfig eval_cfg = ckpt.config;
  eval_cfg.eval = cfg.eval;
  eval_cfg.decode = cfg.decode;
  eval_cfg.averaging = cfg.averaging;
  return evaluate_model(*ckpt.model, ds, ckpt.grammar.vocab, eval_cfg);
}

NextStepSampler model_sampler(Model& model, const Grammar& grammar, const ExperimentConfig& cfg) {
  return [&model, &grammar, cfg](const std::vector<Procedure>& contexts, std::size_t n_observed,
                                 std::uint64_t seed) {
    const Dataset ds = make_dataset(model, grammar, contexts, Modality::Text, 0.0, 0);
    Matrix R(static_cast<ad::Index>(contexts.size()), model.dims.d_f);
    std::vector<std::uint64_t> keys;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
      const Matrix r = context_vectors(model, ds.encoded[i], static_cast<int>(n_observed));
      R.row(static_cast<ad::Index>(i)) = r.row(r.rows() - 1);
      keys.push_back(i);
    }
    PredictRequest req;
    req.mode = PredictMode::Multi;
    req.k = 1;
    req.nucleus_p = cfg.decode.nucleus_p;
    req.max_len = model.decode_cap(cfg.decode.max_len);
    req.seed = seed;
    std::vector<Step> out;
    for (const auto& cands : predict_next(model, R, keys, req)) {
      out.push_back(cands.front().sentence.to_step(grammar.vocab));
    }
    return out;
  };
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string fmt_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string render_table(const std::vector<json>& reports) {
  if (reports.empty()) {
    throw UsageError("report needs at least one metrics file");
  }
  std::optional<std::vector<std::string>> columns;
  std::ostringstream body;
  for (const auto& doc : reports) {
    try {
      for (const auto& rj : doc.at("rows")) {
        const MetricsReport r = MetricsReport::from_json(rj);
        const auto cols = metric_columns(r.averaging);
        if (!columns) {
          columns = cols;
        } else if (*columns != cols) {
          throw DataError("reports disagree on metric columns");
        }
        body << doc.at("model").get<std::string>() << ',' << doc.at("setting").get<std::string>()
             << ',' << doc.at("split").get<std::string>() << ',' << r.mode << ',' << r.k;
        for (double v : metric_row(r)) {
          body << ',' << fmt_value(100.0 * v);
        }
        body << '\n';
      }
    } catch (const json::exception& e) {
      throw DataError(std::string("report schema mismatch: ") + e.what());
    }
  }
  std::ostringstream out;
  out << "model,setting,split,mode,k";
  for (const auto& c : *columns) {
    out << ',' << c;
  }
  out << '\n' << body.str();
  return out.str();
}

void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot write " + path.string());
  }
  out << j.dump(2) << '\n';
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Experiment matrix

namespace {

struct Splits {
  std::vector<Procedure> train;
  std::vector<Procedure> val;
};

struct Runner {
  const ExperimentConfig& base;
  const ExperimentData& data;
  std::filesystem::path dir;
  Splits text;
  Splits video;
  json reports = json::array();
  json sentinels = json::object();
  json diversity = json::object();

  Checkpoint train(const ExperimentConfig& cfg, const std::string& name, const std::string& stage,
                   Checkpoint* from) {
    Checkpoint c = from ? clone_checkpoint(*from) : fresh_checkpoint(cfg, data.grammar);
    c.config = cfg;
    const bool use_video = stage != "pretrain";
    const Splits& s = use_video ? video : text;
    const Modality mod = use_video ? Modality::Video : Modality::Text;
    const std::uint64_t noise = derive_seed(cfg.data.corpus_seed, {use_video ? 0x7674u : 0x7474u});
    const Dataset tr = make_dataset(*c.model, data.grammar, s.train, mod, cfg.video_noise_sigma, noise);
    const Dataset va = make_dataset(*c.model, data.grammar, s.val, mod, cfg.video_noise_sigma,
                                    derive_seed(noise, {1}));
    spdlog::info("run {}: {} on {} procedures", name, stage, tr.encoded.size());
    train_stage(c, tr, &va, stage);
    save_checkpoint(dir / name / (stage + ".ckpt.json"), c);
    if (c.model->kind == ModelKind::Gepsan) {
      const SentinelResult sr = collapse_sentinel(c.history, stage, cfg.dims.logvar_clamp, cfg.loss.beta_max);
      sentinels[name + "/" + stage] = {{"flagged", sr.flagged},
                                       {"reason", sr.reason},
                                       {"mean_logvar_norm", sr.mean_logvar_norm},
                                       {"max_abs_raw_logvar", sr.max_abs_raw_logvar},
                                       {"first_objective", sr.first_objective},
                                       {"best_objective", sr.best_objective},
                                       {"final_objective", sr.final_objective}};
    }
    return c;
  }

  void evaluate(Checkpoint& c, const std::string& name, const std::string& setting) {
    const std::pair<const char*, const std::vector<Procedure>*> splits[] = {
        {"seen", &data.eval_seen}, {"unseen", &data.eval_unseen}};
    for (const auto& [split, procs] : splits) {
      if (procs->empty()) {
        continue;
      }
      const EvalOutcome out = transfer_eval(c, base, *procs, base.video_noise_sigma);
      const json doc = report_document(out, name, setting, split, Modality::Video,
                                       base.video_noise_sigma);
      const std::string file = name + "/" + setting + "_" + split + ".metrics.json";
      write_json(dir / file, doc);
      reports.push_back(file);
    }
  }

  void probe(Checkpoint& c, const std::string& name) {
    if (!is_builtin(base.data.grammar)) {
      return;
    }
    const DiversityResult d =
        diversity_tv(data.grammar, desk_branch_prefix(), 200, base.eval.seed,
                     model_sampler(*c.model, data.grammar, base));
    diversity[name] = {{"tv", d.tv}, {"empirical", d.empirical}, {"oracle", d.oracle}};
  }
};

}  // namespace

json run_ablation(const ExperimentConfig& cfg) {
  const ExperimentData data = prepare_data(cfg);
  Runner run{cfg, data, cfg.output_dir, {}, {}};
  split_validation(data.text, cfg.train.val_fraction, cfg.train.seed, run.text.train, run.text.val);
  split_validation(data.video, cfg.train.val_fraction, cfg.train.seed, run.video.train,
                   run.video.val);

  for (ModelKind kind : {ModelKind::Gepsan, ModelKind::Baseline}) {
    ExperimentConfig c = cfg;
    c.kind = kind;
    const std::string name(model_kind_name(kind));
    Checkpoint pre = run.train(c, name, "pretrain", nullptr);
    run.evaluate(pre, name, "zero-shot");
    run.probe(pre, name);
    Checkpoint fine = run.train(c, name, "finetune", &pre);
    run.evaluate(fine, name, "finetuned");
  }
  {
    ExperimentConfig c = cfg;
    c.kind = ModelKind::Gepsan;
    Checkpoint scratch = run.train(c, "gepsan-scratch", "scratch", nullptr);
    run.evaluate(scratch, "gepsan-scratch", "scratch");
  }
  const std::pair<const char*, void (*)(ExperimentConfig&)> ablations[] = {
      {"gepsan-no-aux", [](ExperimentConfig& c) { c.loss.toggles.l_aux = false; }},
      {"gepsan-no-rec", [](ExperimentConfig& c) { c.loss.toggles.l_rec = false; }},
      {"gepsan-kl-free", [](ExperimentConfig& c) { c.loss.beta_max = 0.0; }},
  };
  for (const auto& [name, tweak] : ablations) {
    ExperimentConfig c = cfg;
    c.kind = ModelKind::Gepsan;
    tweak(c);
    Checkpoint pre = run.train(c, name, "pretrain", nullptr);
    run.evaluate(pre, name, "zero-shot");
  }

  std::vector<json> docs;
  for (const auto& f : run.reports) {
    docs.push_back(read_json(run.dir / f.get<std::string>()));
  }
  const std::string table = render_table(docs);
  {
    std::ofstream out(run.dir / "table.csv");
    out << table;
  }
  json summary = {{"reports", run.reports},
                  {"sentinel", run.sentinels},
                  {"diversity", run.diversity},
                  {"table", "table.csv"}};
  write_json(run.dir / "summary.json", summary);
  return summary;
}

}  // namespace stepcast
