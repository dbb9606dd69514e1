#include "stepcast/config.hpp"
#include "stepcast/desk_grammar.hpp"
#include "stepcast/errors.hpp"
#include "stepcast/model.hpp"
#include "stepcast/objectives.hpp"
#include "loss_gradcheck.hpp"

#include <doctest.h>

using namespace stepcast;
using namespace stepcast::ad;

namespace {

struct Fixture {
  ExperimentConfig cfg = desk_preset();
  Grammar grammar = desk_grammar();
  Model model;
  Dataset data;

  explicit Fixture(ModelKind kind = ModelKind::Gepsan)
      : cfg(with_kind(kind)), model(cfg, grammar) {
    data = encode_dataset(model.encoder, grammar.vocab, generate_corpus(grammar, 6, 4), 0);
  }

  static ExperimentConfig with_kind(ModelKind k) {
    ExperimentConfig c = desk_preset();
    c.kind = k;
    return c;
  }

  LossBreakdown loss(Tape& t, std::span<const int> procs, double beta = 0.15,
                     const LossWeights* w = nullptr) {
    LossInputs in;
    in.procedures = procs;
    in.beta = beta;
    in.eps_seed = 31;
    return total_loss(t, model, data, w != nullptr ? *w : cfg.loss, in);
  }
};

}  // namespace

TEST_CASE("beta schedule") {
  CHECK(beta_at(0, 0.2, 100) == 0.0);
  CHECK(beta_at(50, 0.2, 100) == doctest::Approx(0.1));
  CHECK(beta_at(100, 0.2, 100) == doctest::Approx(0.2));
  CHECK(beta_at(500, 0.2, 100) == doctest::Approx(0.2));
  CHECK(beta_at(0, 0.2, 0) == 0.2);
  double prev = 0.0;
  for (long s = 0; s < 300; ++s) {
    const double b = beta_at(s, 0.2, 137);
    CHECK(b >= prev);
    CHECK(b <= 0.2);
    prev = b;
  }
}

TEST_CASE("learning-rate warmup") {
  CHECK(lr_at(0, 1e-3, 10) == 0.0);
  CHECK(lr_at(5, 1e-3, 10) == doctest::Approx(5e-4));
  CHECK(lr_at(20, 1e-3, 10) == doctest::Approx(1e-3));
  CHECK(lr_at(3, 1e-3, 0) == 1e-3);
}

TEST_CASE("AdamW update by hand") {
  Parameter p{"w", Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.5)};
  AdamState st;
  OptimConfig oc;
  oc.lr = 0.1;
  oc.weight_decay = 0.01;
  oc.clip_norm = 5.0;
  const StepReport r = optimizer_step({&p}, st, oc, 0);
  // m_hat = 0.5, v_hat = 0.25: w = 1 - 0.1 * (0.5 / (0.5 + eps) + 0.01).
  CHECK(p.value(0, 0) == doctest::Approx(1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01)).epsilon(1e-12));
  CHECK(r.grad_norm == doctest::Approx(0.5));
  CHECK_FALSE(r.clipped);
  CHECK(st.updates == 1);

  Parameter q{"q", Matrix::Constant(1, 2, 0.0), Matrix::Constant(1, 2, 30.0)};
  AdamState s2;
  const StepReport r2 = optimizer_step({&q}, s2, oc, 0);
  CHECK(r2.clipped);
  CHECK(r2.grad_norm == doctest::Approx(std::sqrt(1800.0)));

  Parameter bad{"b", Matrix::Zero(1, 1), Matrix::Constant(1, 1, std::nan(""))};
  AdamState s3;
  CHECK_THROWS_AS(optimizer_step({&bad}, s3, oc, 0), NumericalError);

  const AdamState back = AdamState::from_json(st.to_json());
  CHECK(back.to_json() == st.to_json());
}

TEST_CASE("total loss is the weighted sum of its components") {
  Fixture fx;
  const int procs[] = {0, 1, 2};
  Tape t(false);
  const LossBreakdown b = fx.loss(t, procs, 0.15);
  const LossWeights& w = fx.cfg.loss;
  CHECK(b.total_value == doctest::Approx(b.l_pred + 0.15 * b.l_kl + w.alpha * b.l_aux +
                                         w.gamma * b.l_rec)
                             .epsilon(1e-12));
  CHECK(b.procedures == 3);
  int pairs = 0;
  for (int p : procs) pairs += static_cast<int>(fx.data.procedures[static_cast<std::size_t>(p)].steps.size());
  CHECK(b.pairs == pairs);

  // Mean over procedures: a batch of one procedure repeated equals that
  // procedure (latent-free model, so no per-row noise).
  Fixture bl(ModelKind::Baseline);
  const int one[] = {1};
  const int twice[] = {1, 1};
  Tape a(false), c(false);
  CHECK(bl.loss(a, one).total_value == doctest::Approx(bl.loss(c, twice).total_value).epsilon(1e-12));

  LossWeights off = w;
  off.toggles.l_aux = false;
  off.toggles.l_rec = false;
  Tape d(false);
  const LossBreakdown bo = fx.loss(d, procs, 0.15, &off);
  CHECK(bo.total_value == doctest::Approx(bo.l_pred + 0.15 * bo.l_kl).epsilon(1e-12));
  CHECK(bo.l_rec == 0.0);
}

TEST_CASE("full loss passes finite differences on every trainable module") {
  for (ModelKind kind : {ModelKind::Gepsan, ModelKind::Baseline}) {
    Fixture fx(kind);
    // Move zero-initialised layers away from zero so every weight gets gradient.
    Rng rng(12);
    for (auto* p : fx.model.trainable()) {
      p->value += test::random_matrix(rng, p->value.rows(), p->value.cols(), 0.05);
    }
    const int procs[] = {0, 3};
    const auto r = test::check_total_loss_gradient(fx.model, fx.data, fx.cfg.loss, procs, 0.15);
    INFO(r.main.worst);
    INFO(r.aux.worst);
    CHECK(r.main.max_rel < 1e-4);
    CHECK(r.aux.max_rel < 1e-4);
  }
}

TEST_CASE("the auxiliary target is detached") {
  Parameter pred{"pred", Matrix::Constant(1, 4, 1.0), Matrix()};
  Parameter target{"target", Matrix::Constant(1, 4, 0.5), Matrix()};
  pred.zero_grad();
  target.zero_grad();
  Tape t;
  t.backward(sum(aux_loss(t.param(pred), t.param(target))));
  CHECK((target.grad.array() == 0.0).all());
  // d/dp mean((p - q)^2) = 2 (p - q) / 4
  CHECK(pred.grad(0, 2) == doctest::Approx(0.25));
}

TEST_CASE("short procedures are skipped and empty batches rejected") {
  Fixture fx;
  Procedure p = fx.data.procedures[0];
  p.steps.resize(1);
  fx.data = encode_dataset(fx.model.encoder, fx.grammar.vocab, {p, fx.data.procedures[1]}, 0);
  const int both[] = {0, 1};
  Tape t(false);
  const LossBreakdown b = fx.loss(t, both);
  CHECK(b.skipped == 1);
  CHECK(b.procedures == 1);
  const int only_short[] = {0};
  Tape u(false);
  CHECK_THROWS_AS(fx.loss(u, only_short), DataError);
}
