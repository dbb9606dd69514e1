#include "support.hpp"

#include <doctest.h>

using namespace stepcast;
using namespace stepcast::ad;
using stepcast::test::check_gradients;
using stepcast::test::random_matrix;

namespace {

Parameter make_param(const std::string& name, Rng& rng, Index r, Index c, double scale = 1.0) {
  Parameter p{name, random_matrix(rng, r, c, scale), Matrix()};
  p.zero_grad();
  return p;
}

// Projects an op output onto fixed random weights so every entry matters.
double project(Tape& t, Var out, const Matrix& w, Var* loss_out) {
  Var loss = sum(mul(out, t.constant(w)));
  if (loss_out != nullptr) {
    *loss_out = loss;
  }
  return loss.scalar();
}

// Gradient check for an op of the given parameters.
double op_check(std::vector<Parameter*> params, const std::function<Var(Tape&)>& op) {
  Matrix w;
  {
    Tape probe(false);
    const Var out = op(probe);
    Rng rng(5);
    w = random_matrix(rng, out.rows(), out.cols());
  }
  for (Parameter* p : params) p->zero_grad();
  Tape t;
  Var loss;
  project(t, op(t), w, &loss);
  t.backward(loss);
  auto value = [&] {
    Tape f(false);
    return project(f, op(f), w, nullptr);
  };
  return check_gradients(params, value, 64).max_rel;
}

}  // namespace

TEST_CASE("gemm matches the naive triple loop and is batch invariant") {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 7, 5);
  const Matrix b = random_matrix(rng, 5, 6);
  const Matrix c = gemm(a, b);
  for (Index i = 0; i < 7; ++i) {
    for (Index j = 0; j < 6; ++j) {
      double s = 0.0;
      for (Index p = 0; p < 5; ++p) s += a(i, p) * b(p, j);
      CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
  for (Index i = 0; i < 7; ++i) {
    const Matrix row = gemm(a.row(i), b);
    CHECK((row.array() == c.row(i).array()).all());
  }
  CHECK_THROWS_AS(gemm(a, a), std::invalid_argument);
}

TEST_CASE("elementwise and structural ops pass finite differences") {
  Rng rng(2);
  Parameter a = make_param("a", rng, 4, 3);
  Parameter b = make_param("b", rng, 4, 3);
  Parameter m = make_param("m", rng, 3, 5);
  Parameter row = make_param("row", rng, 1, 3);

  CHECK(op_check({&a, &m}, [&](Tape& t) { return matmul(t.param(a), t.param(m)); }) < 1e-6);
  CHECK(op_check({&a, &b}, [&](Tape& t) { return add(t.param(a), t.param(b)); }) < 1e-6);
  CHECK(op_check({&a, &b}, [&](Tape& t) { return sub(t.param(a), t.param(b)); }) < 1e-6);
  CHECK(op_check({&a, &b}, [&](Tape& t) { return mul(t.param(a), t.param(b)); }) < 1e-6);
  CHECK(op_check({&a, &row}, [&](Tape& t) { return add_row(t.param(a), t.param(row)); }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) { return scale(t.param(a), -2.5); }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) { return tanh(t.param(a)); }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) { return sigmoid(t.param(a)); }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) { return gelu(t.param(a)); }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) { return exp(t.param(a)); }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) { return clamp(t.param(a), -0.7, 0.9); }) < 1e-6);
  CHECK(op_check({&a, &b}, [&](Tape& t) {
          const Var parts[] = {t.param(a), t.param(b)};
          return concat_cols(parts);
        }) < 1e-6);
  CHECK(op_check({&a, &row}, [&](Tape& t) {
          const Var parts[] = {t.param(a), t.param(row)};
          return concat_rows(parts);
        }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) { return slice_cols(t.param(a), 1, 2); }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) {
          const int rows[] = {3, 0, 3, 1};
          return gather_rows(t.param(a), rows);
        }) < 1e-6);
  CHECK(op_check({&a}, [&](Tape& t) { return dropout(t.param(a), 0.4, 17); }) < 1e-6);
}

TEST_CASE("normalisation, attention and losses pass finite differences") {
  Rng rng(3);
  Parameter x = make_param("x", rng, 6, 4);
  Parameter gain = make_param("gain", rng, 1, 4);
  Parameter bias = make_param("bias", rng, 1, 4);
  CHECK(op_check({&x, &gain, &bias}, [&](Tape& t) {
          return layer_norm(t.param(x), t.param(gain), t.param(bias));
        }) < 1e-5);

  Parameter q = make_param("q", rng, 6, 4);
  Parameter k = make_param("k", rng, 6, 4);
  Parameter v = make_param("v", rng, 6, 4);
  const int lengths[] = {3, 2};
  CHECK(op_check({&q, &k, &v}, [&](Tape& t) {
          return causal_attention(t.param(q), t.param(k), t.param(v), 2, 2, 3, lengths);
        }) < 1e-6);

  Parameter logits = make_param("logits", rng, 4, 5);
  const int targets[] = {2, -1, 0, 4};
  CHECK(op_check({&logits}, [&](Tape& t) { return softmax_nll_rows(t.param(logits), targets); }) <
        1e-6);
  Parameter a = make_param("a", rng, 4, 3);
  Parameter b = make_param("b", rng, 4, 3);
  CHECK(op_check({&a, &b}, [&](Tape& t) { return mse_rows(t.param(a), t.param(b)); }) < 1e-6);
  CHECK(op_check({&a, &b}, [&](Tape& t) { return kl_normal_rows(t.param(a), t.param(b)); }) <
        1e-6);
  Parameter col = make_param("col", rng, 4, 1);
  const double weights[] = {0.5, -1.0, 2.0, 0.0};
  CHECK(op_check({&col}, [&](Tape& t) { return weighted_sum(t.param(col), weights); }) < 1e-6);
}

TEST_CASE("hand-computed values") {
  Tape t(false);
  Matrix l(1, 3);
  l << 0.0, std::log(2.0), std::log(5.0);
  const int target[] = {1};
  // -log(2 / (1 + 2 + 5))
  CHECK(softmax_nll_rows(t.constant(l), target).scalar() == doctest::Approx(std::log(4.0)));

  Matrix mu(1, 2), lv(1, 2);
  mu << 1.0, -2.0;
  lv << 0.0, std::log(4.0);
  // 0.5 * sum(exp(lv) + mu^2 - 1 - lv)
  const double kl = 0.5 * ((1 + 1 - 1 - 0) + (4 + 4 - 1 - std::log(4.0)));
  CHECK(kl_normal_rows(t.constant(mu), t.constant(lv)).scalar() == doctest::Approx(kl));

  Matrix p(1, 4), r(1, 4);
  p << 1, 2, 3, 4;
  r << 1, 0, 3, 8;
  CHECK(mse_rows(t.constant(p), t.constant(r)).scalar() == doctest::Approx((4.0 + 16.0) / 4.0));
}

TEST_CASE("causal attention ignores later positions and padding") {
  Rng rng(4);
  Matrix q = random_matrix(rng, 4, 4), k = random_matrix(rng, 4, 4), v = random_matrix(rng, 4, 4);
  const int len[] = {3};
  Tape t(false);
  const Matrix base = causal_attention(t.constant(q), t.constant(k), t.constant(v), 2, 1, 4, len).value();
  k.row(2).setConstant(50.0);
  v.row(2).setConstant(-50.0);
  k.row(3).setConstant(9.0);
  v.row(3).setConstant(9.0);
  const Matrix pert = causal_attention(t.constant(q), t.constant(k), t.constant(v), 2, 1, 4, len).value();
  CHECK((base.row(0).array() == pert.row(0).array()).all());
  CHECK((base.row(1).array() == pert.row(1).array()).all());
  CHECK((base.row(2).array() != pert.row(2).array()).any());
}

TEST_CASE("backward accumulates into parameters and rejects misuse") {
  Parameter a{"a", Matrix::Constant(1, 1, 3.0), Matrix()};
  a.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Tape t;
    Var x = t.param(a);
    t.backward(sum(mul(x, x)));
  }
  CHECK(a.grad(0, 0) == doctest::Approx(12.0));

  Tape off(false);
  CHECK_THROWS_AS(off.backward(off.param(a)), std::logic_error);
  Tape t;
  Var two = t.constant(Matrix::Ones(2, 1));
  CHECK_THROWS_AS(t.backward(two), std::invalid_argument);
  CHECK_THROWS_AS(add(two, t.constant(Matrix::Ones(1, 2))), std::invalid_argument);
}

TEST_CASE("detach blocks gradients") {
  Parameter a{"a", Matrix::Constant(1, 1, 2.0), Matrix()};
  a.zero_grad();
  Tape t;
  Var x = t.param(a);
  t.backward(sum(mul(x, detach(x))));
  CHECK(a.grad(0, 0) == doctest::Approx(2.0));
}
