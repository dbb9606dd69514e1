#include "stepcast/autograd.hpp"

#include "stepcast/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace stepcast::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, &p, record_});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backward backward) {
  bool any = false;
  if (record_) {
    for (const Var& p : parents) {
      if (p.tape() != this) {
        throw std::logic_error("autograd: operand belongs to a different tape");
      }
      any = any || needs_grad(p.id());
    }
  }
  Node node{std::move(value), {}, {}, nullptr, any};
  if (any) {
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) {
    return;
  }
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (!record_) {
    throw std::logic_error("autograd: backward on a non-recording tape");
  }
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw std::invalid_argument("autograd: backward needs a 1x1 loss");
  }
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) {
      continue;
    }
    if (n.backward) {
      // accumulate() never grows nodes_, but it may alias n.grad via a self edge.
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) {
        n.param->zero_grad();
      }
      n.param->grad += n.grad;
    }
  }
}

Matrix gemm(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ");
  }
  const Index n = a.rows();
  const Index k = a.cols();
  const Index m = b.cols();
  Matrix c = Matrix::Zero(n, m);
  // Four output rows per pass share each row of b; every element still sums over p in order.
  Index i = 0;
  for (; i + 4 <= n; i += 4) {
    double* __restrict c0 = c.data() + i * m;
    double* __restrict c1 = c0 + m;
    double* __restrict c2 = c1 + m;
    double* __restrict c3 = c2 + m;
    const double* a0 = a.data() + i * k;
    for (Index p = 0; p < k; ++p) {
      const double v0 = a0[p];
      const double v1 = a0[k + p];
      const double v2 = a0[2 * k + p];
      const double v3 = a0[3 * k + p];
      const double* __restrict brow = b.data() + p * m;
      for (Index j = 0; j < m; ++j) {
        const double bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < n; ++i) {
    double* __restrict crow = c.data() + i * m;
    const double* arow = a.data() + i * k;
    for (Index p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* __restrict brow = b.data() + p * m;
      for (Index j = 0; j < m; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

double gelu_scalar(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double inner = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  const int ia = a.id();
  const int ib = b.id();
  return t.push(gemm(a.value(), b.value()), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) {
      tp.accumulate(ia, g * tp.value(ib).transpose());
    }
    if (tp.needs_grad(ib)) {
      tp.accumulate(ib, tp.value(ia).transpose() * g);
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    tp.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.needs_grad(ib)) {
      tp.accumulate(ib, -g);
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  const int ia = a.id();
  const int ib = b.id();
  Matrix v = a.value().cwiseProduct(b.value());
  return a.tape()->push(std::move(v), {a, b}, [ia, ib](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(ia)) {
      tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    }
    if (tp.needs_grad(ib)) {
      tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
    }
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: expected a 1 x " + std::to_string(a.cols()) + " row");
  }
  const int ia = a.id();
  const int ir = row.id();
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return a.tape()->push(std::move(v), {a, row}, [ia, ir](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g);
    if (tp.needs_grad(ir)) {
      tp.accumulate(ir, g.colwise().sum());
    }
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->push(a.value() * s, {a},
                        [ia, s](Tape& tp, const Matrix& g) { tp.accumulate(ia, g * s); });
}

Var tanh(Var a) {
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([](double x) { return std::tanh(x); });
  Matrix y = v;
  return a.tape()->push(std::move(v), {a}, [ia, y = std::move(y)](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid(Var a) {
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  Matrix y = v;
  return a.tape()->push(std::move(v), {a}, [ia, y = std::move(y)](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var gelu(Var a) {
  const int ia = a.id();
  Matrix v = a.value().unaryExpr(&gelu_scalar);
  return a.tape()->push(std::move(v), {a}, [ia](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct(tp.value(ia).unaryExpr(&gelu_grad)));
  });
}

Var exp(Var a) {
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([](double x) { return std::exp(x); });
  Matrix y = v;
  return a.tape()->push(std::move(v), {a}, [ia, y = std::move(y)](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, g.cwiseProduct(y));
  });
}

Var clamp(Var a, double lo, double hi) {
  const int ia = a.id();
  Matrix v = a.value().cwiseMax(lo).cwiseMin(hi);
  return a.tape()->push(std::move(v), {a}, [ia, lo, hi](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(ia);
    Matrix gi = g;
    for (Index i = 0; i < gi.size(); ++i) {
      const double xv = x.data()[i];
      if (xv < lo || xv > hi) {
        gi.data()[i] = 0.0;
      }
    }
    tp.accumulate(ia, gi);
  });
}

Var detach(Var a) { return a.tape()->constant(a.value()); }

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat_cols: no inputs");
  }
  const Index n = parts[0].rows();
  Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != n) {
      throw std::invalid_argument("concat_cols: row counts differ");
    }
    total += p.cols();
  }
  Matrix v(n, total);
  std::vector<std::pair<int, Index>> spans;
  Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    spans.emplace_back(p.id(), off);
    off += p.cols();
  }
  return parts[0].tape()->push(std::move(v), parts,
                               [spans = std::move(spans)](Tape& tp, const Matrix& g) {
                                 for (const auto& [id, start] : spans) {
                                   if (tp.needs_grad(id)) {
                                     tp.accumulate(id, g.middleCols(start, tp.value(id).cols()));
                                   }
                                 }
                               });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat_rows: no inputs");
  }
  const Index m = parts[0].cols();
  Index total = 0;
  for (const Var& p : parts) {
    if (p.cols() != m) {
      throw std::invalid_argument("concat_rows: column counts differ");
    }
    total += p.rows();
  }
  Matrix v(total, m);
  std::vector<std::pair<int, Index>> spans;
  Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    spans.emplace_back(p.id(), off);
    off += p.rows();
  }
  return parts[0].tape()->push(std::move(v), parts,
                               [spans = std::move(spans)](Tape& tp, const Matrix& g) {
                                 for (const auto& [id, start] : spans) {
                                   if (tp.needs_grad(id)) {
                                     tp.accumulate(id, g.middleRows(start, tp.value(id).rows()));
                                   }
                                 }
                               });
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("slice_cols: range out of bounds");
  }
  const int ia = a.id();
  const Index cols = a.cols();
  return a.tape()->push(a.value().middleCols(start, count), {a},
                        [ia, start, count, cols](Tape& tp, const Matrix& g) {
                          Matrix full = Matrix::Zero(g.rows(), cols);
                          full.middleCols(start, count) = g;
                          tp.accumulate(ia, full);
                        });
}

Var gather_rows(Var a, std::span<const int> rows) {
  const Index n = static_cast<Index>(rows.size());
  Matrix v(n, a.cols());
  for (Index i = 0; i < n; ++i) {
    const int r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= a.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of range");
    }
    v.row(i) = a.value().row(r);
  }
  const int ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return a.tape()->push(std::move(v), {a}, [ia, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(ia).rows(), tp.value(ia).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      full.row(idx[i]) += g.row(static_cast<Index>(i));
    }
    tp.accumulate(ia, full);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Index n = x.rows();
  const Index m = x.cols();
  if (gain.rows() != 1 || gain.cols() != m || bias.rows() != 1 || bias.cols() != m) {
    throw std::invalid_argument("layer_norm: gain/bias must be 1 x " + std::to_string(m));
  }
  Matrix xhat(n, m);
  Matrix inv_std(n, 1);
  const Matrix& xv = x.value();
  for (Index i = 0; i < n; ++i) {
    double mean = 0.0;
    for (Index j = 0; j < m; ++j) {
      mean += xv(i, j);
    }
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (Index j = 0; j < m; ++j) {
      const double d = xv(i, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(i, 0) = is;
    for (Index j = 0; j < m; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * is;
    }
  }
  Matrix y(n, m);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      y(i, j) = xhat(i, j) * gv(0, j) + bv(0, j);
    }
  }
  const int ix = x.id();
  const int ig = gain.id();
  const int ib = bias.id();
  return x.tape()->push(
      std::move(y), {x, gain, bias},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                          const Matrix& g) {
        if (tp.needs_grad(ig)) {
          tp.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        }
        if (tp.needs_grad(ib)) {
          tp.accumulate(ib, g.colwise().sum());
        }
        if (tp.needs_grad(ix)) {
          const Matrix& gv2 = tp.value(ig);
          Matrix dxhat = g;
          dxhat.array().rowwise() *= gv2.row(0).array();
          const double m2 = static_cast<double>(dxhat.cols());
          Matrix dx(dxhat.rows(), dxhat.cols());
          for (Index i = 0; i < dxhat.rows(); ++i) {
            const double mean_d = dxhat.row(i).sum() / m2;
            const double mean_dx = dxhat.row(i).dot(xhat.row(i)) / m2;
            dx.row(i) = inv_std(i, 0) *
                        (dxhat.row(i).array() - mean_d - xhat.row(i).array() * mean_dx).matrix();
          }
          tp.accumulate(ix, dx);
        }
      });
}

Var dropout(Var a, double rate, std::uint64_t seed) {
  if (rate <= 0.0) {
    return a;
  }
  if (rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be < 1");
  }
  Rng rng(seed);
  Matrix mask(a.rows(), a.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < rate ? 0.0 : keep;
  }
  Var m = a.tape()->constant(std::move(mask));
  return mul(a, m);
}

Var causal_attention(Var q, Var k, Var v, int n_heads, int n_seq, int seq_len,
                     std::span<const int> lengths) {
  const Index d = q.cols();
  if (k.cols() != d || v.cols() != d || q.rows() != k.rows() || q.rows() != v.rows()) {
    throw std::invalid_argument("causal_attention: q/k/v shapes differ");
  }
  if (q.rows() != static_cast<Index>(n_seq) * seq_len ||
      lengths.size() != static_cast<std::size_t>(n_seq)) {
    throw std::invalid_argument("causal_attention: batch layout mismatch");
  }
  if (n_heads <= 0 || d % n_heads != 0) {
    throw std::invalid_argument("causal_attention: model dim not divisible by heads");
  }
  const Index dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  Matrix out = Matrix::Zero(q.rows(), d);
  // probs[(s * n_heads + h)] is seq_len x seq_len, zero outside the mask.
  std::vector<Matrix> probs(static_cast<std::size_t>(n_seq * n_heads));
  for (int s = 0; s < n_seq; ++s) {
    const int len = lengths[static_cast<std::size_t>(s)];
    for (int h = 0; h < n_heads; ++h) {
      Matrix p = Matrix::Zero(seq_len, seq_len);
      const Index c0 = h * dh;
      for (int i = 0; i < seq_len; ++i) {
        const Index ri = static_cast<Index>(s) * seq_len + i;
        const int last = std::min(i, len - 1);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= last; ++j) {
          const Index rj = static_cast<Index>(s) * seq_len + j;
          double dot = 0.0;
          for (Index c = 0; c < dh; ++c) {
            dot += qv(ri, c0 + c) * kv(rj, c0 + c);
          }
          p(i, j) = dot * sc;
          mx = std::max(mx, p(i, j));
        }
        double z = 0.0;
        for (int j = 0; j <= last; ++j) {
          p(i, j) = std::exp(p(i, j) - mx);
          z += p(i, j);
        }
        for (int j = 0; j <= last; ++j) {
          p(i, j) /= z;
        }
        for (int j = 0; j <= last; ++j) {
          const Index rj = static_cast<Index>(s) * seq_len + j;
          const double w = p(i, j);
          for (Index c = 0; c < dh; ++c) {
            out(ri, c0 + c) += w * vv(rj, c0 + c);
          }
        }
      }
      probs[static_cast<std::size_t>(s * n_heads + h)] = std::move(p);
    }
  }
  const int iq = q.id();
  const int ik = k.id();
  const int iv = v.id();
  return q.tape()->push(
      std::move(out), {q, k, v},
      [iq, ik, iv, n_heads, n_seq, seq_len, dh, sc, probs = std::move(probs)](Tape& tp,
                                                                             const Matrix& g) {
        const Matrix& qv2 = tp.value(iq);
        const Matrix& kv2 = tp.value(ik);
        const Matrix& vv2 = tp.value(iv);
        Matrix dq = Matrix::Zero(qv2.rows(), qv2.cols());
        Matrix dk = Matrix::Zero(qv2.rows(), qv2.cols());
        Matrix dv = Matrix::Zero(qv2.rows(), qv2.cols());
        for (int s = 0; s < n_seq; ++s) {
          const Index r0 = static_cast<Index>(s) * seq_len;
          for (int h = 0; h < n_heads; ++h) {
            const Index c0 = h * dh;
            const Matrix& p = probs[static_cast<std::size_t>(s * n_heads + h)];
            const Matrix go = g.block(r0, c0, seq_len, dh);
            const Matrix vb = vv2.block(r0, c0, seq_len, dh);
            const Matrix qb = qv2.block(r0, c0, seq_len, dh);
            const Matrix kb = kv2.block(r0, c0, seq_len, dh);
            dv.block(r0, c0, seq_len, dh) += p.transpose() * go;
            const Matrix dp = go * vb.transpose();
            Matrix ds = p.cwiseProduct(dp);
            const Eigen::VectorXd rowdot = ds.rowwise().sum();
            ds -= (p.array().colwise() * rowdot.array()).matrix();
            dq.block(r0, c0, seq_len, dh) += sc * ds * kb;
            dk.block(r0, c0, seq_len, dh) += sc * ds.transpose() * qb;
          }
        }
        tp.accumulate(iq, dq);
        tp.accumulate(ik, dk);
        tp.accumulate(iv, dv);
      });
}

Var softmax_nll_rows(Var logits, std::span<const int> targets) {
  const Index n = logits.rows();
  const Index vsz = logits.cols();
  if (static_cast<Index>(targets.size()) != n) {
    throw std::invalid_argument("softmax_nll_rows: one target per row required");
  }
  const Matrix& lv = logits.value();
  Matrix probs(n, vsz);
  Matrix out = Matrix::Zero(n, 1);
  for (Index i = 0; i < n; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t >= vsz) {
      throw std::out_of_range("softmax_nll_rows: target id out of range");
    }
    double mx = lv(i, 0);
    for (Index j = 1; j < vsz; ++j) {
      mx = std::max(mx, lv(i, j));
    }
    double z = 0.0;
    for (Index j = 0; j < vsz; ++j) {
      probs(i, j) = std::exp(lv(i, j) - mx);
      z += probs(i, j);
    }
    for (Index j = 0; j < vsz; ++j) {
      probs(i, j) /= z;
    }
    if (t >= 0) {
      out(i, 0) = (mx + std::log(z)) - lv(i, t);
    }
  }
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape()->push(
      std::move(out), {logits},
      [il, tg = std::move(tg), probs = std::move(probs)](Tape& tp, const Matrix& g) {
        Matrix d = probs;
        for (Index i = 0; i < d.rows(); ++i) {
          const int t = tg[static_cast<std::size_t>(i)];
          if (t < 0) {
            d.row(i).setZero();
            continue;
          }
          d(i, t) -= 1.0;
          d.row(i) *= g(i, 0);
        }
        tp.accumulate(il, d);
      });
}

Var mse_rows(Var a, Var b) {
  require_same_shape(a, b, "mse_rows");
  const Index m = a.cols();
  const Matrix diff = a.value() - b.value();
  Matrix out(a.rows(), 1);
  for (Index i = 0; i < diff.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < m; ++j) {
      s += diff(i, j) * diff(i, j);
    }
    out(i, 0) = s / static_cast<double>(m);
  }
  const int ia = a.id();
  const int ib = b.id();
  return a.tape()->push(std::move(out), {a, b}, [ia, ib, diff, m](Tape& tp, const Matrix& g) {
    Matrix d = diff;
    d.array().colwise() *= g.col(0).array() * (2.0 / static_cast<double>(m));
    if (tp.needs_grad(ia)) {
      tp.accumulate(ia, d);
    }
    if (tp.needs_grad(ib)) {
      tp.accumulate(ib, -d);
    }
  });
}

Var kl_normal_rows(Var mu, Var logvar) {
  require_same_shape(mu, logvar, "kl_normal_rows");
  const Matrix& m = mu.value();
  const Matrix& lv = logvar.value();
  Matrix out(m.rows(), 1);
  for (Index i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < m.cols(); ++j) {
      s += std::exp(lv(i, j)) + m(i, j) * m(i, j) - 1.0 - lv(i, j);
    }
    out(i, 0) = 0.5 * s;
  }
  const int im = mu.id();
  const int il = logvar.id();
  return mu.tape()->push(std::move(out), {mu, logvar}, [im, il](Tape& tp, const Matrix& g) {
    if (tp.needs_grad(im)) {
      Matrix d = tp.value(im);
      d.array().colwise() *= g.col(0).array();
      tp.accumulate(im, d);
    }
    if (tp.needs_grad(il)) {
      Matrix d = (0.5 * (tp.value(il).array().exp() - 1.0)).matrix();
      d.array().colwise() *= g.col(0).array();
      tp.accumulate(il, d);
    }
  });
}

Var weighted_sum(Var column, std::span<const double> weights) {
  if (column.cols() != 1 || static_cast<Index>(weights.size()) != column.rows()) {
    throw std::invalid_argument("weighted_sum: expected an n x 1 column and n weights");
  }
  double s = 0.0;
  for (Index i = 0; i < column.rows(); ++i) {
    s += weights[static_cast<std::size_t>(i)] * column.value()(i, 0);
  }
  Matrix w(column.rows(), 1);
  for (Index i = 0; i < column.rows(); ++i) {
    w(i, 0) = weights[static_cast<std::size_t>(i)];
  }
  const int ic = column.id();
  return column.tape()->push(Matrix::Constant(1, 1, s), {column},
                             [ic, w = std::move(w)](Tape& tp, const Matrix& g) {
                               tp.accumulate(ic, w * g(0, 0));
                             });
}

Var sum(Var a) {
  double s = 0.0;
  for (Index i = 0; i < a.value().size(); ++i) {
    s += a.value().data()[i];
  }
  const int ia = a.id();
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape()->push(Matrix::Constant(1, 1, s), {a}, [ia, r, c](Tape& tp, const Matrix& g) {
    tp.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
  });
}

}  // namespace stepcast::ad
