#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Rows are samples, columns are features throughout the library.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace stepcast::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// A named trainable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  /// With `record == false` no backward closures are kept (inference mode).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var param(Parameter& p);

  /// Reverse sweep from a 1x1 node; parameter gradients are accumulated
  /// (not overwritten) into Parameter::grad.
  void backward(Var loss);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Op-building interface.
  Var push(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var push(Matrix value, std::span<const Var> parents, Backward backward);
  void accumulate(int id, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  bool record_;
};

// Deterministic row-major product with a fixed accumulation order, so a row of
// the result does not depend on how many other rows are in the batch.
Matrix gemm(const Matrix& a, const Matrix& b);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x m row over every row of a
Var scale(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var gelu(Var a);
Var exp(Var a);
Var clamp(Var a, double lo, double hi);
Var detach(Var a);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, Index start, Index count);
Var gather_rows(Var a, std::span<const int> rows);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var dropout(Var a, double rate, std::uint64_t seed);

/// Multi-head scaled dot-product self-attention over `n_seq` sequences of
/// `seq_len` rows each (row = seq * seq_len + pos). Position i attends to
/// positions j <= i with j < lengths[seq].
Var causal_attention(Var q, Var k, Var v, int n_heads, int n_seq, int seq_len,
                     std::span<const int> lengths);

/// Per-row negative log-softmax at the target column; rows with target < 0
/// produce 0 and receive no gradient. Returns n x 1.
Var softmax_nll_rows(Var logits, std::span<const int> targets);
/// Per-row mean squared error over columns. Returns n x 1.
Var mse_rows(Var a, Var b);
/// Per-row KL(N(mu, exp(logvar)) || N(0, I)). Returns n x 1.
Var kl_normal_rows(Var mu, Var logvar);
/// Sum of w_i * a_i over an n x 1 column. Returns 1 x 1.
Var weighted_sum(Var column, std::span<const double> weights);
Var sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }

}  // namespace stepcast::ad
