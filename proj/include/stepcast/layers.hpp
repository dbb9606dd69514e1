#pragma once

#include "stepcast/autograd.hpp"
#include "stepcast/rng.hpp"

#include <string>
#include <vector>

namespace stepcast::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

using ParamList = std::vector<Parameter*>;

/// Gaussian init with standard deviation `stddev`.
Matrix random_normal(Rng& rng, ad::Index rows, ad::Index cols, double stddev);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  /// Weights ~ N(0, 1/in); `zero` gives an all-zero layer.
  Linear(const std::string& name, int in, int out, Rng& rng, bool zero = false);

  int in_dim() const { return static_cast<int>(weight.value.rows()); }
  int out_dim() const { return static_cast<int>(weight.value.cols()); }

  Var forward(Tape& tape, Var x);
  void collect(ParamList& out);
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Var forward(Tape& tape, Var x);
  void collect(ParamList& out);
};

/// Stack of affine layers with GELU between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  /// dims = {in, hidden..., out}. The last layer is zero-initialised when
  /// `zero_last` is set.
  Mlp(const std::string& name, const std::vector<int>& dims, Rng& rng, bool zero_last = false);

  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }

  Var forward(Tape& tape, Var x);
  void collect(ParamList& out);
};

std::size_t parameter_count(const ParamList& params);

}  // namespace stepcast::nn
