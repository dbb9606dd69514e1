#include "stepcast/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace stepcast::nn {

Matrix random_normal(Rng& rng, ad::Index rows, ad::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = stddev * rng.normal();
  }
  return m;
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng, bool zero) {
  weight.name = name + ".weight";
  bias.name = name + ".bias";
  weight.value = zero ? Matrix::Zero(in, out)
                      : random_normal(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)));
  bias.value = Matrix::Zero(1, out);
}

Var Linear::forward(Tape& tape, Var x) {
  if (x.cols() != weight.value.rows()) {
    throw std::invalid_argument(weight.name + ": input has " + std::to_string(x.cols()) +
                                " columns, expected " + std::to_string(weight.value.rows()));
  }
  return ad::add_row(ad::matmul(x, tape.param(weight)), tape.param(bias));
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, int dim) {
  gain.name = name + ".gain";
  bias.name = name + ".bias";
  gain.value = Matrix::Ones(1, dim);
  bias.value = Matrix::Zero(1, dim);
}

Var LayerNorm::forward(Tape& tape, Var x) {
  return ad::layer_norm(x, tape.param(gain), tape.param(bias));
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

Mlp::Mlp(const std::string& name, const std::vector<int>& dims, Rng& rng, bool zero_last) {
  if (dims.size() < 2) {
    throw std::invalid_argument("Mlp: need at least input and output dims");
  }
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = i + 2 == dims.size();
    layers.emplace_back(name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng,
                        last && zero_last);
  }
}

Var Mlp::forward(Tape& tape, Var x) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(tape, x);
    if (i + 1 < layers.size()) {
      x = ad::gelu(x);
    }
  }
  return x;
}

void Mlp::collect(ParamList& out) {
  for (auto& l : layers) {
    l.collect(out);
  }
}

std::size_t parameter_count(const ParamList& params) {
  std::size_t n = 0;
  for (const Parameter* p : params) {
    n += static_cast<std::size_t>(p->value.size());
  }
  return n;
}

}  // namespace stepcast::nn
