#include "stepcast/context.hpp"

#include "stepcast/errors.hpp"

#include <stdexcept>

namespace stepcast {

ContextEncoder::ContextEncoder(int dim_, int layers, int heads_, int ff_width, int max_positions_,
                               Rng& rng)
    : dim(dim_), heads(heads_), max_positions(max_positions_) {
  if (heads <= 0 || dim % heads != 0) {
    throw std::invalid_argument("ContextEncoder: dim must be divisible by the head count");
  }
  positions.name = "ctx.positions";
  positions.value = nn::random_normal(rng, max_positions, dim, 0.1);
  for (int l = 0; l < layers; ++l) {
    const std::string p = "ctx.layer" + std::to_string(l);
    ContextBlock b;
    b.ln_attn = nn::LayerNorm(p + ".ln_attn", dim);
    b.wq = nn::Linear(p + ".wq", dim, dim, rng);
    b.wk = nn::Linear(p + ".wk", dim, dim, rng);
    b.wv = nn::Linear(p + ".wv", dim, dim, rng);
    b.wo = nn::Linear(p + ".wo", dim, dim, rng);
    b.ln_ff = nn::LayerNorm(p + ".ln_ff", dim);
    b.ff_in = nn::Linear(p + ".ff_in", dim, ff_width, rng);
    b.ff_out = nn::Linear(p + ".ff_out", ff_width, dim, rng);
    blocks.push_back(std::move(b));
  }
  final_norm = nn::LayerNorm("ctx.final_norm", dim);
}

ad::Var ContextEncoder::encode_context(ad::Tape& tape, ad::Var features, int n_seq, int seq_len,
                                       std::span<const int> lengths, double dropout,
                                       std::uint64_t dropout_seed) {
  if (seq_len < 1) {
    throw std::invalid_argument("encode_context: empty sequence");
  }
  if (seq_len > max_positions) {
    throw DataError("encode_context: sequence of " + std::to_string(seq_len) +
                    " positions exceeds the positional table (" + std::to_string(max_positions) +
                    ")");
  }
  if (features.cols() != dim || features.rows() != static_cast<ad::Index>(n_seq) * seq_len) {
    throw std::invalid_argument("encode_context: feature matrix does not match the layout");
  }
  for (int len : lengths) {
    if (len < 1 || len > seq_len) {
      throw std::invalid_argument("encode_context: sequence length out of range");
    }
  }
  std::vector<int> pos_rows(static_cast<std::size_t>(n_seq) * seq_len);
  for (std::size_t r = 0; r < pos_rows.size(); ++r) {
    pos_rows[r] = static_cast<int>(r % static_cast<std::size_t>(seq_len));
  }
  ad::Var x = ad::add(features, ad::gather_rows(tape.param(positions), pos_rows));
  std::uint64_t k = 0;
  for (auto& b : blocks) {
    ad::Var h = b.ln_attn.forward(tape, x);
    ad::Var att = ad::causal_attention(b.wq.forward(tape, h), b.wk.forward(tape, h),
                                       b.wv.forward(tape, h), heads, n_seq, seq_len, lengths);
    att = b.wo.forward(tape, att);
    if (dropout > 0.0) {
      att = ad::dropout(att, dropout, derive_seed(dropout_seed, {k++}));
    }
    x = ad::add(x, att);
    h = b.ln_ff.forward(tape, x);
    ad::Var ff = b.ff_out.forward(tape, ad::gelu(b.ff_in.forward(tape, h)));
    if (dropout > 0.0) {
      ff = ad::dropout(ff, dropout, derive_seed(dropout_seed, {k++}));
    }
    x = ad::add(x, ff);
  }
  return final_norm.forward(tape, x);
}

ad::Matrix ContextEncoder::encode(const ad::Matrix& features) {
  ad::Tape tape(false);
  const int len = static_cast<int>(features.rows());
  const int lengths[1] = {len};
  return encode_context(tape, tape.constant(features), 1, len, lengths).value();
}

void ContextEncoder::collect(nn::ParamList& out) {
  out.push_back(&positions);
  for (auto& b : blocks) {
    b.ln_attn.collect(out);
    b.wq.collect(out);
    b.wk.collect(out);
    b.wv.collect(out);
    b.wo.collect(out);
    b.ln_ff.collect(out);
    b.ff_in.collect(out);
    b.ff_out.collect(out);
  }
  final_norm.collect(out);
}

}  // namespace stepcast
