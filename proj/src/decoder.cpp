#include "stepcast/decoder.hpp"

#include "stepcast/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace stepcast {

std::string_view decode_source_name(DecodeSource s) {
  switch (s) {
    case DecodeSource::Greedy:
      return "greedy";
    case DecodeSource::Nucleus:
      return "nucleus";
    case DecodeSource::Teacher:
      return "teacher";
  }
  return "?";
}

Step DecodedSentence::to_step(const Vocabulary& vocab) const {
  Step s;
  for (int id : ids) {
    s.tokens.push_back(vocab.token(id));
  }
  return s;
}

int nucleus_sample(std::span<const double> probs, double p, Rng& rng) {
  if (!(p > 0.0) || p > 1.0) {
    throw std::invalid_argument("nucleus_sample: p must lie in (0, 1]");
  }
  if (probs.empty()) {
    throw std::invalid_argument("nucleus_sample: empty distribution");
  }
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
  });
  std::size_t keep = 0;
  double mass = 0.0;
  while (keep < order.size()) {
    mass += probs[static_cast<std::size_t>(order[keep])];
    ++keep;
    if (mass >= p) {
      break;
    }
  }
  const double u = rng.uniform() * mass;
  double acc = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    acc += probs[static_cast<std::size_t>(order[i])];
    if (u < acc) {
      return order[i];
    }
  }
  return order[keep - 1];
}

InstructionDecoder::InstructionDecoder(int cond_dim_, int vocab_size_, int embed_dim_,
                                       int hidden_, int layers_, Rng& rng)
    : cond_dim(cond_dim_),
      vocab_size(vocab_size_),
      embed_dim(embed_dim_),
      hidden(hidden_),
      layers(layers_) {
  embedding.name = "dec.embedding";
  embedding.value = nn::random_normal(rng, vocab_size, embed_dim, 1.0);
  for (int l = 0; l < layers; ++l) {
    const std::string p = "dec.lstm" + std::to_string(l);
    const int in = l == 0 ? embed_dim + cond_dim : hidden;
    nn::Linear x(p + ".wx", in, 4 * hidden, rng);
    // Forget-gate bias of 1 keeps early gradients alive through time.
    x.bias.value.middleCols(hidden, hidden).setOnes();
    input_proj.push_back(std::move(x));
    nn::Parameter h;
    h.name = p + ".wh";
    h.value = nn::random_normal(rng, hidden, 4 * hidden, 1.0 / std::sqrt(static_cast<double>(hidden)));
    recurrent.push_back(std::move(h));
  }
  init = nn::Linear("dec.init", cond_dim, 2 * layers * hidden, rng);
  output = nn::Linear("dec.output", hidden, vocab_size, rng);
}

void InstructionDecoder::make_uniform() {
  output.weight.value.setZero();
  output.bias.value.setZero();
}

InstructionDecoder::Bound InstructionDecoder::bind(ad::Tape& tape) {
  Bound b;
  b.embedding = tape.param(embedding);
  for (int l = 0; l < layers; ++l) {
    b.wx.push_back(tape.param(input_proj[static_cast<std::size_t>(l)].weight));
    b.bx.push_back(tape.param(input_proj[static_cast<std::size_t>(l)].bias));
    b.wh.push_back(tape.param(recurrent[static_cast<std::size_t>(l)]));
  }
  b.init_w = tape.param(init.weight);
  b.init_b = tape.param(init.bias);
  b.out_w = tape.param(output.weight);
  b.out_b = tape.param(output.bias);
  return b;
}

InstructionDecoder::State InstructionDecoder::initial_state(const Bound& b, ad::Var cond) const {
  if (cond.cols() != cond_dim) {
    throw std::invalid_argument("decoder: conditioning vector has " +
                                std::to_string(cond.cols()) + " columns, expected " +
                                std::to_string(cond_dim));
  }
  ad::Var s = ad::add_row(ad::matmul(cond, b.init_w), b.init_b);
  State st;
  for (int l = 0; l < layers; ++l) {
    st.h.push_back(ad::tanh(ad::slice_cols(s, static_cast<ad::Index>(l) * hidden, hidden)));
    st.c.push_back(ad::slice_cols(s, static_cast<ad::Index>(layers + l) * hidden, hidden));
  }
  return st;
}

ad::Var InstructionDecoder::step(const Bound& b, const std::vector<int>& input_ids, ad::Var cond,
                                 State& st) const {
  const std::array<ad::Var, 2> parts{ad::gather_rows(b.embedding, input_ids), cond};
  ad::Var x = ad::concat_cols(parts);
  const ad::Index hd = hidden;
  for (int l = 0; l < layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    ad::Var gates = ad::add(ad::add_row(ad::matmul(x, b.wx[li]), b.bx[li]),
                            ad::matmul(st.h[li], b.wh[li]));
    ad::Var i = ad::sigmoid(ad::slice_cols(gates, 0, hd));
    ad::Var f = ad::sigmoid(ad::slice_cols(gates, hd, hd));
    ad::Var g = ad::tanh(ad::slice_cols(gates, 2 * hd, hd));
    ad::Var o = ad::sigmoid(ad::slice_cols(gates, 3 * hd, hd));
    st.c[li] = ad::add(ad::mul(f, st.c[li]), ad::mul(i, g));
    st.h[li] = ad::mul(o, ad::tanh(st.c[li]));
    x = st.h[li];
  }
  return x;
}

ad::Var InstructionDecoder::logits(const Bound& b, ad::Var h_top) const {
  return ad::add_row(ad::matmul(h_top, b.out_w), b.out_b);
}

void InstructionDecoder::check_targets(const std::vector<std::vector<int>>& targets) const {
  for (const auto& t : targets) {
    if (t.empty()) {
      throw DataError("decoder: empty target sentence");
    }
    for (int id : t) {
      if (id <= Vocabulary::kEos || id >= vocab_size) {
        throw DataError("decoder: target token id " + std::to_string(id) +
                        " is special or outside the vocabulary");
      }
    }
  }
}

ad::Var InstructionDecoder::nll_tokens(ad::Tape& tape, ad::Var cond,
                                       const std::vector<std::vector<int>>& targets) {
  check_targets(targets);
  if (cond.rows() != static_cast<ad::Index>(targets.size())) {
    throw std::invalid_argument("decoder: one conditioning row per target required");
  }
  const std::size_t n = targets.size();
  std::size_t steps = 0;
  for (const auto& t : targets) {
    steps = std::max(steps, t.size() + 1);
  }
  const Bound b = bind(tape);
  State st = initial_state(b, cond);
  std::vector<ad::Var> tops;
  std::vector<int> all_targets;
  all_targets.reserve(steps * n);
  std::vector<int> inputs(n);
  for (std::size_t j = 0; j < steps; ++j) {
    for (std::size_t r = 0; r < n; ++r) {
      const auto& t = targets[r];
      inputs[r] = j == 0 ? Vocabulary::kBos : (j <= t.size() ? t[j - 1] : Vocabulary::kPad);
      all_targets.push_back(j < t.size() ? t[j] : (j == t.size() ? Vocabulary::kEos : -1));
    }
    tops.push_back(step(b, inputs, cond, st));
  }
  ad::Var lg = logits(b, ad::concat_rows(tops));
  return ad::softmax_nll_rows(lg, all_targets);
}

ad::Var InstructionDecoder::teacher_forced_nll(ad::Tape& tape, ad::Var cond,
                                               const std::vector<std::vector<int>>& targets,
                                               std::span<const double> row_weights) {
  if (row_weights.size() != targets.size()) {
    throw std::invalid_argument("teacher_forced_nll: one weight per target required");
  }
  ad::Var col = nll_tokens(tape, cond, targets);
  const std::size_t n = targets.size();
  std::vector<double> w(static_cast<std::size_t>(col.rows()));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = row_weights[i % n];
  }
  return ad::weighted_sum(col, w);
}

double InstructionDecoder::teacher_forced_nll(const ad::Matrix& cond,
                                              const std::vector<int>& target) {
  ad::Tape tape(false);
  const double one[1] = {1.0};
  return teacher_forced_nll(tape, tape.constant(cond), {target}, one).scalar();
}

std::vector<DecodedSentence> InstructionDecoder::decode(const ad::Matrix& cond,
                                                        const DecodeOptions& opts) {
  const auto n = static_cast<std::size_t>(cond.rows());
  if (opts.max_len < 1) {
    throw std::invalid_argument("decode: max_len must be >= 1");
  }
  const bool sample = opts.source == DecodeSource::Nucleus;
  if (sample && opts.seeds.size() != n) {
    throw std::invalid_argument("decode: nucleus sampling needs one seed per row");
  }
  std::vector<Rng> rngs;
  if (sample) {
    for (std::uint64_t s : opts.seeds) {
      rngs.emplace_back(s);
    }
  }
  ad::Tape tape(false);
  const Bound b = bind(tape);
  ad::Var c = tape.constant(cond);
  State st = initial_state(b, c);
  std::vector<DecodedSentence> out(n);
  for (auto& d : out) {
    d.source = opts.source;
  }
  std::vector<bool> done(n, false);
  std::vector<int> inputs(n, Vocabulary::kBos);
  std::vector<double> probs(static_cast<std::size_t>(vocab_size));
  for (int j = 0; j < opts.max_len; ++j) {
    const ad::Matrix& lg = logits(b, step(b, inputs, c, st)).value();
    bool all_done = true;
    for (std::size_t r = 0; r < n; ++r) {
      if (done[r]) {
        inputs[r] = Vocabulary::kPad;
        continue;
      }
      // PAD and BOS are never emitted.
      double mx = -std::numeric_limits<double>::infinity();
      for (int v = Vocabulary::kEos; v < vocab_size; ++v) {
        mx = std::max(mx, lg(static_cast<ad::Index>(r), v));
      }
      double z = 0.0;
      probs[Vocabulary::kPad] = 0.0;
      probs[Vocabulary::kBos] = 0.0;
      for (int v = Vocabulary::kEos; v < vocab_size; ++v) {
        probs[static_cast<std::size_t>(v)] = std::exp(lg(static_cast<ad::Index>(r), v) - mx);
        z += probs[static_cast<std::size_t>(v)];
      }
      for (int v = Vocabulary::kEos; v < vocab_size; ++v) {
        probs[static_cast<std::size_t>(v)] /= z;
      }
      int tok = 0;
      if (sample) {
        tok = nucleus_sample(probs, opts.nucleus_p, rngs[r]);
      } else {
        tok = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
      }
      out[r].logprob += std::log(probs[static_cast<std::size_t>(tok)]);
      if (tok == Vocabulary::kEos) {
        out[r].terminated = true;
        done[r] = true;
      } else {
        out[r].ids.push_back(tok);
        all_done = false;
      }
      inputs[r] = tok;
    }
    if (all_done) {
      break;
    }
  }
  return out;
}

DecodedSentence InstructionDecoder::decode_greedy(const ad::Matrix& cond, int max_len) {
  DecodeOptions o;
  o.source = DecodeSource::Greedy;
  o.max_len = max_len;
  return decode(cond, o).at(0);
}

DecodedSentence InstructionDecoder::decode_nucleus(const ad::Matrix& cond, double p,
                                                   std::uint64_t seed, int max_len) {
  DecodeOptions o;
  o.source = DecodeSource::Nucleus;
  o.nucleus_p = p;
  o.max_len = max_len;
  o.seeds = {seed};
  return decode(cond, o).at(0);
}

std::vector<double> InstructionDecoder::next_distribution(const ad::Matrix& cond,
                                                          const std::vector<int>& prefix) {
  ad::Tape tape(false);
  const Bound b = bind(tape);
  ad::Var c = tape.constant(cond);
  State st = initial_state(b, c);
  std::vector<int> in = {Vocabulary::kBos};
  ad::Var top = step(b, in, c, st);
  for (int id : prefix) {
    in[0] = id;
    top = step(b, in, c, st);
  }
  const ad::Matrix& lg = logits(b, top).value();
  std::vector<double> p(static_cast<std::size_t>(vocab_size));
  const double mx = lg.maxCoeff();
  double z = 0.0;
  for (int v = 0; v < vocab_size; ++v) {
    p[static_cast<std::size_t>(v)] = std::exp(lg(0, v) - mx);
    z += p[static_cast<std::size_t>(v)];
  }
  for (double& x : p) {
    x /= z;
  }
  return p;
}

void InstructionDecoder::collect(nn::ParamList& out) {
  out.push_back(&embedding);
  for (int l = 0; l < layers; ++l) {
    input_proj[static_cast<std::size_t>(l)].collect(out);
    out.push_back(&recurrent[static_cast<std::size_t>(l)]);
  }
  init.collect(out);
  output.collect(out);
}

std::vector<double> per_sequence_nll(const ad::Matrix& token_column, std::size_t n_sequences) {
  std::vector<double> out(n_sequences, 0.0);
  for (ad::Index i = 0; i < token_column.rows(); ++i) {
    out[static_cast<std::size_t>(i) % n_sequences] += token_column(i, 0);
  }
  return out;
}

}  // namespace stepcast
