#pragma once

#include "stepcast/autograd.hpp"
#include "stepcast/corpus.hpp"
#include "stepcast/layers.hpp"
#include "stepcast/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>

namespace stepcast::test {

/// Step from space-separated words; "v:" marks a verb and "i:" an ingredient.
inline Step words(const std::string& text) {
  Step s;
  std::istringstream in(text);
  std::string w;
  while (in >> w) {
    Token t;
    if (w.rfind("v:", 0) == 0) {
      t = {w.substr(2), Role::Verb};
    } else if (w.rfind("i:", 0) == 0) {
      t = {w.substr(2), Role::Ingredient};
    } else {
      t = {w, Role::Other};
    }
    s.tokens.push_back(t);
  }
  return s;
}

inline ad::Matrix random_matrix(Rng& rng, ad::Index r, ad::Index c, double scale = 1.0) {
  ad::Matrix m(r, c);
  for (ad::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = scale * rng.normal();
  }
  return m;
}

struct GradCheck {
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;
  std::map<std::string, double> per_module;  // keyed by parameter-name prefix
};

/// Compares analytic parameter gradients (already accumulated in `grad`)
/// with central differences of `loss`. At most `per_tensor` entries per
/// parameter are probed: the largest analytic entries plus random ones.
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(const nn::ParamList& params, const std::function<double()>& loss,
                                 int per_tensor = 8, double h = 1e-5, double floor = 1e-4,
                                 std::uint64_t seed = 99) {
  GradCheck out;
  Rng rng(seed);
  for (ad::Parameter* p : params) {
    const ad::Index n = p->value.size();
    std::vector<ad::Index> idx;
    if (n <= per_tensor) {
      for (ad::Index i = 0; i < n; ++i) idx.push_back(i);
    } else {
      std::vector<ad::Index> order(static_cast<std::size_t>(n));
      for (ad::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      std::partial_sort(order.begin(), order.begin() + per_tensor / 2, order.end(),
                        [&](ad::Index a, ad::Index b) {
                          return std::abs(p->grad.data()[a]) > std::abs(p->grad.data()[b]);
                        });
      idx.assign(order.begin(), order.begin() + per_tensor / 2);
      while (static_cast<int>(idx.size()) < per_tensor) {
        idx.push_back(static_cast<ad::Index>(rng.below(static_cast<std::uint64_t>(n))));
      }
    }
    for (ad::Index i : idx) {
      double& w = p->value.data()[i];
      const double keep = w;
      w = keep + h;
      const double up = loss();
      w = keep - h;
      const double down = loss();
      w = keep;
      const double num = (up - down) / (2.0 * h);
      const double ana = p->grad.data()[i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      ++out.checked;
      double& m = out.per_module[p->name.substr(0, p->name.find('.'))];
      m = std::max(m, rel);
      if (rel > out.max_rel) {
        out.max_rel = rel;
        out.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(ana) +
                    " numeric " + std::to_string(num);
      }
    }
  }
  return out;
}

}  // namespace stepcast::test
