#include "stepcast/metrics.hpp"

#include "stepcast/errors.hpp"
#include "stepcast/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace stepcast {

namespace {

std::set<std::string> surface_set(const Step& s) {
  std::set<std::string> out;
  for (const auto& t : s.tokens) {
    out.insert(t.surface);
  }
  return out;
}

std::vector<std::string> surfaces(const Step& s) {
  std::vector<std::string> out;
  out.reserve(s.tokens.size());
  for (const auto& t : s.tokens) {
    out.push_back(t.surface);
  }
  return out;
}

double jaccard_sets(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) {
    return 1.0;
  }
  std::size_t inter = 0;
  for (const auto& w : a) {
    inter += b.count(w);
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const std::vector<std::string>& w, int n) {
  NgramCounts out;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= w.size(); ++i) {
    out[std::vector<std::string>(w.begin() + static_cast<std::ptrdiff_t>(i),
                                 w.begin() + static_cast<std::ptrdiff_t>(i + un))] += 1;
  }
  return out;
}

struct BleuStats {
  std::vector<long> match;
  std::vector<long> total;
  long cand_len = 0;
  long ref_len = 0;
};

BleuStats bleu_stats(const Step& cand, const Step& ref, int max_n) {
  BleuStats s;
  const auto c = surfaces(cand);
  const auto r = surfaces(ref);
  s.cand_len = static_cast<long>(c.size());
  s.ref_len = static_cast<long>(r.size());
  for (int n = 1; n <= max_n; ++n) {
    const NgramCounts cc = ngrams(c, n);
    const NgramCounts rc = ngrams(r, n);
    long m = 0;
    long t = 0;
    for (const auto& [g, cnt] : cc) {
      t += cnt;
      auto it = rc.find(g);
      if (it != rc.end()) {
        m += std::min(cnt, it->second);
      }
    }
    s.match.push_back(m);
    s.total.push_back(t);
  }
  return s;
}

double bleu_from(const BleuStats& s, int max_n) {
  if (s.cand_len == 0) {
    return 0.0;
  }
  double log_p = 0.0;
  for (int n = 0; n < max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    if (s.match[un] == 0 || s.total[un] == 0) {
      return 0.0;
    }
    log_p += std::log(static_cast<double>(s.match[un]) / static_cast<double>(s.total[un]));
  }
  const double bp = std::exp(std::min(
      0.0, 1.0 - static_cast<double>(s.ref_len) / static_cast<double>(s.cand_len)));
  return bp * std::exp(log_p / static_cast<double>(max_n));
}

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b || a == 0) {
    throw std::invalid_argument(std::string(what) + ": need equally many candidates and references (>= 1)");
  }
}

}  // namespace

double jaccard_bow(const Step& a, const Step& b) {
  return jaccard_sets(surface_set(a), surface_set(b));
}

std::size_t select_best(const Step& ground_truth, const std::vector<Step>& candidates) {
  if (candidates.empty()) {
    throw std::invalid_argument("select_best: no candidates");
  }
  const auto gt = surface_set(ground_truth);
  std::size_t best = 0;
  double best_j = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double j = jaccard_sets(surface_set(candidates[i]), gt);
    if (j > best_j) {
      best_j = j;
      best = i;
    }
  }
  return best;
}

double bleu(const std::vector<Step>& candidates, const std::vector<Step>& references, int max_n,
            Average avg) {
  require_aligned(candidates.size(), references.size(), "bleu");
  if (max_n < 1) {
    throw std::invalid_argument("bleu: max_n must be >= 1");
  }
  if (avg == Average::Macro) {
    double s = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      s += bleu_from(bleu_stats(candidates[i], references[i], max_n), max_n);
    }
    return s / static_cast<double>(candidates.size());
  }
  BleuStats pooled;
  pooled.match.assign(static_cast<std::size_t>(max_n), 0);
  pooled.total.assign(static_cast<std::size_t>(max_n), 0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const BleuStats s = bleu_stats(candidates[i], references[i], max_n);
    for (std::size_t n = 0; n < pooled.match.size(); ++n) {
      pooled.match[n] += s.match[n];
      pooled.total[n] += s.total[n];
    }
    pooled.cand_len += s.cand_len;
    pooled.ref_len += s.ref_len;
  }
  return bleu_from(pooled, max_n);
}

MeteorStats meteor_stats(const Step& candidate, const Step& reference) {
  MeteorStats s;
  const auto c = surfaces(candidate);
  const auto r = surfaces(reference);
  s.cand_len = static_cast<int>(c.size());
  s.ref_len = static_cast<int>(r.size());
  std::vector<bool> used(r.size(), false);
  std::vector<int> align(c.size(), -1);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (!used[j] && r[j] == c[i]) {
        used[j] = true;
        align[i] = static_cast<int>(j);
        ++s.matches;
        break;
      }
    }
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (align[i] < 0) {
      continue;
    }
    const bool continues = i > 0 && align[i - 1] >= 0 && align[i] == align[i - 1] + 1;
    if (!continues) {
      ++s.chunks;
    }
  }
  return s;
}

double meteor_score(const MeteorStats& s) {
  if (s.matches == 0) {
    return 0.0;
  }
  const double m = s.matches;
  const double p = m / s.cand_len;
  const double r = m / s.ref_len;
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(s.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return f * (1.0 - penalty);
}

double meteor_like(const Step& candidate, const Step& reference) {
  return meteor_score(meteor_stats(candidate, reference));
}

double meteor_like(const std::vector<Step>& candidates, const std::vector<Step>& references,
                   Average avg) {
  require_aligned(candidates.size(), references.size(), "meteor_like");
  if (avg == Average::Macro) {
    double s = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      s += meteor_like(candidates[i], references[i]);
    }
    return s / static_cast<double>(candidates.size());
  }
  MeteorStats pooled;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const MeteorStats s = meteor_stats(candidates[i], references[i]);
    pooled.matches += s.matches;
    pooled.chunks += s.chunks;
    pooled.cand_len += s.cand_len;
    pooled.ref_len += s.ref_len;
  }
  return meteor_score(pooled);
}

RecallCounts ing_verb_recall(const Step& selected, const Step& gt) {
  std::set<std::string> ing;
  std::set<std::string> verb;
  for (const auto& t : gt.tokens) {
    if (t.role == Role::Ingredient) {
      ing.insert(t.surface);
    } else if (t.role == Role::Verb) {
      verb.insert(t.surface);
    }
  }
  const auto have = surface_set(selected);
  RecallCounts c;
  c.ing_total = static_cast<int>(ing.size());
  c.verb_total = static_cast<int>(verb.size());
  for (const auto& w : ing) {
    c.ing_hit += static_cast<int>(have.count(w));
  }
  for (const auto& w : verb) {
    c.verb_hit += static_cast<int>(have.count(w));
  }
  return c;
}

RecallScores aggregate_recall(const std::vector<RecallCounts>& counts, Average avg) {
  RecallScores r;
  long ih = 0, it = 0, vh = 0, vt = 0;
  double ing_sum = 0.0, verb_sum = 0.0;
  for (const auto& c : counts) {
    if (c.ing_total > 0) {
      ++r.ing_samples;
      ih += c.ing_hit;
      it += c.ing_total;
      ing_sum += static_cast<double>(c.ing_hit) / c.ing_total;
    }
    if (c.verb_total > 0) {
      ++r.verb_samples;
      vh += c.verb_hit;
      vt += c.verb_total;
      verb_sum += static_cast<double>(c.verb_hit) / c.verb_total;
    }
  }
  if (avg == Average::Micro) {
    r.ing = it > 0 ? static_cast<double>(ih) / static_cast<double>(it) : 0.0;
    r.verb = vt > 0 ? static_cast<double>(vh) / static_cast<double>(vt) : 0.0;
  } else {
    r.ing = r.ing_samples > 0 ? ing_sum / r.ing_samples : 0.0;
    r.verb = r.verb_samples > 0 ? verb_sum / r.verb_samples : 0.0;
  }
  return r;
}

namespace {

nlohmann::json values_json(const MetricValues& v) {
  return {{"ing", v.ing}, {"verb", v.verb}, {"b1", v.b1}, {"b4", v.b4}, {"meteor_like", v.meteor}};
}

MetricValues values_from(const nlohmann::json& j) {
  MetricValues v;
  v.ing = j.at("ing").get<double>();
  v.verb = j.at("verb").get<double>();
  v.b1 = j.at("b1").get<double>();
  v.b4 = j.at("b4").get<double>();
  v.meteor = j.at("meteor_like").get<double>();
  return v;
}

bool has_micro(Averaging a) { return a != Averaging::Macro; }
bool has_macro(Averaging a) { return a != Averaging::Micro; }

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"mode", mode}, {"k", k}, {"pairs", pairs},
                      {"averaging", std::string(averaging_name(averaging))}};
  if (has_micro(averaging)) {
    j["micro"] = values_json(micro);
  }
  if (has_macro(averaging)) {
    j["macro"] = values_json(macro);
  }
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.mode = j.at("mode").get<std::string>();
    r.k = j.at("k").get<int>();
    r.pairs = j.at("pairs").get<int>();
    r.averaging = parse_averaging(j.at("averaging").get<std::string>());
    if (has_micro(r.averaging)) {
      r.micro = values_from(j.at("micro"));
    }
    if (has_macro(r.averaging)) {
      r.macro = values_from(j.at("macro"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics report schema mismatch: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("metrics report schema mismatch: ") + e.what());
  }
  return r;
}

MetricsReport evaluate_pairs(const std::vector<EvalPair>& pairs, const std::string& mode, int k,
                             Averaging averaging) {
  if (pairs.empty()) {
    throw DataError("no evaluation pairs");
  }
  std::vector<Step> chosen;
  std::vector<Step> refs;
  std::vector<RecallCounts> recall;
  int used_k = 0;
  for (const auto& p : pairs) {
    if (p.candidates.empty()) {
      throw DataError("context " + p.context_id + " has no candidates");
    }
    const std::size_t n = k <= 0 ? p.candidates.size()
                                 : std::min(p.candidates.size(), static_cast<std::size_t>(k));
    used_k = std::max(used_k, static_cast<int>(n));
    const std::vector<Step> pool(p.candidates.begin(),
                                 p.candidates.begin() + static_cast<std::ptrdiff_t>(n));
    const Step& best = pool[select_best(p.ground_truth, pool)];
    chosen.push_back(best);
    refs.push_back(p.ground_truth);
    recall.push_back(ing_verb_recall(best, p.ground_truth));
  }
  MetricsReport r;
  r.mode = mode;
  r.k = used_k;
  r.pairs = static_cast<int>(pairs.size());
  r.averaging = averaging;
  auto fill = [&](MetricValues& v, Average avg) {
    v.b1 = bleu(chosen, refs, 1, avg);
    v.b4 = bleu(chosen, refs, 4, avg);
    v.meteor = meteor_like(chosen, refs, avg);
    const RecallScores rs = aggregate_recall(recall, avg);
    v.ing = rs.ing;
    v.verb = rs.verb;
  };
  if (has_micro(averaging)) {
    fill(r.micro, Average::Micro);
  }
  if (has_macro(averaging)) {
    fill(r.macro, Average::Macro);
  }
  return r;
}

std::vector<std::string> metric_columns(Averaging averaging) {
  std::vector<std::string> out;
  for (const char* avg : {"micro", "macro"}) {
    if ((std::string(avg) == "micro" && !has_micro(averaging)) ||
        (std::string(avg) == "macro" && !has_macro(averaging))) {
      continue;
    }
    for (const char* m : {"ING", "VERB", "B1", "B4", "MET"}) {
      out.push_back(std::string(m) + "_" + avg);
    }
  }
  return out;
}

std::vector<double> metric_row(const MetricsReport& r) {
  std::vector<double> out;
  auto add = [&](const MetricValues& v) {
    out.insert(out.end(), {v.ing, v.verb, v.b1, v.b4, v.meteor});
  };
  if (has_micro(r.averaging)) {
    add(r.micro);
  }
  if (has_macro(r.averaging)) {
    add(r.macro);
  }
  return out;
}

double tv_distance(const std::map<std::string, double>& p, const std::map<std::string, double>& q) {
  std::set<std::string> keys;
  for (const auto& [k, v] : p) keys.insert(k);
  for (const auto& [k, v] : q) keys.insert(k);
  double s = 0.0;
  for (const auto& k : keys) {
    const auto ip = p.find(k);
    const auto iq = q.find(k);
    s += std::abs((ip == p.end() ? 0.0 : ip->second) - (iq == q.end() ? 0.0 : iq->second));
  }
  return 0.5 * s;
}

std::string map_to_action(const Grammar& grammar, const Step& step, double min_jaccard) {
  for (const auto& [id, tmpl] : grammar.actions) {
    if (tmpl.pattern.size() != step.tokens.size()) {
      continue;
    }
    bool ok = true;
    for (std::size_t i = 0; i < tmpl.pattern.size() && ok; ++i) {
      const Token& t = step.tokens[i];
      ok = tmpl.pattern[i] == kIngredientSlot ? t.role == Role::Ingredient
                                              : tmpl.pattern[i] == t.surface;
    }
    if (ok) {
      return id;
    }
  }
  std::set<std::string> words;
  for (const auto& t : step.tokens) {
    if (t.role != Role::Ingredient) {
      words.insert(t.surface);
    }
  }
  std::string best(kOtherAction);
  double best_j = min_jaccard;
  bool found = false;
  for (const auto& [id, tmpl] : grammar.actions) {
    std::set<std::string> lit;
    for (const auto& w : tmpl.pattern) {
      if (w != kIngredientSlot) {
        lit.insert(w);
      }
    }
    const double j = jaccard_sets(words, lit);
    if ((!found && j >= best_j) || (found && j > best_j)) {
      best = id;
      best_j = j;
      found = true;
    }
  }
  return best;
}

DiversityResult diversity_tv(const Grammar& grammar, const std::vector<std::string>& branch_prefix,
                             int n_samples, std::uint64_t seed, const NextStepSampler& sampler) {
  if (n_samples < 1) {
    throw UsageError("diversity_tv needs at least one sample");
  }
  DiversityResult res;
  res.oracle = oracle_next_distribution(grammar, branch_prefix);
  std::vector<Procedure> contexts;
  constexpr int kBatch = 256;
  constexpr int kMaxRounds = 400;
  for (int round = 0; round < kMaxRounds && static_cast<int>(contexts.size()) < n_samples;
       ++round) {
    for (auto& p : generate_corpus(grammar, kBatch, derive_seed(seed, {0x7072, static_cast<std::uint64_t>(round)}))) {
      if (p.steps.size() >= branch_prefix.size() &&
          action_prefix(p, branch_prefix.size()) == branch_prefix) {
        contexts.push_back(std::move(p));
        if (static_cast<int>(contexts.size()) == n_samples) {
          break;
        }
      }
    }
  }
  if (static_cast<int>(contexts.size()) < n_samples) {
    throw DataError("could not sample enough contexts at the branch prefix");
  }
  const std::vector<Step> decoded = sampler(contexts, branch_prefix.size(), derive_seed(seed, {0x736d}));
  if (decoded.size() != contexts.size()) {
    throw std::logic_error("diversity_tv: sampler returned the wrong number of steps");
  }
  for (const Step& s : decoded) {
    res.empirical[map_to_action(grammar, s)] += 1.0 / static_cast<double>(decoded.size());
  }
  res.samples = static_cast<int>(decoded.size());
  res.tv = tv_distance(res.empirical, res.oracle);
  return res;
}

}  // namespace stepcast
