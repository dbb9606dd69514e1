#pragma once

// Text metrics for next-step predictions (BLEU, an exact-match METEOR
// variant, ingredient/verb recall), best-of-k selection and the action-level
// diversity probe against the grammar oracle.

#include "stepcast/config.hpp"
#include "stepcast/corpus.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace stepcast {

/// Bucket for decodes that match no grammar action.
inline constexpr std::string_view kOtherAction = "<other>";

/// Intersection over union of unique surfaces; two empty steps score 1.
double jaccard_bow(const Step& a, const Step& b);

/// Index of the candidate with the highest Jaccard similarity to `ground_truth`;
/// ties go to the lowest index. Throws std::invalid_argument on no candidates.
std::size_t select_best(const Step& ground_truth, const std::vector<Step>& candidates);

enum class Average { Micro, Macro };

/// BLEU with n-gram orders 1..max_n and the brevity penalty. Micro pools clipped
/// counts and lengths over the corpus; macro averages unsmoothed sentence scores.
double bleu(const std::vector<Step>& candidates, const std::vector<Step>& references, int max_n,
            Average avg);

/// Sufficient statistics of the exact-match METEOR variant for one pair.
struct MeteorStats {
  int matches = 0;
  int chunks = 0;
  int cand_len = 0;
  int ref_len = 0;
};

MeteorStats meteor_stats(const Step& candidate, const Step& reference);
double meteor_score(const MeteorStats& s);
double meteor_like(const Step& candidate, const Step& reference);
/// Micro pools matches, chunks and lengths; macro averages sentence scores.
double meteor_like(const std::vector<Step>& candidates, const std::vector<Step>& references,
                   Average avg);

struct RecallCounts {
  int ing_hit = 0;
  int ing_total = 0;
  int verb_hit = 0;
  int verb_total = 0;
};

/// Unique INGREDIENT / VERB surfaces of `gt` recovered by `selected`.
RecallCounts ing_verb_recall(const Step& selected, const Step& gt);

struct RecallScores {
  double ing = 0.0;
  double verb = 0.0;
  int ing_samples = 0;
  int verb_samples = 0;
};

/// Pairs without tokens of a role contribute no sample to that role.
RecallScores aggregate_recall(const std::vector<RecallCounts>& counts, Average avg);

struct MetricValues {
  double b1 = 0.0;
  double b4 = 0.0;
  double meteor = 0.0;
  double ing = 0.0;
  double verb = 0.0;
};

struct EvalPair {
  std::string context_id;
  Step ground_truth;
  std::vector<Step> candidates;
};

struct MetricsReport {
  std::string mode;  // "S" or "M"
  int k = 1;
  int pairs = 0;
  Averaging averaging = Averaging::Both;
  MetricValues micro;
  MetricValues macro;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
};

/// Best-of-k evaluation using the first `k` candidates of every pair (all of
/// them when k <= 0).
MetricsReport evaluate_pairs(const std::vector<EvalPair>& pairs, const std::string& mode, int k,
                             Averaging averaging);

/// Column names and values of the flat table, in a fixed order.
std::vector<std::string> metric_columns(Averaging averaging);
std::vector<double> metric_row(const MetricsReport& r);

double tv_distance(const std::map<std::string, double>& p, const std::map<std::string, double>& q);

/// Action whose template matches `step` exactly (slots hold ingredient tokens),
/// else the action with the highest Jaccard similarity to the template's
/// literal words when it reaches `min_jaccard`, else kOtherAction.
std::string map_to_action(const Grammar& grammar, const Step& step, double min_jaccard = 0.5);

/// Produces one decoded next step per context; contexts are procedures whose
/// first `n_observed` steps are observed. `seed` fixes all sampling.
using NextStepSampler = std::function<std::vector<Step>(
    const std::vector<Procedure>& contexts, std::size_t n_observed, std::uint64_t seed)>;

struct DiversityResult {
  double tv = 0.0;
  std::map<std::string, double> empirical;
  std::map<std::string, double> oracle;
  int samples = 0;
};

/// Samples `n_samples` contexts ending at `branch_prefix` from the grammar,
/// predicts one next step for each, maps them to actions and compares the
/// empirical action distribution with the oracle.
DiversityResult diversity_tv(const Grammar& grammar, const std::vector<std::string>& branch_prefix,
                             int n_samples, std::uint64_t seed, const NextStepSampler& sampler);

}  // namespace stepcast
