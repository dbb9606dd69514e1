#include "stepcast/baseline.hpp"

#include "stepcast/errors.hpp"
#include "stepcast/model.hpp"

namespace stepcast {

std::vector<Candidate> baseline_predict(Model& model, const Matrix& context, PredictMode mode,
                                        int k, double p, int max_len, std::uint64_t seed) {
  if (model.kind != ModelKind::Baseline) {
    throw UsageError("baseline_predict needs a baseline model");
  }
  if (context.rows() != 1) {
    throw std::invalid_argument("baseline_predict: expected one context row");
  }
  if (!(p > 0.0 && p <= 1.0)) {
    throw UsageError("nucleus p must be in (0, 1]");
  }
  PredictRequest req;
  req.mode = mode;
  req.k = k;
  req.nucleus_p = p;
  req.max_len = max_len;
  req.seed = seed;
  const std::uint64_t key[1] = {0};
  return std::move(predict_next(model, context, key, req).front());
}

}  // namespace stepcast
