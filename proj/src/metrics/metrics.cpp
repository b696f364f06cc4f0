#include "metrics/metrics.hpp"

#include "common/error.hpp"

namespace tlb::metrics {

ConfusionCounts confusion(std::span<const double> probabilities, std::span<const int> labels,
                          double threshold) {
  if (probabilities.size() != labels.size())
    throw Error(Errc::LengthMismatch, std::to_string(probabilities.size()) + " probabilities vs " +
                                          std::to_string(labels.size()) + " labels");
  if (probabilities.empty()) throw Error(Errc::EmptyInput, "no predictions to evaluate");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw Error(Errc::InvalidArgument, "threshold must lie in (0, 1)");

  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw Error(Errc::InvalidArgument, "label at " + std::to_string(i) + " is not binary");
    const bool predicted = probabilities[i] >= threshold;
    if (labels[i] == 1)
      ++(predicted ? c.tp : c.fn);
    else
      ++(predicted ? c.fp : c.tn);
  }
  return c;
}

namespace {

double ratio(std::int64_t num, std::int64_t den, const char* name, MetricsReport& r) {
  if (den == 0) {
    r.zero_division_flags.insert(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_metrics(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0)
    throw Error(Errc::InvalidArgument, "confusion counts must be non-negative");
  if (c.total() == 0) throw Error(Errc::EmptyCounts, "confusion counts are all zero");

  MetricsReport r;
  r.precision = ratio(c.tp, c.tp + c.fp, "precision", r);
  r.recall = ratio(c.tp, c.tp + c.fn, "recall", r);
  const double sum = r.precision + r.recall;
  if (sum == 0.0)
    r.zero_division_flags.insert("f1");
  else
    r.f1 = 2.0 * r.precision * r.recall / sum;
  r.accuracy = ratio(c.tp + c.tn, c.total(), "accuracy", r);
  return r;
}

}  // namespace tlb::metrics
