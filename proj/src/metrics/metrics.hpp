#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>

namespace tlb::metrics {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Metric names ("precision", "recall", "f1", "accuracy") whose denominator was zero.
  std::set<std::string> zero_division_flags;
};

// Predicted positive when probability >= threshold; label 1 is the positive class.
ConfusionCounts confusion(std::span<const double> probabilities, std::span<const int> labels,
                          double threshold = 0.5);

// Precision, recall, F1 and accuracy; 0/0 yields 0 and is flagged.
MetricsReport compute_metrics(const ConfusionCounts& c);

}  // namespace tlb::metrics
