#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tlb {

enum class Errc {
  InvalidArgument,
  Io,
  // dataset
  MissingClassDir,
  UnreadableImage,
  EmptyDataset,
  ZeroDimension,
  TooFewSamples,
  // models and training
  WeightsUnavailable,
  ShapeMismatch,
  NonFiniteLoss,
  EmptySplit,
  // stacking / hybrid
  SingularFit,
  Leakage,
  SingleClass,
  NonFiniteFeature,
  WidthMismatch,
  // metrics
  LengthMismatch,
  EmptyInput,
  EmptyCounts,
  // bench / report
  NegativeDuration,
  ZeroDuration,
  StoreCorrupt,
  MixedRunKeys,
  DuplicateModel,
  NoComparablePairs,
  NoRecords,
};

std::string_view errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace tlb
