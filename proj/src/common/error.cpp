#include "common/error.hpp"

namespace tlb {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
    case Errc::MissingClassDir: return "MissingClassDir";
    case Errc::UnreadableImage: return "UnreadableImage";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::ZeroDimension: return "ZeroDimension";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::WeightsUnavailable: return "WeightsUnavailable";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::SingularFit: return "SingularFit";
    case Errc::Leakage: return "Leakage";
    case Errc::SingleClass: return "SingleClass";
    case Errc::NonFiniteFeature: return "NonFiniteFeature";
    case Errc::WidthMismatch: return "WidthMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::EmptyCounts: return "EmptyCounts";
    case Errc::NegativeDuration: return "NegativeDuration";
    case Errc::ZeroDuration: return "ZeroDuration";
    case Errc::StoreCorrupt: return "StoreCorrupt";
    case Errc::MixedRunKeys: return "MixedRunKeys";
    case Errc::DuplicateModel: return "DuplicateModel";
    case Errc::NoComparablePairs: return "NoComparablePairs";
    case Errc::NoRecords: return "NoRecords";
  }
  return "Unknown";
}

}  // namespace tlb
