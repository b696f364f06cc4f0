#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "backbones/backbone.hpp"
#include "dataset/dataset.hpp"
#include "hybrid/gbdt.hpp"

namespace tlb::hybrid {

struct Extractor {
  std::string backbone = "vgg16";
  std::string tap = "head_global_max_pool";
  std::string weights = "random";  // "pretrained", "finetuned" or "random"

  bool operator==(const Extractor&) const = default;
};

inline constexpr std::size_t kVgg16FeatureWidth = 512;

// Row-major N x D.
struct FeatureMatrix {
  std::vector<float> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Extractor extractor;
  std::vector<std::string> sample_ids;

  FeatureView view() const { return {values, rows, cols}; }
};

// Per-sample vectors from the model's feature tap, in `ids` order. The model
// must be VGG16 (the tap is its 512-wide global max pool).
FeatureMatrix extract_features(backbones::Model& vgg16, const Extractor& extractor,
                               const dataset::DatasetManifest& manifest,
                               const dataset::PixelSource& pixels,
                               std::span<const std::string> ids, int batch_size);

// Columnar float32 file (<stem>.bin) plus JSON sidecar (<stem>.json) with the
// extractor, sample ids and a digest of the binary payload.
void save_features(const FeatureMatrix& features, const std::filesystem::path& stem);
FeatureMatrix load_features(const std::filesystem::path& stem);

}  // namespace tlb::hybrid
