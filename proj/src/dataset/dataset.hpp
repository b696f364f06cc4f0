#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nn/tensor.hpp"

namespace tlb::dataset {

inline constexpr int kImageSize = 224;
inline constexpr int kChannels = 3;

// ASD is the positive class.
enum class Label : int { TD = 0, ASD = 1 };

std::string label_name(Label label);

enum class Partition { Train, Val, Test };

// Pixels are not held here: a PixelSource produces the preprocessed tensor
// on demand (decoded from disk or regenerated from a seed).
struct ImageSample {
  std::string id;
  std::filesystem::path source_path;
  Label label = Label::TD;
  // Partition from an on-disk train/valid/test layout, when there is one.
  std::optional<Partition> presplit;
};

struct DatasetManifest {
  std::vector<ImageSample> samples;
  std::map<Label, std::int64_t> class_counts;
  std::int64_t total = 0;
  std::string content_hash;
  std::int64_t unreadable = 0;
  // How pixels are produced: {"kind":"directory","root":...} or
  // {"kind":"synthetic","n_per_class":...,"seed":...,"margin":...}.
  nlohmann::ordered_json source;

  // index of `id` in samples, or -1
  std::ptrdiff_t index_of(const std::string& id) const;
};

// Digest over the ordered (id, label) pairs.
std::string content_hash(const std::vector<ImageSample>& samples);

// Enumerates root/<class>/*.{jpg,jpeg,png} (or root/{train,valid,test}/<class>/...),
// sorted by (class, filename). Undecodable files are skipped and counted.
DatasetManifest ingest_directory(const std::filesystem::path& root);

// 224x224x3 planar (CHW) float image in [0,1]. `raw` is interleaved HxWxC with
// C in {1, 3, 4}, 8-bit, channels in RGB(A) order.
nn::Tensor preprocess(std::span<const std::uint8_t> raw, int height, int width, int channels);

// Decodes a file and preprocesses it.
nn::Tensor load_image(const std::filesystem::path& path);

inline constexpr double kDefaultSynthMargin = 0.3;

// 2*n_per_class images: ASD samples have mean intensity 0.5 + margin/2, TD
// samples 0.5 - margin/2, each with zero-mean uniform pixel noise.
DatasetManifest synth_dataset(int n_per_class, std::uint64_t seed,
                              double margin = kDefaultSynthMargin);

// Rational fraction; split sizes use exact integer arithmetic.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Fraction&) const = default;
};

enum class SplitStrategy { Standard, Stacking };

struct SplitSpec {
  SplitStrategy strategy = SplitStrategy::Standard;
  Fraction train{4, 5};
  Fraction val{1, 10};
  Fraction test{1, 10};
  std::uint64_t seed = 0;

  static SplitSpec stacking(std::uint64_t seed);
  static SplitSpec standard(std::uint64_t seed);
};

std::string strategy_name(SplitStrategy s);

struct SplitAssignment {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  SplitSpec spec;
};

struct SplitSizes {
  std::int64_t train = 0;
  std::int64_t val = 0;
  std::int64_t test = 0;
};

// floor(f_train*N), floor(f_val*N), remainder.
SplitSizes split_sizes(std::int64_t n, const SplitSpec& spec);

// Stratified per class, shuffled by seed over the manifest order. A STANDARD
// split follows an on-disk train/valid/test layout when every sample has one.
SplitAssignment split(const DatasetManifest& manifest, const SplitSpec& spec);

// Produces preprocessed pixels for manifest samples.
class PixelSource {
 public:
  virtual ~PixelSource() = default;
  // (indices.size(), 3, 224, 224) batch in the given order.
  virtual nn::Tensor load(std::span<const std::size_t> indices) const = 0;
};

std::unique_ptr<PixelSource> pixel_source(const DatasetManifest& manifest);

nlohmann::ordered_json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::ordered_json& j);

}  // namespace tlb::dataset
