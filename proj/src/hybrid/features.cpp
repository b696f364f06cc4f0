#include "hybrid/features.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "backbones/train.hpp"
#include "common/digest.hpp"
#include "common/error.hpp"
#include "json.hpp"

namespace tlb::hybrid {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {
constexpr char kMagic[4] = {'T', 'L', 'B', 'F'};
constexpr std::uint32_t kVersion = 1;

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}
}  // namespace

FeatureMatrix extract_features(backbones::Model& vgg16, const Extractor& extractor,
                               const dataset::DatasetManifest& manifest,
                               const dataset::PixelSource& pixels,
                               std::span<const std::string> ids, int batch_size) {
  if (vgg16.spec.id != backbones::BackboneId::VGG16)
    throw Error(Errc::InvalidArgument, "feature extractor must be VGG16");
  const nn::Shape tap = vgg16.graph.shape(vgg16.feature_tap);
  if (tap.per_sample() != kVgg16FeatureWidth)
    throw Error(Errc::ShapeMismatch, "VGG16 tap is " + nn::to_string(tap) + ", expected 512 wide");
  if (batch_size < 1) throw Error(Errc::InvalidArgument, "batch_size must be >= 1");

  FeatureMatrix out;
  out.cols = kVgg16FeatureWidth;
  out.rows = ids.size();
  out.extractor = extractor;
  out.sample_ids.assign(ids.begin(), ids.end());
  out.values.reserve(out.rows * out.cols);
  const std::vector<std::size_t> idx = backbones::indices_of(manifest, ids);
  for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::span<const std::size_t> chunk(idx.data() + b,
                                             std::min<std::size_t>(batch_size, idx.size() - b));
    const nn::Tensor f = backbones::features_at_tap(vgg16, pixels.load(chunk));
    out.values.insert(out.values.end(), f.data(), f.data() + f.size());
  }
  for (float v : out.values)
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteFeature, "extracted features are not finite");
  return out;
}

void save_features(const FeatureMatrix& m, const fs::path& stem) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::string payload;
  payload.append(kMagic, 4);
  auto put = [&](const void* p, std::size_t n) { payload.append(static_cast<const char*>(p), n); };
  const std::uint64_t rows = m.rows;
  const std::uint32_t cols = static_cast<std::uint32_t>(m.cols);
  put(&kVersion, sizeof kVersion);
  put(&rows, sizeof rows);
  put(&cols, sizeof cols);
  std::vector<float> column(m.rows);
  for (std::size_t c = 0; c < m.cols; ++c) {
    for (std::size_t r = 0; r < m.rows; ++r) column[r] = m.values[r * m.cols + c];
    put(column.data(), column.size() * sizeof(float));
  }
  std::ofstream(with_ext(stem, ".bin"), std::ios::binary)
      .write(payload.data(), static_cast<std::streamsize>(payload.size()));

  const ordered_json sidecar = {
      {"extractor",
       {{"backbone", m.extractor.backbone}, {"tap", m.extractor.tap}, {"weights", m.extractor.weights}}},
      {"rows", m.rows},
      {"cols", m.cols},
      {"layout", "columnar float32 little-endian"},
      {"sample_ids", m.sample_ids},
      {"content_hash", sha256_hex(payload)}};
  std::ofstream(with_ext(stem, ".json")) << sidecar.dump(2) << '\n';
}

FeatureMatrix load_features(const fs::path& stem) {
  std::ifstream side(with_ext(stem, ".json"));
  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!side || !bin) throw Error(Errc::Io, "feature cache " + stem.string() + " is missing");
  const ordered_json j = ordered_json::parse(side);
  const std::string payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (sha256_hex(payload) != j.at("content_hash").get<std::string>())
    throw Error(Errc::StoreCorrupt, "feature cache " + stem.string() + " fails its digest");

  FeatureMatrix m;
  m.extractor.backbone = j.at("extractor").at("backbone").get<std::string>();
  m.extractor.tap = j.at("extractor").at("tap").get<std::string>();
  m.extractor.weights = j.at("extractor").at("weights").get<std::string>();
  m.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
  std::uint32_t version = 0, cols = 0;
  std::uint64_t rows = 0;
  const std::size_t header = 4 + sizeof version + sizeof rows + sizeof cols;
  if (payload.size() < header || std::memcmp(payload.data(), kMagic, 4) != 0)
    throw Error(Errc::StoreCorrupt, "feature cache " + stem.string() + " has a bad header");
  std::memcpy(&version, payload.data() + 4, sizeof version);
  std::memcpy(&rows, payload.data() + 8, sizeof rows);
  std::memcpy(&cols, payload.data() + 16, sizeof cols);
  if (version != kVersion || payload.size() != header + rows * cols * sizeof(float) ||
      rows != m.sample_ids.size())
    throw Error(Errc::StoreCorrupt, "feature cache " + stem.string() + " is inconsistent");
  m.rows = rows;
  m.cols = cols;
  m.values.resize(rows * cols);
  const char* p = payload.data() + header;
  for (std::size_t c = 0; c < cols; ++c)
    for (std::size_t r = 0; r < rows; ++r, p += sizeof(float))
      std::memcpy(&m.values[r * cols + c], p, sizeof(float));
  return m;
}

}  // namespace tlb::hybrid
