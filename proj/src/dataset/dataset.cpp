#include "dataset/dataset.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstring>
#include <iostream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "common/digest.hpp"
#include "common/error.hpp"
#include "nn/rng.hpp"

namespace tlb::dataset {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string label_name(Label label) { return label == Label::ASD ? "ASD" : "TD"; }

namespace {

std::string lower(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

std::optional<Label> label_for_dir(const std::string& name) {
  static const std::array<const char*, 3> asd = {"autistic", "autism", "asd"};
  static const std::array<const char*, 7> td = {"non_autistic", "non-autistic", "nonautistic",
                                                "non_autism",   "td",           "typical",
                                                "typically_developing"};
  const std::string n = lower(name);
  for (const char* a : asd)
    if (n == a) return Label::ASD;
  for (const char* t : td)
    if (n == t) return Label::TD;
  return std::nullopt;
}

std::optional<Partition> partition_for_dir(const std::string& name) {
  const std::string n = lower(name);
  if (n == "train") return Partition::Train;
  if (n == "valid" || n == "val" || n == "validation") return Partition::Val;
  if (n == "test") return Partition::Test;
  return std::nullopt;
}

std::string partition_name(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Val: return "val";
    case Partition::Test: return "test";
  }
  return "?";
}

bool is_image_file(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

std::vector<fs::path> subdirectories(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

struct Candidate {
  std::string class_dir;
  std::string id;
  fs::path path;
  Label label;
  std::optional<Partition> presplit;
};

// Class directories under `dir`; throws when fewer than both classes exist.
std::vector<std::pair<fs::path, Label>> class_dirs(const fs::path& dir) {
  std::vector<std::pair<fs::path, Label>> out;
  bool have[2] = {false, false};
  for (const fs::path& sub : subdirectories(dir))
    if (const auto label = label_for_dir(sub.filename().string())) {
      out.emplace_back(sub, *label);
      have[static_cast<int>(*label)] = true;
    }
  if (!have[0] || !have[1])
    throw Error(Errc::MissingClassDir,
                dir.string() +
                    " needs one subdirectory per class (ASD: autistic/, TD: non_autistic/); found " +
                    std::to_string(out.size()) + " class director" + (out.size() == 1 ? "y" : "ies"));
  return out;
}

cv::Mat decode(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) return img;
  if (img.depth() == CV_16U) img.convertTo(img, CV_8U, 1.0 / 257.0);
  else if (img.depth() != CV_8U) img.convertTo(img, CV_8U);
  switch (img.channels()) {
    case 3: cv::cvtColor(img, img, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(img, img, cv::COLOR_BGRA2RGBA); break;
    default: break;
  }
  return img;
}

}  // namespace

std::ptrdiff_t DatasetManifest::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].id == id) return static_cast<std::ptrdiff_t>(i);
  return -1;
}

std::string content_hash(const std::vector<ImageSample>& samples) {
  std::string text;
  for (const ImageSample& s : samples) text += s.id + '\t' + label_name(s.label) + '\n';
  return sha256_hex(text);
}

namespace {

void finalize(DatasetManifest& m) {
  m.class_counts = {{Label::ASD, 0}, {Label::TD, 0}};
  for (const ImageSample& s : m.samples) ++m.class_counts[s.label];
  m.total = static_cast<std::int64_t>(m.samples.size());
  m.content_hash = content_hash(m.samples);
}

}  // namespace

DatasetManifest ingest_directory(const fs::path& root) {
  if (!fs::is_directory(root))
    throw Error(Errc::MissingClassDir, root.string() + " is not a directory");

  std::vector<std::pair<fs::path, std::optional<Partition>>> roots;
  for (const fs::path& sub : subdirectories(root))
    if (const auto p = partition_for_dir(sub.filename().string())) roots.emplace_back(sub, p);
  const bool presplit = !roots.empty();
  if (!presplit) roots.emplace_back(root, std::nullopt);

  std::vector<Candidate> found;
  for (const auto& [dir, part] : roots)
    for (const auto& [cdir, label] : class_dirs(dir))
      for (const auto& e : fs::directory_iterator(cdir)) {
        if (!e.is_regular_file() || !is_image_file(e.path())) continue;
        const std::string id = fs::relative(e.path(), root).generic_string();
        found.push_back({cdir.filename().string(), id, e.path(), label, part});
      }
  std::sort(found.begin(), found.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.class_dir, a.id) < std::tie(b.class_dir, b.id);
  });

  DatasetManifest m;
  for (const Candidate& c : found) {
    if (decode(c.path).empty()) {
      std::cerr << "warning: skipping undecodable image " << c.path.string() << '\n';
      ++m.unreadable;
      continue;
    }
    m.samples.push_back({c.id, c.path, c.label, c.presplit});
  }
  if (m.samples.empty())
    throw Error(Errc::EmptyDataset, "no decodable images under " + root.string());
  finalize(m);
  m.source = {{"kind", "directory"}, {"root", fs::absolute(root).lexically_normal().string()}};
  return m;
}

nn::Tensor preprocess(std::span<const std::uint8_t> raw, int height, int width, int channels) {
  if (height <= 0 || width <= 0)
    throw Error(Errc::ZeroDimension, "image is " + std::to_string(height) + "x" +
                                         std::to_string(width));
  if (channels != 1 && channels != 3 && channels != 4)
    throw Error(Errc::InvalidArgument, "unsupported channel count " + std::to_string(channels));
  const auto need = static_cast<std::size_t>(height) * width * channels;
  if (raw.size() < need) throw Error(Errc::InvalidArgument, "pixel buffer too small");

  const cv::Mat src(height, width, CV_8UC(channels), const_cast<std::uint8_t*>(raw.data()));
  cv::Mat rgb;
  switch (channels) {
    case 1: cv::cvtColor(src, rgb, cv::COLOR_GRAY2RGB); break;
    case 4: cv::cvtColor(src, rgb, cv::COLOR_RGBA2RGB); break;
    default: rgb = src; break;
  }
  cv::Mat sized;
  if (height == kImageSize && width == kImageSize)
    sized = rgb;
  else
    cv::resize(rgb, sized, cv::Size(kImageSize, kImageSize), 0, 0, cv::INTER_LINEAR);

  nn::Tensor out({1, kChannels, kImageSize, kImageSize});
  const std::size_t plane = static_cast<std::size_t>(kImageSize) * kImageSize;
  float* dst = out.data();
  for (int y = 0; y < kImageSize; ++y) {
    const std::uint8_t* row = sized.ptr<std::uint8_t>(y);
    for (int x = 0; x < kImageSize; ++x)
      for (int c = 0; c < kChannels; ++c)
        dst[c * plane + static_cast<std::size_t>(y) * kImageSize + x] =
            static_cast<float>(row[x * kChannels + c]) / 255.0f;
  }
  return out;
}

nn::Tensor load_image(const fs::path& path) {
  cv::Mat img = decode(path);
  if (img.empty()) throw Error(Errc::UnreadableImage, "cannot decode " + path.string());
  if (!img.isContinuous()) img = img.clone();
  return preprocess(std::span<const std::uint8_t>(img.data, img.total() * img.elemSize()), img.rows,
                    img.cols, img.channels());
}

namespace {

void synth_pixels(std::uint64_t seed, std::size_t index, Label label, double margin, float* out) {
  constexpr float kNoise = 0.25f;
  const std::size_t n = static_cast<std::size_t>(kChannels) * kImageSize * kImageSize;
  nn::Rng rng(nn::mix_seed(seed, index));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = rng.uniform(-kNoise, kNoise);
    sum += out[i];
  }
  // remove the noise mean so every image sits exactly at its class level
  const auto shift = static_cast<float>(sum / static_cast<double>(n));
  const auto base = static_cast<float>(label == Label::ASD ? 0.5 + margin / 2 : 0.5 - margin / 2);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::clamp(base + out[i] - shift, 0.0f, 1.0f);
}

}  // namespace

DatasetManifest synth_dataset(int n_per_class, std::uint64_t seed, double margin) {
  if (n_per_class < 1) throw Error(Errc::InvalidArgument, "n_per_class must be at least 1");
  if (!(margin > 0.0 && margin <= 0.5))
    throw Error(Errc::InvalidArgument, "synthetic margin must lie in (0, 0.5]");
  DatasetManifest m;
  for (Label label : {Label::ASD, Label::TD})
    for (int i = 0; i < n_per_class; ++i) {
      char id[48];
      std::snprintf(id, sizeof id, "synth/%s/%05d", label == Label::ASD ? "asd" : "td", i);
      m.samples.push_back({id, {}, label, std::nullopt});
    }
  finalize(m);
  m.source = {{"kind", "synthetic"}, {"n_per_class", n_per_class}, {"seed", seed}, {"margin", margin}};
  return m;
}

std::string strategy_name(SplitStrategy s) {
  return s == SplitStrategy::Stacking ? "STACKING" : "STANDARD";
}

SplitSpec SplitSpec::stacking(std::uint64_t seed) {
  return {SplitStrategy::Stacking, {3, 5}, {1, 10}, {3, 10}, seed};
}

SplitSpec SplitSpec::standard(std::uint64_t seed) {
  return {SplitStrategy::Standard, {4, 5}, {1, 10}, {1, 10}, seed};
}

namespace {

void validate(const SplitSpec& spec) {
  for (const Fraction& f : {spec.train, spec.val, spec.test})
    if (f.den <= 0 || f.num <= 0 || f.num >= f.den)
      throw Error(Errc::InvalidArgument, "split fractions must each lie in (0, 1)");
  // a/b + c/d + e/f == 1  <=>  adf + cbf + ebd == bdf
  const std::int64_t b = spec.train.den, d = spec.val.den, f = spec.test.den;
  if (spec.train.num * d * f + spec.val.num * b * f + spec.test.num * b * d != b * d * f)
    throw Error(Errc::InvalidArgument, "split fractions must sum to exactly 1");
  if (spec.strategy == SplitStrategy::Stacking &&
      !(spec.train.num * 5 == spec.train.den * 3 && spec.val.num * 10 == spec.val.den &&
        spec.test.num * 10 == spec.test.den * 3))
    throw Error(Errc::InvalidArgument, "STACKING fractions are fixed at (0.6, 0.1, 0.3)");
}

std::int64_t floor_of(const Fraction& f, std::int64_t n) { return n * f.num / f.den; }

// Adds the global shortfall of a floor-rule part one sample at a time to the
// classes with the largest fractional remainders.
void top_up(std::vector<std::int64_t>& part, std::int64_t target, const Fraction& f,
            const std::vector<std::int64_t>& class_n, const std::vector<std::int64_t>& used) {
  std::int64_t have = 0;
  for (std::int64_t v : part) have += v;
  std::vector<std::size_t> order(part.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return (class_n[a] * f.num) % f.den > (class_n[b] * f.num) % f.den;
  });
  for (std::size_t k = 0; have < target && k < 2 * order.size(); ++k) {
    const std::size_t c = order[k % order.size()];
    if (used[c] + part[c] < class_n[c]) {
      ++part[c];
      ++have;
    }
  }
}

}  // namespace

SplitSizes split_sizes(std::int64_t n, const SplitSpec& spec) {
  validate(spec);
  SplitSizes s;
  s.train = floor_of(spec.train, n);
  s.val = floor_of(spec.val, n);
  s.test = n - s.train - s.val;
  return s;
}

SplitAssignment split(const DatasetManifest& manifest, const SplitSpec& spec) {
  const std::int64_t n = manifest.total;
  const SplitSizes sizes = split_sizes(n, spec);
  SplitAssignment out;
  out.spec = spec;

  const bool use_layout =
      spec.strategy == SplitStrategy::Standard && !manifest.samples.empty() &&
      std::all_of(manifest.samples.begin(), manifest.samples.end(),
                  [](const ImageSample& s) { return s.presplit.has_value(); });
  if (use_layout) {
    for (const ImageSample& s : manifest.samples) {
      switch (*s.presplit) {
        case Partition::Train: out.train_ids.push_back(s.id); break;
        case Partition::Val: out.val_ids.push_back(s.id); break;
        case Partition::Test: out.test_ids.push_back(s.id); break;
      }
    }
    if (out.train_ids.empty() || out.val_ids.empty() || out.test_ids.empty())
      throw Error(Errc::TooFewSamples, "on-disk train/valid/test layout has an empty part");
    return out;
  }

  if (sizes.train <= 0 || sizes.val <= 0 || sizes.test <= 0)
    throw Error(Errc::TooFewSamples,
                std::to_string(n) + " samples leave an empty " + strategy_name(spec.strategy) +
                    " split (" + std::to_string(sizes.train) + "/" + std::to_string(sizes.val) +
                    "/" + std::to_string(sizes.test) + ")");

  // per-class index lists in manifest order
  std::vector<std::vector<std::size_t>> members(2);
  for (std::size_t i = 0; i < manifest.samples.size(); ++i)
    members[static_cast<int>(manifest.samples[i].label)].push_back(i);
  std::vector<std::int64_t> class_n(2), train(2), val(2), none(2, 0);
  for (int c = 0; c < 2; ++c) {
    class_n[c] = static_cast<std::int64_t>(members[c].size());
    train[c] = floor_of(spec.train, class_n[c]);
    val[c] = floor_of(spec.val, class_n[c]);
  }
  top_up(train, sizes.train, spec.train, class_n, val);
  top_up(val, sizes.val, spec.val, class_n, train);

  std::vector<int> where(manifest.samples.size(), 2);
  for (int c = 0; c < 2; ++c) {
    std::vector<std::size_t> order = members[c];
    nn::Rng rng(nn::mix_seed(spec.seed, static_cast<std::uint64_t>(c)));
    nn::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto kk = static_cast<std::int64_t>(k);
      where[order[k]] = kk < train[c] ? 0 : (kk < train[c] + val[c] ? 1 : 2);
    }
  }
  for (std::size_t i = 0; i < where.size(); ++i) {
    const std::string& id = manifest.samples[i].id;
    (where[i] == 0 ? out.train_ids : where[i] == 1 ? out.val_ids : out.test_ids).push_back(id);
  }
  return out;
}

namespace {

class DirectorySource final : public PixelSource {
 public:
  explicit DirectorySource(std::vector<fs::path> paths) : paths_(std::move(paths)) {}

  nn::Tensor load(std::span<const std::size_t> indices) const override {
    nn::Tensor batch;
    batch.reset_uninitialized({static_cast<int>(indices.size()), kChannels, kImageSize, kImageSize});
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const nn::Tensor img = load_image(paths_.at(indices[k]));
      std::copy(img.data(), img.data() + img.size(), batch.sample(static_cast<int>(k)));
    }
    return batch;
  }

 private:
  std::vector<fs::path> paths_;
};

class SyntheticSource final : public PixelSource {
 public:
  SyntheticSource(std::uint64_t seed, double margin, std::vector<Label> labels)
      : seed_(seed), margin_(margin), labels_(std::move(labels)) {}

  nn::Tensor load(std::span<const std::size_t> indices) const override {
    nn::Tensor batch;
    batch.reset_uninitialized({static_cast<int>(indices.size()), kChannels, kImageSize, kImageSize});
    for (std::size_t k = 0; k < indices.size(); ++k)
      synth_pixels(seed_, indices[k], labels_.at(indices[k]), margin_,
                   batch.sample(static_cast<int>(k)));
    return batch;
  }

 private:
  std::uint64_t seed_;
  double margin_;
  std::vector<Label> labels_;
};

}  // namespace

std::unique_ptr<PixelSource> pixel_source(const DatasetManifest& manifest) {
  const std::string kind = manifest.source.value("kind", "");
  if (kind == "synthetic") {
    std::vector<Label> labels;
    for (const ImageSample& s : manifest.samples) labels.push_back(s.label);
    return std::make_unique<SyntheticSource>(manifest.source.at("seed").get<std::uint64_t>(),
                                             manifest.source.at("margin").get<double>(),
                                             std::move(labels));
  }
  if (kind == "directory") {
    std::vector<fs::path> paths;
    for (const ImageSample& s : manifest.samples) paths.push_back(s.source_path);
    return std::make_unique<DirectorySource>(std::move(paths));
  }
  throw Error(Errc::InvalidArgument, "manifest has no pixel source");
}

ordered_json to_json(const DatasetManifest& m) {
  ordered_json j;
  j["total"] = m.total;
  j["class_counts"] = {{"ASD", m.class_counts.count(Label::ASD) ? m.class_counts.at(Label::ASD) : 0},
                       {"TD", m.class_counts.count(Label::TD) ? m.class_counts.at(Label::TD) : 0}};
  j["content_hash"] = m.content_hash;
  j["unreadable"] = m.unreadable;
  j["source"] = m.source;
  j["preprocessing"] = {{"size", {kImageSize, kImageSize, kChannels}},
                        {"interpolation", "bilinear"},
                        {"normalization", "[0,1]"},
                        {"label_encoding", {{"ASD", 1}, {"TD", 0}}}};
  ordered_json samples = ordered_json::array();
  for (const ImageSample& s : m.samples) {
    ordered_json e = {{"id", s.id}, {"label", label_name(s.label)}};
    if (!s.source_path.empty()) e["source_path"] = s.source_path.string();
    if (s.presplit) e["presplit"] = partition_name(*s.presplit);
    samples.push_back(std::move(e));
  }
  j["samples"] = std::move(samples);
  return j;
}

DatasetManifest manifest_from_json(const ordered_json& j) {
  DatasetManifest m;
  for (const auto& e : j.at("samples")) {
    ImageSample s;
    s.id = e.at("id").get<std::string>();
    const std::string label = e.at("label").get<std::string>();
    if (label != "ASD" && label != "TD") throw Error(Errc::InvalidArgument, "bad label " + label);
    s.label = label == "ASD" ? Label::ASD : Label::TD;
    if (e.contains("source_path")) s.source_path = e.at("source_path").get<std::string>();
    if (e.contains("presplit")) s.presplit = partition_for_dir(e.at("presplit").get<std::string>());
    m.samples.push_back(std::move(s));
  }
  finalize(m);
  m.unreadable = j.value("unreadable", std::int64_t{0});
  m.source = j.at("source");
  if (j.contains("content_hash") && j.at("content_hash").get<std::string>() != m.content_hash)
    throw Error(Errc::InvalidArgument, "manifest content_hash does not match its samples");
  return m;
}

}  // namespace tlb::dataset
