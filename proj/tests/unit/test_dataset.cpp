#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <unistd.h>

#include "common/error.hpp"
#include "dataset/dataset.hpp"

using namespace tlb::dataset;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("tlb_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_png(const fs::path& p, int h, int w, unsigned char value) {
  fs::create_directories(p.parent_path());
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(value, value, value));
  REQUIRE(cv::imwrite(p.string(), img));
}

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

double mean_of(const tlb::nn::Tensor& t, int sample) {
  const std::size_t n = t.shape().per_sample();
  const float* p = t.sample(sample);
  return std::accumulate(p, p + n, 0.0) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("STACKING split of 2936 images is (1761, 293, 882) and deterministic") {
  const SplitSizes s = split_sizes(2936, SplitSpec::stacking(0));
  CHECK(s.train == 1761);
  CHECK(s.val == 293);
  CHECK(s.test == 882);

  const DatasetManifest m = synth_dataset(1468, 3);
  REQUIRE(m.total == 2936);
  const SplitAssignment first = split(m, SplitSpec::stacking(11));
  CHECK(first.train_ids.size() == 1761);
  CHECK(first.val_ids.size() == 293);
  CHECK(first.test_ids.size() == 882);
  for (int i = 0; i < 10; ++i) {
    const SplitAssignment again = split(m, SplitSpec::stacking(11));
    CHECK(again.train_ids == first.train_ids);
    CHECK(again.val_ids == first.val_ids);
    CHECK(again.test_ids == first.test_ids);
  }
}

TEST_CASE("split sizes follow the floor rule for every N") {
  for (std::int64_t n = 10; n <= 3000; n += 37) {
    for (const SplitSpec& spec : {SplitSpec::stacking(0), SplitSpec::standard(0)}) {
      const SplitSizes s = split_sizes(n, spec);
      CHECK(s.train == n * spec.train.num / spec.train.den);
      CHECK(s.val == n * spec.val.num / spec.val.den);
      CHECK(s.train + s.val + s.test == n);
    }
  }
}

TEST_CASE("splits partition the manifest, are stratified and depend on the seed") {
  const DatasetManifest m = synth_dataset(40, 5);
  for (const SplitSpec& spec : {SplitSpec::stacking(1), SplitSpec::standard(1)}) {
    const SplitAssignment a = split(m, spec);
    const auto tr = as_set(a.train_ids), va = as_set(a.val_ids), te = as_set(a.test_ids);
    CHECK(tr.size() + va.size() + te.size() == 80);
    for (const auto& id : va) CHECK_FALSE(tr.contains(id));
    for (const auto& id : te) {
      CHECK_FALSE(tr.contains(id));
      CHECK_FALSE(va.contains(id));
    }
    // ids appear in manifest order
    auto pos = [&](const std::string& id) { return m.index_of(id); };
    CHECK(std::is_sorted(a.test_ids.begin(), a.test_ids.end(),
                         [&](const auto& x, const auto& y) { return pos(x) < pos(y); }));
    // class balance within one sample of the exact share
    auto asd = [&](const std::vector<std::string>& ids) {
      return std::count_if(ids.begin(), ids.end(), [&](const std::string& id) {
        return m.samples[pos(id)].label == Label::ASD;
      });
    };
    CHECK(std::abs(2 * asd(a.test_ids) - static_cast<long>(a.test_ids.size())) <= 2);
    CHECK(std::abs(2 * asd(a.train_ids) - static_cast<long>(a.train_ids.size())) <= 2);
  }
  CHECK(split(m, SplitSpec::stacking(1)).test_ids != split(m, SplitSpec::stacking(2)).test_ids);
}

TEST_CASE("split validation") {
  SplitSpec bad = SplitSpec::standard(0);
  bad.test = {1, 5};
  CHECK_THROWS_AS(split_sizes(100, bad), tlb::Error);
  SplitSpec fixed = SplitSpec::stacking(0);
  fixed.train = {7, 10};
  fixed.test = {1, 5};
  CHECK_THROWS_AS(split_sizes(100, fixed), tlb::Error);
  try {
    split(synth_dataset(2, 0), SplitSpec::stacking(0));
    FAIL("expected TooFewSamples");
  } catch (const tlb::Error& e) {
    CHECK(e.code() == tlb::Errc::TooFewSamples);
  }
}

TEST_CASE("synthetic set: labels, class means and reproducible pixels") {
  const DatasetManifest m = synth_dataset(6, 7);
  CHECK(m.total == 12);
  CHECK(m.class_counts.at(Label::ASD) == 6);
  CHECK(m.class_counts.at(Label::TD) == 6);
  CHECK(m.samples[0].id == "synth/asd/00000");
  CHECK(m.content_hash == synth_dataset(6, 7).content_hash);
  CHECK(m.content_hash.size() == 64);

  const auto src = pixel_source(m);
  std::vector<std::size_t> idx(12);
  std::iota(idx.begin(), idx.end(), 0);
  const tlb::nn::Tensor x = src->load(idx);
  CHECK(x.shape() == tlb::nn::Shape{12, 3, 224, 224});
  for (int i = 0; i < 12; ++i) {
    const double want = m.samples[i].label == Label::ASD ? 0.65 : 0.35;
    CHECK(mean_of(x, i) == doctest::Approx(want).epsilon(1e-3));
  }
  for (float v : x.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const tlb::nn::Tensor again = pixel_source(synth_dataset(6, 7))->load(idx);
  CHECK(std::equal(x.values().begin(), x.values().end(), again.values().begin()));
  const tlb::nn::Tensor other = pixel_source(synth_dataset(6, 8))->load(idx);
  CHECK_FALSE(std::equal(x.values().begin(), x.values().end(), other.values().begin()));
}

TEST_CASE("ingest a class-per-directory tree") {
  TempDir dir("ingest");
  for (int i = 0; i < 3; ++i) write_png(dir.path / "autistic" / ("a" + std::to_string(i) + ".png"), 20, 30, 200);
  for (int i = 0; i < 2; ++i) write_png(dir.path / "non_autistic" / ("n" + std::to_string(i) + ".png"), 224, 224, 40);
  std::ofstream(dir.path / "autistic" / "broken.jpg") << "not an image";
  std::ofstream(dir.path / "autistic" / "notes.txt") << "ignored";

  const DatasetManifest m = ingest_directory(dir.path);
  CHECK(m.total == 5);
  CHECK(m.class_counts.at(Label::ASD) == 3);
  CHECK(m.class_counts.at(Label::TD) == 2);
  CHECK(m.unreadable == 1);
  CHECK(m.source["kind"] == "directory");

  const auto px = pixel_source(m);
  const std::vector<std::size_t> idx{0, 3};
  const tlb::nn::Tensor x = px->load(idx);
  CHECK(mean_of(x, 0) == doctest::Approx(200.0 / 255.0).epsilon(1e-6));
  CHECK(mean_of(x, 1) == doctest::Approx(40.0 / 255.0).epsilon(1e-6));

  // manifests survive JSON and refuse tampering
  const DatasetManifest back = manifest_from_json(to_json(m));
  CHECK(back.content_hash == m.content_hash);
  CHECK(back.samples.size() == m.samples.size());
  auto j = to_json(m);
  j["content_hash"] = std::string(64, '0');
  CHECK_THROWS_AS(manifest_from_json(j), tlb::Error);
}

TEST_CASE("ingest honors an on-disk train/valid/test layout") {
  TempDir dir("presplit");
  for (const char* part : {"train", "valid", "test"})
    for (const char* cls : {"autistic", "non_autistic"})
      for (int i = 0; i < 2; ++i)
        write_png(dir.path / part / cls / (std::to_string(i) + ".png"), 8, 8, 100);
  const DatasetManifest m = ingest_directory(dir.path);
  CHECK(m.total == 12);
  const SplitAssignment s = split(m, SplitSpec::standard(0));
  CHECK(s.train_ids.size() == 4);
  CHECK(s.val_ids.size() == 4);
  CHECK(s.test_ids.size() == 4);
  for (const auto& id : s.test_ids) CHECK(id.rfind("test/", 0) == 0);
}

TEST_CASE("ingest errors") {
  TempDir dir("missing");
  write_png(dir.path / "autistic" / "a.png", 8, 8, 1);
  try {
    ingest_directory(dir.path);
    FAIL("expected MissingClassDir");
  } catch (const tlb::Error& e) {
    CHECK(e.code() == tlb::Errc::MissingClassDir);
  }
  try {
    ingest_directory(dir.path / "nope");
    FAIL("expected MissingClassDir");
  } catch (const tlb::Error& e) {
    CHECK(e.code() == tlb::Errc::MissingClassDir);
  }
  TempDir empty("empty");
  fs::create_directories(empty.path / "autistic");
  fs::create_directories(empty.path / "non_autistic");
  try {
    ingest_directory(empty.path);
    FAIL("expected EmptyDataset");
  } catch (const tlb::Error& e) {
    CHECK(e.code() == tlb::Errc::EmptyDataset);
  }
}

TEST_CASE("preprocess: channel handling, resize and range") {
  SUBCASE("grayscale is replicated to three channels") {
    std::vector<std::uint8_t> gray(10 * 10, 51);
    const tlb::nn::Tensor t = preprocess(gray, 10, 10, 1);
    CHECK(t.shape() == tlb::nn::Shape{1, 3, 224, 224});
    for (float v : t.values()) CHECK(v == doctest::Approx(0.2f));
  }
  SUBCASE("alpha is dropped and channel order kept") {
    std::vector<std::uint8_t> rgba;
    for (int i = 0; i < 4 * 4; ++i) rgba.insert(rgba.end(), {255, 0, 102, 7});
    const tlb::nn::Tensor t = preprocess(rgba, 4, 4, 4);
    CHECK(t[0] == 1.0f);
    CHECK(t[224 * 224] == 0.0f);
    CHECK(t[2 * 224 * 224] == doctest::Approx(0.4f));
  }
  SUBCASE("native size passes through unchanged") {
    std::vector<std::uint8_t> rgb(224 * 224 * 3);
    for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<std::uint8_t>(i % 251);
    const tlb::nn::Tensor t = preprocess(rgb, 224, 224, 3);
    CHECK(t[0] == rgb[0] / 255.0f);
    CHECK(t[224 * 224 + 5] == rgb[5 * 3 + 1] / 255.0f);
  }
  CHECK_THROWS_AS(preprocess({}, 0, 10, 3), tlb::Error);
}
