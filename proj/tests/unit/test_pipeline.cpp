#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include <unistd.h>

#include "backbones/train.hpp"
#include "common/error.hpp"
#include "hybrid/features.hpp"
#include "json.hpp"
#include "pipeline/config.hpp"
#include "pipeline/pipeline.hpp"
#include "tlbench/tlbench.h"

using nlohmann::json;
using namespace tlb;
namespace fs = std::filesystem;

namespace {

struct Owned {
  char* p = nullptr;
  ~Owned() { tlb_free(p); }
  std::string str() const { return p ? p : ""; }
};

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("tlb_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config hash ignores key order and the output directory") {
  const json a = json::parse(R"({"seed": 3, "fine_tune": {"epochs": 2, "learning_rate": 0.001},
                                 "synth": {"n_per_class": 8}, "out_dir": "x"})");
  const json b = json::parse(R"({"out_dir": "y", "synth": {"n_per_class": 8},
                                 "fine_tune": {"learning_rate": 0.001, "epochs": 2}, "seed": 3})");
  const auto ca = pipeline::config_from_json(a), cb = pipeline::config_from_json(b);
  CHECK(pipeline::config_hash(ca, "vgg16") == pipeline::config_hash(cb, "vgg16"));
  CHECK(pipeline::config_hash(ca, "vgg16") != pipeline::config_hash(ca, "resnet50"));
  auto cc = ca;
  cc.fine_tune.epochs = 3;
  CHECK(pipeline::config_hash(cc, "vgg16") != pipeline::config_hash(ca, "vgg16"));
  CHECK(pipeline::config_hash(ca, "vgg16").size() == 64);
}

TEST_CASE("the global seed reaches every component unless overridden") {
  auto c = pipeline::config_from_json(json::parse(R"({"seed": 9, "synth": {}})"));
  CHECK(c.fine_tune.seed == 9);
  CHECK(c.gbdt.seed == 9);
  CHECK(c.synth->seed == 9);
  c = pipeline::config_from_json(json::parse(R"({"seed": 9, "gbdt": {"seed": 2}})"));
  CHECK(c.gbdt.seed == 2);
  CHECK(c.fine_tune.seed == 9);
}

TEST_CASE("config validation") {
  auto code_of = [](const char* text) {
    try {
      pipeline::config_from_json(json::parse(text));
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::Io;  // sentinel: no error
  };
  CHECK(code_of(R"({"bogus": 1})") == Errc::InvalidArgument);
  CHECK(code_of(R"({"fine_tune": {"epoch": 1}})") == Errc::InvalidArgument);
  CHECK(code_of(R"({"model": "alexnet"})") == Errc::InvalidArgument);
  CHECK(code_of(R"({"accelerator": "on"})") == Errc::InvalidArgument);
  CHECK(code_of(R"({"fine_tune": {"epochs": 0}})") == Errc::InvalidArgument);
  CHECK(code_of(R"({"gbdt": {"n_trees": "many"}})") == Errc::InvalidArgument);
  CHECK(code_of(R"({"model": "stacked", "accelerator": "off"})") == Errc::Io);

  const pipeline::RunConfig defaults = pipeline::config_from_json(json(nullptr));
  CHECK(defaults.fine_tune.learning_rate == 1e-4);
  CHECK(defaults.fine_tune.epochs == 30);
  CHECK(defaults.fine_tune.optimizer == "sgd");
  CHECK(defaults.gbdt.n_trees == 100);
  CHECK(defaults.gbdt.max_depth == 6);
  CHECK(defaults.gbdt.learning_rate == 0.3);
  // to_json / from_json is a fixed point
  const auto round = pipeline::config_from_json(pipeline::to_json(defaults));
  CHECK(pipeline::to_json(round) == pipeline::to_json(defaults));
}

TEST_CASE("C API: statuses, errors and ownership") {
  tlb_session* s = nullptr;
  CHECK(tlb_session_open(R"({"nope": 1})", &s) == TLB_ERR_USAGE);
  CHECK(s == nullptr);
  CHECK(std::string(tlb_last_error_kind()) == "InvalidArgument");
  CHECK(tlb_session_open("{not json", &s) == TLB_ERR_USAGE);
  CHECK(tlb_session_open(nullptr, nullptr) == TLB_ERR_USAGE);

  const fs::path store = scratch("capi");
  const json cfg = {{"synth", {{"n_per_class", 4}}}, {"seed", 7}, {"out_dir", store.string()}};
  REQUIRE(tlb_session_open(cfg.dump().c_str(), &s) == TLB_OK);
  CHECK(std::string(tlb_last_error()).empty());

  Owned summary;
  REQUIRE(tlb_ingest(s, &summary.p) == TLB_OK);
  const json j = json::parse(summary.str());
  CHECK(j["total"] == 8);
  CHECK(j["class_counts"]["ASD"] == 4);
  CHECK(j["content_hash"] == dataset::synth_dataset(4, 7).content_hash);

  Owned rec;
  CHECK(tlb_run(s, "alexnet", &rec.p) == TLB_ERR_USAGE);
  CHECK(rec.p == nullptr);

  Owned table;
  CHECK(tlb_report_table(store.string().c_str(), 1, 0, "markdown", 0, &table.p) == TLB_ERR_REPORT);
  CHECK(std::string(tlb_last_error_kind()) == "NoRecords");
  CHECK(tlb_report_table(store.string().c_str(), 1, 0, "html", 0, &table.p) == TLB_ERR_USAGE);

  Owned d;
  REQUIRE(tlb_format_duration(2022, &d.p) == TLB_OK);
  CHECK(d.str() == "33min 42s");
  double secs = 0;
  CHECK(tlb_parse_duration("1hr 3min", &secs) == TLB_OK);
  CHECK(secs == 3780);
  CHECK(tlb_parse_duration("later", &secs) == TLB_ERR_USAGE);

  Owned tokens;
  REQUIRE(tlb_model_tokens(&tokens.p) == TLB_OK);
  CHECK(json::parse(tokens.str()).size() == 8);

  tlb_session_close(s);
  fs::remove_all(store);
}

TEST_CASE("C API: parameter audit covers the six backbones once each") {
  Owned out;
  CHECK(tlb_params_audit(&out.p) == TLB_OK);
  const json rows = json::parse(out.str());
  REQUIRE(rows.size() == 6);
  std::set<std::string> seen;
  for (const auto& r : rows) {
    seen.insert(r["model"].get<std::string>());
    CHECK(r["delta"].get<long long>() == r["computed"].get<long long>() - r["expected"].get<long long>());
    CHECK(r["within_tolerance"].get<bool>());
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("a failing run still appends a failed record") {
  const fs::path store = scratch("fail");
  // one step at this rate pushes the head weights past float range
  const json cfg = {{"synth", {{"n_per_class", 5}}},
                    {"out_dir", store.string()},
                    {"accelerator", "off"},
                    {"fine_tune", {{"epochs", 2}, {"batch_size", 8}, {"learning_rate", 1e38}}}};
  tlb_session* s = nullptr;
  REQUIRE(tlb_session_open(cfg.dump().c_str(), &s) == TLB_OK);
  Owned rec;
  const tlb_status st = tlb_run(s, "mobilenet", &rec.p);
  tlb_session_close(s);
  REQUIRE(rec.p != nullptr);
  const bench::RunRecord r = bench::from_json_line(rec.str());
  CHECK(st == TLB_ERR_TRAIN);
  CHECK(r.status == "failed");
  CHECK(r.error.find("NonFiniteLoss") != std::string::npos);
  CHECK(r.timing.failed);
  CHECK(r.timing.wall_seconds > 0.0);
  const auto stored = bench::RunStore(store / "records.jsonl").load();
  REQUIRE(stored.size() == 1);
  CHECK(stored[0].run_id == r.run_id);
  fs::remove_all(store);
}

TEST_CASE("a small hybrid run writes its artifacts and a record") {
  const fs::path store = scratch("hybrid");
  pipeline::RunConfig c = pipeline::config_from_json(
      {{"synth", {{"n_per_class", 5}}}, {"out_dir", store.string()}, {"accelerator", "off"},
       {"fine_tune", {{"batch_size", 5}}}, {"gbdt", {{"n_trees", 10}}}});
  const pipeline::Data data = pipeline::load_data(c);
  const pipeline::RunOutcome out = pipeline::run_model(c, data, "xgb-vgg16");
  REQUIRE(out.ok);
  CHECK(out.record.model_name == "XGBOOST-VGG16");
  CHECK(out.record.run_key == bench::RunKey{1, false});
  CHECK(out.record.config_hash == pipeline::config_hash(c, "xgb-vgg16"));
  CHECK(out.record.timing.wall_seconds > 0.0);
  CHECK(fs::exists(out.run_dir / "config.json"));
  CHECK(fs::exists(out.run_dir / "gbdt.json"));
  CHECK(fs::exists(out.run_dir / "features" / "train.bin"));
  const auto feats = hybrid::load_features(out.run_dir / "features" / "test");
  CHECK(feats.cols == 512);
  CHECK(feats.rows == 1);  // 10 samples: 8 / 1 / 1
  CHECK(bench::RunStore(store / "records.jsonl").load().size() == 1);
  fs::remove_all(store);
}

TEST_CASE("fine-tuning runs, persists and reloads to identical predictions") {
  const dataset::DatasetManifest m = dataset::synth_dataset(8, 2);
  const auto pixels = dataset::pixel_source(m);
  const auto split = dataset::split(m, dataset::SplitSpec::standard(2));
  backbones::FineTuneConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-2;
  const fs::path dir = scratch("train");
  backbones::Model model = backbones::build_model(backbones::spec_for(backbones::BackboneId::MobileNet), {});
  backbones::TrainedModel t = backbones::train(std::move(model), {m, *pixels, split}, cfg, dir);
  REQUIRE(t.history.size() == 4);
  for (const auto& e : t.history) {
    CHECK(std::isfinite(e.loss));
    CHECK(std::isfinite(e.val_loss));
  }
  // the synthetic classes are separable by brightness, so the loss must fall
  CHECK(t.history.back().loss < t.history.front().loss);
  CHECK(t.timing.wall_seconds > 0.0);
  CHECK(fs::exists(dir / "model.tlbw"));

  const auto idx = backbones::indices_of(m, split.test_ids);
  const auto before = backbones::predict_indices(t.model, *pixels, idx, 4);
  backbones::Model loaded = backbones::load_trained(backbones::BackboneId::MobileNet, dir);
  const auto after = backbones::predict_indices(loaded, *pixels, idx, 4);
  CHECK(before == after);
  fs::remove_all(dir);
}
