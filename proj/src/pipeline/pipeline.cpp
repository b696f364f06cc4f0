#include "pipeline/pipeline.hpp"

#include <fstream>

#include "backbones/train.hpp"
#include "common/error.hpp"
#include "hybrid/features.hpp"
#include "metrics/metrics.hpp"
#include "report/models.hpp"
#include "stacking/stacking.hpp"

namespace tlb::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

Data load_data(const RunConfig& config) {
  Data d;
  if (config.synth)
    d.manifest = dataset::synth_dataset(config.synth->n_per_class, config.synth->seed,
                                        config.synth->margin);
  else if (!config.data_root.empty())
    d.manifest = dataset::ingest_directory(config.data_root);
  else
    throw Error(Errc::EmptyDataset, "no data: give a data root or a synthetic set size");
  d.pixels = dataset::pixel_source(d.manifest);
  return d;
}

bench::RunStore store_for(const RunConfig& config) {
  return bench::RunStore(config.out_dir / "records.jsonl");
}

namespace {

// Test-split predictions and the timing of the measured span.
struct Evaluation {
  bench::TimingRecord timing;
  std::vector<double> probabilities;
  std::vector<int> labels;
};

std::vector<int> labels_of(const dataset::DatasetManifest& m, std::span<const std::string> ids) {
  std::vector<int> out;
  for (std::size_t i : backbones::indices_of(m, ids))
    out.push_back(m.samples[i].label == dataset::Label::ASD ? 1 : 0);
  return out;
}

backbones::BuildOptions build_options(const RunConfig& c, backbones::BackboneId id) {
  backbones::BuildOptions o;
  o.pretrained = c.pretrained;
  if (c.pretrained) o.weights_path = c.weights_dir / (std::string(backbones::token(id)) + ".tlbw");
  o.seed = c.fine_tune.seed;
  o.trainable_base = c.fine_tune.trainable_base;
  return o;
}

backbones::TrainingData training_data(const Data& d, const dataset::SplitAssignment& split) {
  return {d.manifest, *d.pixels, split};
}

// Stores the timing before surfacing a failure so the record keeps it.
template <class R>
R& checked(bench::Timed<R>& timed, bench::TimingRecord& timing) {
  timing = timed.timing;
  return timed.value();
}

void write_json(const fs::path& path, const ordered_json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << '\n';
}

void run_backbone(const RunConfig& c, const Data& d, backbones::BackboneId id,
                  const fs::path& run_dir, Evaluation& ev) {
  const dataset::SplitAssignment split = dataset::split(d.manifest, dataset::SplitSpec::standard(c.seed));
  backbones::Model model = backbones::build_model(backbones::spec_for(id), build_options(c, id));
  auto timed = bench::time_run(
      [&] { return backbones::train(std::move(model), training_data(d, split), c.fine_tune); });
  backbones::TrainedModel& trained = checked(timed, ev.timing);
  backbones::save_trained(trained, c.fine_tune, run_dir / "weights" / std::string(backbones::token(id)));

  const auto test_idx = backbones::indices_of(d.manifest, split.test_ids);
  ev.probabilities =
      backbones::predict_indices(trained.model, *d.pixels, test_idx, c.fine_tune.batch_size);
  ev.labels = labels_of(d.manifest, split.test_ids);
}

void run_hybrid(const RunConfig& c, const Data& d, const fs::path& run_dir, Evaluation& ev) {
  using backbones::BackboneId;
  const dataset::SplitAssignment split = dataset::split(d.manifest, dataset::SplitSpec::standard(c.seed));
  hybrid::Extractor extractor;
  extractor.weights = c.extractor == "finetuned" ? "finetuned" : (c.pretrained ? "pretrained" : "random");
  const std::vector<int> train_labels = labels_of(d.manifest, split.train_ids);

  backbones::Model vgg = backbones::build_model(backbones::spec_for(BackboneId::VGG16),
                                                build_options(c, BackboneId::VGG16));
  struct Fitted {
    hybrid::FeatureMatrix train, test;
    hybrid::GBDTModel gbdt;
  };
  auto timed = bench::time_run([&] {
    if (c.extractor == "finetuned")
      vgg = backbones::train(std::move(vgg), training_data(d, split), c.fine_tune).model;
    Fitted f;
    f.train = hybrid::extract_features(vgg, extractor, d.manifest, *d.pixels, split.train_ids,
                                       c.fine_tune.batch_size);
    f.test = hybrid::extract_features(vgg, extractor, d.manifest, *d.pixels, split.test_ids,
                                      c.fine_tune.batch_size);
    f.gbdt = hybrid::GBDTModel::fit(f.train.view(), train_labels, c.gbdt);
    return f;
  });
  Fitted& fitted = checked(timed, ev.timing);
  hybrid::save_features(fitted.train, run_dir / "features" / "train");
  hybrid::save_features(fitted.test, run_dir / "features" / "test");
  write_json(run_dir / "gbdt.json", fitted.gbdt.to_json());

  ev.probabilities = fitted.gbdt.predict_proba(fitted.test.view());
  ev.labels = labels_of(d.manifest, split.test_ids);
}

void run_stacked(const RunConfig& c, const Data& d, const fs::path& run_dir, Evaluation& ev) {
  const dataset::SplitAssignment split = dataset::split(d.manifest, dataset::SplitSpec::stacking(c.seed));
  const std::vector<int> val_labels = labels_of(d.manifest, split.val_ids);
  auto timed = bench::time_run([&] {
    stacking::StackedModel model;
    model.split = split;
    model.level0 = stacking::fit_level0(training_data(d, split), c.fine_tune);
    const stacking::LevelZeroOutputs val = stacking::predict_level0(
        model.level0, d.manifest, *d.pixels, split.val_ids, c.fine_tune.batch_size);
    model.meta = stacking::fit_meta(val, val_labels, split, {.lambda = c.meta_lambda});
    return model;
  });
  stacking::StackedModel& model = checked(timed, ev.timing);
  const fs::path dir = run_dir / "stacked";
  stacking::save_stacked(model, c.fine_tune, dir);

  const stacking::LevelZeroOutputs test = stacking::predict_level0(
      model.level0, d.manifest, *d.pixels, split.test_ids, c.fine_tune.batch_size);
  const stacking::StackedPrediction pred = stacking::predict_stacked(model.meta, test);
  ev.labels = labels_of(d.manifest, split.test_ids);
  ev.probabilities = pred.probabilities;
  write_json(dir / "level0_test.json", stacking::to_json(test, ev.labels, pred));
}

}  // namespace

RunOutcome run_model(const RunConfig& config, const Data& data, const std::string& model_token) {
  const auto name = report::model_by_token(model_token);
  if (!name) throw Error(Errc::InvalidArgument, "unknown model '" + model_token + "'");

  RunOutcome out;
  bench::RunRecord& rec = out.record;
  rec.run_id = bench::new_run_id(model_token);
  rec.model_name = std::string(name->display);
  rec.device = bench::detect_device(config.device_index, config.accelerator == "off");
  rec.run_key = {config.device_index, rec.device.accelerator_enabled};
  rec.config_hash = config_hash(config, model_token);
  out.run_dir = config.out_dir / rec.run_id;

  ordered_json snapshot = ordered_json::parse(to_json(config).dump());
  snapshot["model"] = model_token;
  write_json(out.run_dir / "config.json",
             {{"config", snapshot},
              {"config_hash", rec.config_hash},
              {"dataset",
               {{"content_hash", data.manifest.content_hash},
                {"total", data.manifest.total},
                {"source", data.manifest.source}}},
              {"device", ordered_json::parse(bench::to_json_line(rec)).at("device")}});

  Evaluation ev;
  try {
    if (const auto id = backbones::parse_backbone(model_token))
      run_backbone(config, data, *id, out.run_dir, ev);
    else if (model_token == "xgb-vgg16")
      run_hybrid(config, data, out.run_dir, ev);
    else
      run_stacked(config, data, out.run_dir, ev);
    rec.timing = ev.timing;
    rec.metrics = metrics::compute_metrics(metrics::confusion(ev.probabilities, ev.labels));
  } catch (const std::exception& e) {
    out.ok = false;
    if (const auto* err = dynamic_cast<const Error*>(&e)) out.error_code = err->code();
    rec.status = "failed";
    rec.error = e.what();
    rec.timing = ev.timing;
    rec.timing.failed = true;
    if (rec.timing.wall_seconds <= 0.0) {
      // failed before the timed span began
      rec.timing.started_at = rec.timing.ended_at = std::chrono::system_clock::now();
    }
  }
  rec.created_at = bench::iso8601(std::chrono::system_clock::now());
  store_for(config).append(rec);
  return out;
}

std::vector<RunOutcome> run_all(const RunConfig& config, const Data& data) {
  std::vector<RunOutcome> out;
  for (const report::ModelName& m : report::kModels)
    out.push_back(run_model(config, data, std::string(m.token)));
  return out;
}

}  // namespace tlb::pipeline
