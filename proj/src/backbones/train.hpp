#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "backbones/backbone.hpp"
#include "bench/bench.hpp"
#include "dataset/dataset.hpp"
#include "json.hpp"

namespace tlb::backbones {

struct FineTuneConfig {
  std::string optimizer = "sgd";
  double learning_rate = 1e-4;
  double momentum = 0.0;
  int epochs = 30;
  int batch_size = 32;
  std::string loss = "binary_crossentropy";
  std::uint64_t seed = 0;
  bool trainable_base = true;
};

void validate(const FineTuneConfig& config);
nlohmann::ordered_json to_json(const FineTuneConfig& config);
nlohmann::ordered_json to_json(const BackboneSpec& spec);

struct EpochStats {
  double loss = 0.0;
  double accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainedModel {
  Model model;
  std::vector<EpochStats> history;
  double wall_seconds = 0.0;
  bench::TimingRecord timing;
  // Directory holding model.tlbw, spec.json and config.json; empty when not persisted.
  std::filesystem::path weights_dir;
};

// Data a training run reads: the manifest, its pixels and the split.
struct TrainingData {
  const dataset::DatasetManifest& manifest;
  const dataset::PixelSource& pixels;
  const dataset::SplitAssignment& split;
};

// Manifest indices of `ids`, in order.
std::vector<std::size_t> indices_of(const dataset::DatasetManifest& manifest,
                                    std::span<const std::string> ids);

// Mini-batch SGD on binary cross-entropy over the train split with a
// validation pass after each epoch; both run inside the timed span. Weights
// are saved to `weights_dir` afterwards when it is non-empty.
TrainedModel train(Model model, const TrainingData& data, const FineTuneConfig& config,
                   const std::filesystem::path& weights_dir = {});

// Probabilities for manifest samples, predicted in batches.
std::vector<double> predict_indices(Model& model, const dataset::PixelSource& pixels,
                                    std::span<const std::size_t> indices, int batch_size);

// Writes model.tlbw, spec.json, config.json and history.json into `dir`.
void save_trained(TrainedModel& trained, const FineTuneConfig& config,
                  const std::filesystem::path& dir);

// Rebuilds a model from a directory written by save_trained().
Model load_trained(BackboneId id, const std::filesystem::path& weights_dir);

}  // namespace tlb::backbones
