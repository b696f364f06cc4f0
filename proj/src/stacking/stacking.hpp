#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "backbones/train.hpp"
#include "dataset/dataset.hpp"
#include "json.hpp"

namespace tlb::stacking {

using backbones::BackboneId;

// N x 6 level-0 probabilities; column j comes from model_order[j].
struct LevelZeroOutputs {
  Eigen::MatrixXd matrix;
  std::array<BackboneId, 6> model_order = backbones::kCanonicalOrder;
  std::vector<std::string> sample_ids;
};

struct MetaLearner {
  std::array<double, 6> coefficients{};
  double intercept = 0.0;
  double lambda = 1.0;
  double threshold = 0.5;
  std::array<BackboneId, 6> model_order = backbones::kCanonicalOrder;
  // solver diagnostics
  int iterations = 0;
  double gradient_norm = 0.0;
};

struct MetaFitOptions {
  double lambda = 1.0;
  double tolerance = 1e-8;  // on the gradient norm
  int max_iterations = 10'000;
};

// Penalized logistic regression (intercept unpenalized) by Newton's method
// with step halving. Rejects single-class labels with SingularFit.
MetaLearner fit_meta_unchecked(const LevelZeroOutputs& outputs, std::span<const int> labels,
                               const MetaFitOptions& options = {});

// Same, after the leakage guard: every row must come from the validation
// split, none from train or test (Leakage otherwise).
MetaLearner fit_meta(const LevelZeroOutputs& outputs, std::span<const int> labels,
                     const dataset::SplitAssignment& split, const MetaFitOptions& options = {});

struct StackedPrediction {
  std::vector<double> probabilities;
  std::vector<int> labels;  // probability >= threshold (ties go positive)
};

StackedPrediction predict_stacked(const MetaLearner& meta, const LevelZeroOutputs& outputs);

// The six fine-tuned level-0 models, in canonical order.
std::vector<backbones::TrainedModel> fit_level0(const backbones::TrainingData& data,
                                                const backbones::FineTuneConfig& config,
                                                const std::filesystem::path& weights_root = {});

// Column j = predict_proba of models[j]. Models must be in canonical order.
LevelZeroOutputs predict_level0(std::span<backbones::TrainedModel> models,
                                const dataset::DatasetManifest& manifest,
                                const dataset::PixelSource& pixels,
                                std::span<const std::string> ids, int batch_size);

struct StackedModel {
  std::vector<backbones::TrainedModel> level0;
  MetaLearner meta;
  dataset::SplitAssignment split;
};

nlohmann::ordered_json to_json(const MetaLearner& meta);
MetaLearner meta_from_json(const nlohmann::ordered_json& j);

// Directory layout: <token>/model.tlbw (+ spec.json, config.json) for each
// level-0 model and meta.json.
void save_stacked(StackedModel& model, const backbones::FineTuneConfig& config,
                  const std::filesystem::path& dir);

// Level-0 matrix, ids, labels and stacked probabilities as JSON, for audits.
nlohmann::ordered_json to_json(const LevelZeroOutputs& outputs, std::span<const int> labels,
                               const StackedPrediction& prediction);

}  // namespace tlb::stacking
