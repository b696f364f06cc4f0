#include "stacking/stacking.hpp"

#include <cmath>
#include <fstream>
#include <unordered_set>

#include <Eigen/Cholesky>

#include "common/error.hpp"

namespace tlb::stacking {

using nlohmann::ordered_json;

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

MetaLearner fit_meta_unchecked(const LevelZeroOutputs& outputs, std::span<const int> labels,
                               const MetaFitOptions& options) {
  const Eigen::MatrixXd& X = outputs.matrix;
  const auto n = X.rows();
  if (X.cols() != 6) throw Error(Errc::ShapeMismatch, "level-0 matrix must have 6 columns");
  if (static_cast<std::size_t>(n) != labels.size())
    throw Error(Errc::LengthMismatch, "level-0 rows and labels differ in length");
  if (options.lambda < 0) throw Error(Errc::InvalidArgument, "lambda must be >= 0");
  if (!X.allFinite()) throw Error(Errc::InvalidArgument, "level-0 matrix has non-finite entries");
  Eigen::VectorXd y(n);
  int positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(Errc::InvalidArgument, "labels must be 0/1");
    y[i] = labels[i];
    positives += labels[i];
  }
  if (positives == 0 || positives == n)
    throw Error(Errc::SingularFit, "validation labels are all one class");

  // parameters: [intercept, w_0..w_5]
  Eigen::MatrixXd A(n, 7);
  A.col(0).setOnes();
  A.rightCols(6) = X;
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(7, options.lambda);
  penalty[0] = 0.0;

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd z = A * beta;
    double f = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) f += softplus(z[i]) - y[i] * z[i];
    return f + 0.5 * (penalty.array() * beta.array().square()).sum();
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(7);
  double f = objective(beta);
  MetaLearner meta;
  meta.lambda = options.lambda;
  meta.model_order = outputs.model_order;
  int it = 0;
  double gnorm = 0.0;
  for (; it < options.max_iterations; ++it) {
    const Eigen::VectorXd z = A * beta;
    Eigen::VectorXd p(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = sigmoid(z[i]);
      w[i] = p[i] * (1.0 - p[i]);
    }
    const Eigen::VectorXd grad = A.transpose() * (p - y) + penalty.cwiseProduct(beta);
    gnorm = grad.norm();
    if (gnorm < options.tolerance) break;
    Eigen::MatrixXd H = A.transpose() * w.asDiagonal() * A;
    H.diagonal() += penalty;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw Error(Errc::SingularFit, "meta-learner Hessian is singular");
    const Eigen::VectorXd step = ldlt.solve(grad);
    if (!step.allFinite()) throw Error(Errc::SingularFit, "meta-learner Newton step is not finite");
    double t = 1.0;
    Eigen::VectorXd next = beta - step;
    double fn = objective(next);
    while (fn > f && t > 1e-12) {
      t *= 0.5;
      next = beta - t * step;
      fn = objective(next);
    }
    if (fn > f) break;  // no further decrease at machine precision
    beta = next;
    f = fn;
  }
  meta.intercept = beta[0];
  for (int j = 0; j < 6; ++j) meta.coefficients[j] = beta[j + 1];
  meta.iterations = it;
  meta.gradient_norm = gnorm;
  return meta;
}

MetaLearner fit_meta(const LevelZeroOutputs& outputs, std::span<const int> labels,
                     const dataset::SplitAssignment& split, const MetaFitOptions& options) {
  const std::unordered_set<std::string> test(split.test_ids.begin(), split.test_ids.end());
  const std::unordered_set<std::string> train(split.train_ids.begin(), split.train_ids.end());
  const std::unordered_set<std::string> val(split.val_ids.begin(), split.val_ids.end());
  if (outputs.sample_ids.size() != static_cast<std::size_t>(outputs.matrix.rows()))
    throw Error(Errc::LengthMismatch, "level-0 rows and sample ids differ in length");
  for (const std::string& id : outputs.sample_ids) {
    if (test.contains(id))
      throw Error(Errc::Leakage, "meta-learner rows include test sample " + id);
    if (train.contains(id))
      throw Error(Errc::Leakage, "meta-learner rows include level-0 training sample " + id);
    if (!val.contains(id))
      throw Error(Errc::Leakage, "meta-learner row " + id + " is not a validation sample");
  }
  return fit_meta_unchecked(outputs, labels, options);
}

StackedPrediction predict_stacked(const MetaLearner& meta, const LevelZeroOutputs& outputs) {
  if (outputs.matrix.rows() > 0 && outputs.matrix.cols() != 6)
    throw Error(Errc::ShapeMismatch, "level-0 matrix must have 6 columns");
  if (outputs.model_order != meta.model_order)
    throw Error(Errc::ShapeMismatch, "level-0 column order differs from the meta-learner's");
  StackedPrediction out;
  for (Eigen::Index i = 0; i < outputs.matrix.rows(); ++i) {
    double z = meta.intercept;
    for (int j = 0; j < 6; ++j) z += meta.coefficients[j] * outputs.matrix(i, j);
    const double p = sigmoid(z);
    out.probabilities.push_back(p);
    out.labels.push_back(p >= meta.threshold ? 1 : 0);
  }
  return out;
}

std::vector<backbones::TrainedModel> fit_level0(const backbones::TrainingData& data,
                                                const backbones::FineTuneConfig& config,
                                                const std::filesystem::path& weights_root) {
  if (data.split.spec.strategy != dataset::SplitStrategy::Stacking)
    throw Error(Errc::InvalidArgument, "level-0 models need the STACKING split");
  std::vector<backbones::TrainedModel> models;
  for (BackboneId id : backbones::kCanonicalOrder) {
    const std::string name(backbones::token(id));
    try {
      backbones::BuildOptions build;
      build.seed = config.seed;
      build.trainable_base = config.trainable_base;
      backbones::Model model = backbones::build_model(backbones::spec_for(id), build);
      models.push_back(backbones::train(std::move(model), data, config,
                                        weights_root.empty() ? weights_root : weights_root / name));
    } catch (const Error& e) {
      throw Error(e.code(), "level-0 " + name + ": " + e.what());
    }
  }
  return models;
}

LevelZeroOutputs predict_level0(std::span<backbones::TrainedModel> models,
                                const dataset::DatasetManifest& manifest,
                                const dataset::PixelSource& pixels,
                                std::span<const std::string> ids, int batch_size) {
  if (models.size() != 6) throw Error(Errc::ShapeMismatch, "stacking needs six level-0 models");
  for (std::size_t j = 0; j < 6; ++j)
    if (models[j].model.spec.id != backbones::kCanonicalOrder[j])
      throw Error(Errc::InvalidArgument, "level-0 models are not in canonical order");
  LevelZeroOutputs out;
  out.sample_ids.assign(ids.begin(), ids.end());
  out.matrix.resize(static_cast<Eigen::Index>(ids.size()), 6);
  const std::vector<std::size_t> idx = backbones::indices_of(manifest, ids);
  for (std::size_t j = 0; j < 6; ++j) {
    const std::vector<double> p =
        backbones::predict_indices(models[j].model, pixels, idx, batch_size);
    for (std::size_t i = 0; i < p.size(); ++i)
      out.matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p[i];
  }
  return out;
}

ordered_json to_json(const MetaLearner& meta) {
  ordered_json order = ordered_json::array();
  for (BackboneId id : meta.model_order) order.push_back(backbones::token(id));
  return {{"model_order", order},
          {"coefficients", meta.coefficients},
          {"intercept", meta.intercept},
          {"lambda", meta.lambda},
          {"threshold", meta.threshold},
          {"solver", {{"method", "newton"}, {"iterations", meta.iterations},
                      {"gradient_norm", meta.gradient_norm}}}};
}

MetaLearner meta_from_json(const ordered_json& j) {
  MetaLearner m;
  const auto& order = j.at("model_order");
  if (order.size() != 6) throw Error(Errc::ShapeMismatch, "model_order must list six models");
  for (std::size_t k = 0; k < 6; ++k) {
    const auto id = backbones::parse_backbone(order[k].get<std::string>());
    if (!id) throw Error(Errc::InvalidArgument, "unknown model in model_order");
    m.model_order[k] = *id;
  }
  m.coefficients = j.at("coefficients").get<std::array<double, 6>>();
  m.intercept = j.at("intercept").get<double>();
  m.lambda = j.at("lambda").get<double>();
  m.threshold = j.at("threshold").get<double>();
  return m;
}

void save_stacked(StackedModel& model, const backbones::FineTuneConfig& config,
                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (backbones::TrainedModel& m : model.level0)
    backbones::save_trained(m, config, dir / std::string(backbones::token(m.model.spec.id)));
  std::ofstream(dir / "meta.json") << to_json(model.meta).dump(2) << '\n';
}

ordered_json to_json(const LevelZeroOutputs& outputs, std::span<const int> labels,
                     const StackedPrediction& prediction) {
  ordered_json order = ordered_json::array();
  for (BackboneId id : outputs.model_order) order.push_back(backbones::token(id));
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < outputs.matrix.rows(); ++i) {
    std::vector<double> r(6);
    for (int j = 0; j < 6; ++j) r[j] = outputs.matrix(i, j);
    rows.push_back(r);
  }
  return {{"model_order", order},
          {"sample_ids", outputs.sample_ids},
          {"labels", std::vector<int>(labels.begin(), labels.end())},
          {"level0", rows},
          {"stacked_probabilities", prediction.probabilities},
          {"stacked_labels", prediction.labels}};
}

}  // namespace tlb::stacking
