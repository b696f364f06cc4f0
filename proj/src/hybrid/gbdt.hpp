#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

namespace tlb::hybrid {

struct GBDTParams {
  int n_trees = 100;
  int max_depth = 6;
  double learning_rate = 0.3;
  std::uint64_t seed = 0;
  double reg_lambda = 1.0;        // L2 on leaf weights
  double min_child_weight = 1.0;  // minimum hessian sum per child
  double colsample = 1.0;         // fraction of features offered to each tree
};

void validate(const GBDTParams& params);
nlohmann::ordered_json to_json(const GBDTParams& params);

// Row-major N x D view.
struct FeatureView {
  std::span<const float> values;
  std::size_t rows = 0;
  std::size_t cols = 0;

  const float* row(std::size_t i) const { return values.data() + i * cols; }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  float threshold = 0.0f;  // go left when x < threshold
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf margin contribution
};

struct Tree {
  std::vector<TreeNode> nodes;
  double predict(const float* row) const;
};

// Binary-logistic gradient-boosted trees grown level by level with exact
// greedy splits on presorted features.
class GBDTModel {
 public:
  static GBDTModel fit(const FeatureView& x, std::span<const int> labels, const GBDTParams& params);

  std::vector<double> predict_proba(const FeatureView& x) const;
  double margin(const float* row) const;

  std::size_t width() const { return width_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const GBDTParams& params() const { return params_; }

  nlohmann::ordered_json to_json() const;
  static GBDTModel from_json(const nlohmann::ordered_json& j);

 private:
  GBDTParams params_;
  std::size_t width_ = 0;
  double base_margin_ = 0.0;
  std::vector<Tree> trees_;
};

}  // namespace tlb::hybrid
