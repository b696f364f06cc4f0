#include "hybrid/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "nn/rng.hpp"

namespace tlb::hybrid {

using nlohmann::ordered_json;

void validate(const GBDTParams& p) {
  if (p.n_trees < 1) throw Error(Errc::InvalidArgument, "n_trees must be >= 1");
  if (p.max_depth < 1) throw Error(Errc::InvalidArgument, "max_depth must be >= 1");
  if (!(p.learning_rate > 0.0 && p.learning_rate <= 1.0))
    throw Error(Errc::InvalidArgument, "learning_rate must lie in (0, 1]");
  if (p.reg_lambda < 0.0) throw Error(Errc::InvalidArgument, "reg_lambda must be >= 0");
  if (p.min_child_weight < 0.0) throw Error(Errc::InvalidArgument, "min_child_weight must be >= 0");
  if (!(p.colsample > 0.0 && p.colsample <= 1.0))
    throw Error(Errc::InvalidArgument, "colsample must lie in (0, 1]");
}

ordered_json to_json(const GBDTParams& p) {
  return {{"n_trees", p.n_trees},       {"max_depth", p.max_depth},
          {"learning_rate", p.learning_rate}, {"seed", p.seed},
          {"reg_lambda", p.reg_lambda}, {"min_child_weight", p.min_child_weight},
          {"colsample", p.colsample},   {"objective", "binary:logistic"}};
}

double Tree::predict(const float* row) const {
  int k = 0;
  while (nodes[k].feature >= 0) k = row[nodes[k].feature] < nodes[k].threshold ? nodes[k].left : nodes[k].right;
  return nodes[k].value;
}

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

struct Split {
  double gain = 0.0;
  int feature = -1;
  float threshold = 0.0f;
};

struct Builder {
  const FeatureView& x;
  const std::vector<std::vector<std::uint32_t>>& sorted;  // per feature, row order by value
  const GBDTParams& p;

  double score(double g, double h) const { return g * g / (h + p.reg_lambda); }

  Tree grow(const std::vector<double>& grad, const std::vector<double>& hess,
            const std::vector<int>& features) const {
    Tree tree;
    const std::size_t n = x.rows;
    std::vector<int> node_of(n, 0);
    tree.nodes.emplace_back();
    std::vector<int> frontier = {0};
    std::vector<double> G(1, 0.0), H(1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      G[0] += grad[i];
      H[0] += hess[i];
    }

    for (int depth = 0; depth < p.max_depth && !frontier.empty(); ++depth) {
      const std::size_t total_nodes = tree.nodes.size();
      std::vector<Split> best(total_nodes);
      std::vector<double> gl(total_nodes), hl(total_nodes);
      std::vector<float> last(total_nodes);
      std::vector<char> seen(total_nodes);
      std::vector<char> open(total_nodes, 0);
      for (int k : frontier) open[k] = 1;

      for (int f : features) {
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(hl.begin(), hl.end(), 0.0);
        std::fill(seen.begin(), seen.end(), 0);
        for (std::uint32_t i : sorted[f]) {
          const int k = node_of[i];
          if (k < 0 || !open[k]) continue;
          const float v = x.row(i)[f];
          if (seen[k] && v > last[k]) {
            const double gr = G[k] - gl[k], hr = H[k] - hl[k];
            if (hl[k] >= p.min_child_weight && hr >= p.min_child_weight) {
              const double gain = 0.5 * (score(gl[k], hl[k]) + score(gr, hr) - score(G[k], H[k]));
              // strict improvement keeps the first (lowest feature, lowest value) among ties
              if (gain > best[k].gain)
                best[k] = {gain, f, static_cast<float>(0.5 * (static_cast<double>(last[k]) + v))};
            }
          }
          gl[k] += grad[i];
          hl[k] += hess[i];
          last[k] = v;
          seen[k] = 1;
        }
      }

      std::vector<int> next;
      std::vector<double> nG(total_nodes), nH(total_nodes);
      for (int k : frontier) {
        if (best[k].feature < 0 || best[k].gain <= 0.0) continue;
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        tree.nodes.emplace_back();
        tree.nodes[k].feature = best[k].feature;
        tree.nodes[k].threshold = best[k].threshold;
        tree.nodes[k].left = left;
        tree.nodes[k].right = left + 1;
        next.push_back(left);
        next.push_back(left + 1);
      }
      G.resize(tree.nodes.size(), 0.0);
      H.resize(tree.nodes.size(), 0.0);
      for (int k : next) G[k] = H[k] = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const int k = node_of[i];
        const TreeNode& node = tree.nodes[k];
        if (node.feature < 0) continue;
        const int child = x.row(i)[node.feature] < node.threshold ? node.left : node.right;
        node_of[i] = child;
        G[child] += grad[i];
        H[child] += hess[i];
      }
      frontier = std::move(next);
    }

    for (std::size_t k = 0; k < tree.nodes.size(); ++k)
      if (tree.nodes[k].feature < 0)
        tree.nodes[k].value = -p.learning_rate * G[k] / (H[k] + p.reg_lambda);
    return tree;
  }
};

}  // namespace

GBDTModel GBDTModel::fit(const FeatureView& x, std::span<const int> labels, const GBDTParams& params) {
  validate(params);
  if (labels.size() != x.rows) throw Error(Errc::LengthMismatch, "feature rows and labels differ");
  if (x.rows < 2) throw Error(Errc::TooFewSamples, "GBDT needs at least two samples");
  if (x.cols == 0) throw Error(Errc::WidthMismatch, "feature matrix has no columns");
  int positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(Errc::InvalidArgument, "labels must be 0/1");
    positives += y;
  }
  if (positives == 0 || positives == static_cast<int>(labels.size()))
    throw Error(Errc::SingleClass, "training labels contain a single class");
  for (float v : x.values)
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteFeature, "feature matrix has non-finite values");

  std::vector<std::vector<std::uint32_t>> sorted(x.cols);
  for (std::size_t f = 0; f < x.cols; ++f) {
    auto& order = sorted[f];
    order.resize(x.rows);
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return x.row(a)[f] < x.row(b)[f]; });
  }

  GBDTModel model;
  model.params_ = params;
  model.width_ = x.cols;
  model.base_margin_ = 0.0;  // base score 0.5
  std::vector<double> margin(x.rows, model.base_margin_), grad(x.rows), hess(x.rows);
  std::vector<int> all(x.cols);
  std::iota(all.begin(), all.end(), 0);
  nn::Rng rng(params.seed);
  const Builder builder{x, sorted, params};

  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      const double pr = sigmoid(margin[i]);
      grad[i] = pr - labels[i];
      hess[i] = std::max(pr * (1.0 - pr), 1e-16);
    }
    std::vector<int> features = all;
    if (params.colsample < 1.0) {
      nn::shuffle(features.begin(), features.end(), rng);
      const auto keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(params.colsample * static_cast<double>(x.cols))));
      features.resize(keep);
      std::sort(features.begin(), features.end());
    }
    Tree tree = builder.grow(grad, hess, features);
    for (std::size_t i = 0; i < x.rows; ++i) margin[i] += tree.predict(x.row(i));
    model.trees_.push_back(std::move(tree));
  }
  return model;
}

double GBDTModel::margin(const float* row) const {
  double m = base_margin_;
  for (const Tree& t : trees_) m += t.predict(row);
  return m;
}

std::vector<double> GBDTModel::predict_proba(const FeatureView& x) const {
  if (x.rows == 0) return {};
  if (x.cols != width_)
    throw Error(Errc::WidthMismatch, "model expects " + std::to_string(width_) +
                                         " features, got " + std::to_string(x.cols));
  std::vector<double> out(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) out[i] = sigmoid(margin(x.row(i)));
  return out;
}

ordered_json GBDTModel::to_json() const {
  ordered_json trees = ordered_json::array();
  for (const Tree& t : trees_) {
    ordered_json nodes = ordered_json::array();
    for (const TreeNode& n : t.nodes) {
      if (n.feature < 0)
        nodes.push_back({{"leaf", n.value}});
      else
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
                         {"right", n.right}});
    }
    trees.push_back({{"nodes", nodes}});
  }
  return {{"format", "tlbench-gbdt"},
          {"version", 1},
          {"params", hybrid::to_json(params_)},
          {"width", width_},
          {"base_margin", base_margin_},
          {"trees", trees}};
}

GBDTModel GBDTModel::from_json(const ordered_json& j) {
  GBDTModel m;
  const auto& p = j.at("params");
  m.params_.n_trees = p.at("n_trees").get<int>();
  m.params_.max_depth = p.at("max_depth").get<int>();
  m.params_.learning_rate = p.at("learning_rate").get<double>();
  m.params_.seed = p.at("seed").get<std::uint64_t>();
  m.params_.reg_lambda = p.at("reg_lambda").get<double>();
  m.params_.min_child_weight = p.at("min_child_weight").get<double>();
  m.params_.colsample = p.at("colsample").get<double>();
  m.width_ = j.at("width").get<std::size_t>();
  m.base_margin_ = j.at("base_margin").get<double>();
  for (const auto& t : j.at("trees")) {
    Tree tree;
    for (const auto& n : t.at("nodes")) {
      TreeNode node;
      if (n.contains("leaf")) {
        node.value = n.at("leaf").get<double>();
      } else {
        node.feature = n.at("feature").get<int>();
        node.threshold = n.at("threshold").get<float>();
        node.left = n.at("left").get<int>();
        node.right = n.at("right").get<int>();
      }
      tree.nodes.push_back(node);
    }
    m.trees_.push_back(std::move(tree));
  }
  return m;
}

}  // namespace tlb::hybrid
