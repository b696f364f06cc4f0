#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "common/error.hpp"
#include "stacking/stacking.hpp"

using namespace tlb::stacking;

namespace {

const double kX[16][6] = {
    {0.590, 0.485, 0.700, 0.834, 0.977, 0.772}, {0.139, 0.093, 0.400, 0.577, 0.305, 0.003},
    {0.558, 1.000, 0.791, 0.404, 0.733, 0.517}, {0.124, 0.152, 0.107, 0.361, 0.237, 0.132},
    {0.832, 0.916, 0.421, 0.699, 0.554, 0.715}, {0.000, 0.254, 0.242, 0.189, 0.040, 0.171},
    {0.532, 0.479, 0.795, 0.528, 0.984, 0.893}, {0.000, 0.304, 0.030, 0.257, 0.259, 0.000},
    {0.703, 0.699, 0.942, 0.514, 0.898, 0.530}, {0.184, 0.082, 0.540, 0.364, 0.736, 0.378},
    {0.919, 0.918, 0.629, 0.736, 1.000, 0.671}, {0.288, 0.246, 0.372, 0.177, 0.220, 0.298},
    {0.771, 0.577, 0.929, 0.490, 0.510, 0.494}, {0.443, 0.178, 0.056, 0.023, 0.334, 0.039},
    {0.496, 0.873, 0.511, 0.686, 0.749, 0.661}, {0.239, 0.518, 0.147, 0.000, 0.000, 0.209},
};

// scikit-learn LogisticRegression(C = 1/lambda) on the rows above.
const double kSklearnLambda1[7] = {-2.318150244300, 0.879726377309, 0.970374578682, 0.816190373329,
                                   0.632396758027,  0.853517479789, 0.864325075158};
const double kSklearnLambda01[7] = {-5.565217972931, 2.244634152866, 2.642474534551, 1.888948091911,
                                    1.519778455056,  1.671088196944, 1.988270699306};

LevelZeroOutputs fixture(const std::string& prefix = "val/") {
  LevelZeroOutputs out;
  out.matrix.resize(16, 6);
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 6; ++j) out.matrix(i, j) = kX[i][j];
    out.sample_ids.push_back(prefix + std::to_string(i));
  }
  return out;
}

std::vector<int> fixture_labels() {
  std::vector<int> y;
  for (int i = 0; i < 16; ++i) y.push_back(i % 2 == 0 ? 1 : 0);
  return y;
}

tlb::dataset::SplitAssignment split_for(const LevelZeroOutputs& val) {
  tlb::dataset::SplitAssignment s;
  s.spec = tlb::dataset::SplitSpec::stacking(0);
  s.val_ids = val.sample_ids;
  for (int i = 0; i < 10; ++i) {
    s.train_ids.push_back("train/" + std::to_string(i));
    s.test_ids.push_back("test/" + std::to_string(i));
  }
  return s;
}

}  // namespace

TEST_CASE("meta-learner matches an external L2 logistic regression") {
  const auto x = fixture();
  const auto y = fixture_labels();
  for (auto [lambda, ref] : {std::pair{1.0, kSklearnLambda1}, std::pair{0.1, kSklearnLambda01}}) {
    CAPTURE(lambda);
    const MetaLearner m = fit_meta_unchecked(x, y, {.lambda = lambda});
    CHECK(m.intercept == doctest::Approx(ref[0]).epsilon(1e-6));
    for (int j = 0; j < 6; ++j) CHECK(m.coefficients[j] == doctest::Approx(ref[j + 1]).epsilon(1e-6));
    CHECK(m.gradient_norm < 1e-8);
  }
}

TEST_CASE("meta-learner solution is stationary for the penalized objective") {
  const auto x = fixture();
  const auto y = fixture_labels();
  const MetaLearner m = fit_meta_unchecked(x, y, {.lambda = 0.5});
  // gradient recomputed by hand: sum (p - y) [1, x] + lambda [0, w]
  double g[7] = {};
  for (int i = 0; i < 16; ++i) {
    double z = m.intercept;
    for (int j = 0; j < 6; ++j) z += m.coefficients[j] * kX[i][j];
    const double r = 1.0 / (1.0 + std::exp(-z)) - y[i];
    g[0] += r;
    for (int j = 0; j < 6; ++j) g[j + 1] += r * kX[i][j];
  }
  for (int j = 0; j < 6; ++j) g[j + 1] += 0.5 * m.coefficients[j];
  for (double v : g) CHECK(std::abs(v) < 1e-7);
}

TEST_CASE("predict_stacked is the logistic of the linear score") {
  const auto x = fixture();
  const MetaLearner m = fit_meta_unchecked(x, fixture_labels());
  const StackedPrediction p = predict_stacked(m, x);
  REQUIRE(p.probabilities.size() == 16);
  for (int i = 0; i < 16; ++i) {
    double z = m.intercept;
    for (int j = 0; j < 6; ++j) z += m.coefficients[j] * kX[i][j];
    CHECK(std::abs(p.probabilities[i] - 1.0 / (1.0 + std::exp(-z))) < 1e-12);
    CHECK(p.labels[i] == (p.probabilities[i] >= 0.5 ? 1 : 0));
  }
}

TEST_CASE("meta.json round-trips bit for bit") {
  const MetaLearner m = fit_meta_unchecked(fixture(), fixture_labels());
  const MetaLearner back = meta_from_json(nlohmann::ordered_json::parse(to_json(m).dump()));
  CHECK(back.intercept == m.intercept);
  CHECK(back.coefficients == m.coefficients);
  CHECK(back.lambda == m.lambda);
  CHECK(back.model_order == m.model_order);
  const auto j = to_json(m);
  CHECK(j["model_order"][0] == "inceptionv3");
  CHECK(j["model_order"][5] == "vgg16");
}

TEST_CASE("leakage guard") {
  const auto y = fixture_labels();
  const auto val = fixture();
  auto split = split_for(val);
  CHECK_NOTHROW(fit_meta(val, y, split));

  auto expect_leak = [&](const LevelZeroOutputs& rows) {
    try {
      fit_meta(rows, y, split);
      FAIL("expected Leakage");
    } catch (const tlb::Error& e) {
      CHECK(e.code() == tlb::Errc::Leakage);
    }
  };
  for (int k = 0; k < 16; ++k) {
    auto leaked = fixture();
    leaked.sample_ids[k] = "test/" + std::to_string(k % 10);
    expect_leak(leaked);
  }
  auto with_train = fixture();
  with_train.sample_ids[3] = "train/1";
  expect_leak(with_train);
  auto stranger = fixture();
  stranger.sample_ids[0] = "elsewhere";
  expect_leak(stranger);
}

TEST_CASE("degenerate meta fits") {
  std::vector<int> one_class(16, 1);
  try {
    fit_meta_unchecked(fixture(), one_class);
    FAIL("expected SingularFit");
  } catch (const tlb::Error& e) {
    CHECK(e.code() == tlb::Errc::SingularFit);
  }
  const std::vector<int> short_labels(3, 0);
  CHECK_THROWS_AS(fit_meta_unchecked(fixture(), short_labels), tlb::Error);

  // perfectly separable rows still converge thanks to the penalty
  LevelZeroOutputs sep = fixture();
  for (int i = 0; i < 16; ++i) sep.matrix.row(i).setConstant(i % 2 == 0 ? 0.9 : 0.1);
  const MetaLearner m = fit_meta_unchecked(sep, fixture_labels());
  CHECK(m.gradient_norm < 1e-8);
  const auto p = predict_stacked(m, sep);
  for (int i = 0; i < 16; ++i) CHECK(p.labels[i] == (i % 2 == 0 ? 1 : 0));

  LevelZeroOutputs reordered = fixture();
  std::swap(reordered.model_order[0], reordered.model_order[1]);
  CHECK_THROWS_AS(predict_stacked(m, reordered), tlb::Error);
}
