#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "nn/graph.hpp"
#include "nn/layer.hpp"
#include "nn/rng.hpp"

using namespace tlb::nn;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(s);
  Rng rng(seed);
  for (float& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Distinct values spaced well beyond the finite-difference step, so max
// selections never flip during the check.
Tensor separated_tensor(Shape s, std::uint64_t seed) {
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = -1.0f + 0.05f * static_cast<float>(i);
  Rng rng(seed);
  auto v = t.values();
  shuffle(v.begin(), v.end(), rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// Compares an analytic gradient against central differences of
// loss = <r, layer(x)> for every element of `target`.
void check_gradient(const std::function<double()>& loss, Tensor& target, const Tensor& analytic,
                    const char* what, float eps = 1e-2f, double tol = 2e-2) {
  REQUIRE(analytic.size() == target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const float saved = target[i];
    target[i] = saved + eps;
    const double up = loss();
    target[i] = saved - eps;
    const double down = loss();
    target[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(numeric - analytic[i]);
    INFO(what << "[" << i << "] numeric " << numeric << " analytic " << analytic[i]);
    CHECK(err <= tol * std::max(1.0, std::abs(numeric)));
  }
}

// Runs the standard forward/backward check for a single-input layer.
void check_layer(Layer& layer, Tensor x, Mode mode = Mode::Train, bool check_params = true) {
  const Shape xs = x.shape();
  std::vector<Shape> in_shapes{xs};
  const Shape ys = layer.output_shape(in_shapes).with_batch(xs.n);
  const Tensor r = random_tensor(ys, 99);

  auto loss = [&] {
    Tensor y;
    const Tensor* in[] = {&x};
    layer.forward(in, y, mode);
    return dot(y, r);
  };

  Tensor y;
  const Tensor* in[] = {&x};
  layer.forward(in, y, mode);
  REQUIRE(y.shape() == ys);
  for (Param* p : layer.params())
    if (p->grad.allocated()) p->grad.fill(0.0f);
  Tensor dx(xs);
  Tensor* din[] = {&dx};
  layer.backward(in, y, r, din);

  check_gradient(loss, x, dx, "input");
  if (!check_params) return;
  for (Param* p : layer.params()) {
    if (!p->trainable) continue;
    REQUIRE(p->grad.allocated());
    const Tensor g = p->grad;
    check_gradient(loss, p->value, g, p->name.c_str());
  }
}

void randomize(Layer& layer, std::uint64_t seed) {
  for (Param* p : layer.params()) {
    Rng rng(seed++);
    for (float& v : p->value.values()) v = rng.uniform(-0.5f, 0.5f);
  }
}

}  // namespace

TEST_CASE("conv2d gradients, valid and same padding, strided") {
  for (PadMode pad : {PadMode::Valid, PadMode::Same}) {
    for (int stride : {1, 2}) {
      Conv2D conv("c", 3, {.filters = 4, .kh = 3, .kw = 3, .stride_h = stride, .stride_w = stride,
                           .pad = pad, .bias = true});
      randomize(conv, 5);
      check_layer(conv, random_tensor({2, 3, 6, 7}, 1));
    }
  }
}

TEST_CASE("conv2d pointwise and asymmetric kernels with relu") {
  Conv2D pw("pw", 5, {.filters = 3, .kh = 1, .kw = 1, .bias = true});
  randomize(pw, 3);
  check_layer(pw, random_tensor({2, 5, 4, 4}, 2));

  Conv2D row("row", 2, {.filters = 3, .kh = 1, .kw = 3, .pad = PadMode::Same, .bias = false});
  randomize(row, 4);
  check_layer(row, random_tensor({2, 2, 5, 5}, 3));

  Conv2D col("col", 2, {.filters = 3, .kh = 3, .kw = 1, .pad = PadMode::Same,
                        .act = Activation::Relu});
  randomize(col, 6);
  check_layer(col, random_tensor({2, 2, 5, 5}, 4));
}

TEST_CASE("depthwise conv gradients") {
  for (int stride : {1, 2}) {
    DepthwiseConv2D dw("dw", 3, 3, stride, stride == 1 ? PadMode::Same : PadMode::Valid);
    randomize(dw, 9);
    check_layer(dw, random_tensor({2, 3, 7, 7}, 5));
  }
}

TEST_CASE("batch norm gradients in training mode") {
  BatchNorm bn("bn", 3, {.epsilon = 1e-3f});
  randomize(bn, 2);
  check_layer(bn, random_tensor({4, 3, 3, 3}, 6), Mode::Train);

  BatchNorm no_scale("bn2", 2, {.epsilon = 1e-3f, .scale = false});
  check_layer(no_scale, random_tensor({3, 2, 2, 2}, 7), Mode::Train);

  BatchNorm dense_bn("bn3", 5, {});
  check_layer(dense_bn, random_tensor({6, 5, 1, 1}, 8), Mode::Train);
}

TEST_CASE("batch norm inference uses moving statistics") {
  BatchNorm bn("bn", 2, {.epsilon = 0.0f, .momentum = 0.5f});
  const Tensor x = random_tensor({4, 2, 2, 2}, 10);
  Tensor y;
  const Tensor* in[] = {&x};
  bn.forward(in, y, Mode::Infer);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]));

  bn.forward(in, y, Mode::Train);
  // moving mean moved halfway towards the batch mean
  double m0 = 0;
  for (int n = 0; n < 4; ++n)
    for (int i = 0; i < 4; ++i) m0 += x.sample(n)[i];
  m0 /= 16;
  Tensor* mm = bn.buffers()[0].tensor;
  CHECK((*mm)[0] == doctest::Approx(0.5 * m0).epsilon(1e-5));
}

TEST_CASE("pooling gradients") {
  Pool2D maxp("mp", PoolKind::Max, 3, 2, PadMode::Same);
  check_layer(maxp, separated_tensor({2, 2, 7, 7}, 11));
  Pool2D maxv("mv", PoolKind::Max, 2, 2, PadMode::Valid);
  check_layer(maxv, separated_tensor({2, 2, 6, 6}, 12));
  Pool2D avg("ap", PoolKind::Average, 3, 1, PadMode::Same);
  check_layer(avg, random_tensor({2, 2, 5, 5}, 13));
  Pool2D avg2("ap2", PoolKind::Average, 2, 2, PadMode::Valid);
  check_layer(avg2, random_tensor({2, 2, 4, 4}, 14));
  GlobalPool gmax("gm", PoolKind::Max);
  check_layer(gmax, separated_tensor({2, 3, 4, 4}, 15));
  GlobalPool gavg("ga", PoolKind::Average);
  check_layer(gavg, random_tensor({2, 3, 4, 4}, 16));
}

TEST_CASE("same-padded average pooling excludes padding from the count") {
  Pool2D avg("ap", PoolKind::Average, 3, 1, PadMode::Same);
  Tensor x({1, 1, 3, 3}, 1.0f);
  Tensor y;
  const Tensor* in[] = {&x};
  avg.forward(in, y, Mode::Infer);
  for (float v : y.values()) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("elementwise layers") {
  ActivationLayer relu("r", Activation::Relu);
  check_layer(relu, random_tensor({2, 3, 3, 3}, 17));
  ActivationLayer relu6("r6", Activation::Relu6);
  check_layer(relu6, random_tensor({2, 3, 3, 3}, 18, -3.0f, 9.0f));
  ZeroPad2D pad("zp", {0, 1, 0, 1});
  check_layer(pad, random_tensor({2, 2, 3, 3}, 19));
  Flatten flat("f");
  check_layer(flat, random_tensor({2, 2, 3, 3}, 20));
}

TEST_CASE("dense gradients") {
  Dense d("d", 6, 4, Activation::Relu);
  randomize(d, 21);
  check_layer(d, random_tensor({3, 6, 1, 1}, 22));
  Dense logit("l", 4, 1);
  randomize(logit, 23);
  check_layer(logit, random_tensor({5, 4, 1, 1}, 24));
}

TEST_CASE("dropout is identity at inference and masks consistently in training") {
  Dropout drop("drop", 0.5f, 3);
  const Tensor x = random_tensor({4, 8, 1, 1}, 25);
  Tensor y;
  const Tensor* in[] = {&x};
  drop.forward(in, y, Mode::Infer);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

  drop.forward(in, y, Mode::Train);
  int zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0.0f) ++zeros;
    else CHECK(y[i] == doctest::Approx(2.0f * x[i]));
  }
  CHECK(zeros > 0);
  CHECK(zeros < static_cast<int>(x.size()));
  Tensor again;
  drop.recompute(in, again);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(again[i] == y[i]);
}

TEST_CASE("add and concat route gradients to every input") {
  const Tensor a = random_tensor({2, 2, 3, 3}, 26);
  const Tensor b = random_tensor({2, 3, 3, 3}, 27);
  Concat cat("cat");
  Tensor y;
  const Tensor* in[] = {&a, &b};
  cat.forward(in, y, Mode::Train);
  REQUIRE(y.shape() == Shape{2, 5, 3, 3});
  const Tensor r = random_tensor(y.shape(), 28);
  Tensor da(a.shape()), db(b.shape());
  Tensor* din[] = {&da, &db};
  cat.backward(in, y, r, din);
  CHECK(da.sample(1)[0] == r.sample(1)[0]);
  CHECK(db.sample(1)[0] == r.sample(1)[2 * 9]);

  Add add("add", Activation::Relu);
  const Tensor c = random_tensor({2, 2, 3, 3}, 29);
  const Tensor* ain[] = {&a, &c};
  Tensor s;
  add.forward(ain, s, Mode::Train);
  const Tensor rs = random_tensor(s.shape(), 30);
  Tensor ga(a.shape()), gc(c.shape());
  Tensor* gin[] = {&ga, &gc};
  add.backward(ain, s, rs, gin);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const float expect = (a[i] + c[i]) > 0 ? rs[i] : 0.0f;
    CHECK(ga[i] == doctest::Approx(expect));
    CHECK(gc[i] == doctest::Approx(expect));
  }
}

TEST_CASE("graph backward with released and recomputed activations matches finite differences") {
  // conv -> bn+relu -> {conv a, conv b} -> concat -> pad -> conv -> add(skip) -> gap -> dense
  Graph g;
  const NodeId x = g.add_input({1, 2, 6, 6});
  const NodeId c1 = g.emplace<Conv2D>({x}, "c1", 2, ConvOptions{.filters = 3, .kh = 3, .kw = 3,
                                                                 .pad = PadMode::Same});
  const NodeId b1 = g.emplace<BatchNorm>({c1}, "b1", 3, BatchNormOptions{.act = Activation::Relu});
  const NodeId ca = g.emplace<Conv2D>({b1}, "ca", 3, ConvOptions{.filters = 2, .pad = PadMode::Same});
  const NodeId cb = g.emplace<Conv2D>({b1}, "cb", 3, ConvOptions{.filters = 1, .kh = 3, .kw = 3,
                                                                 .pad = PadMode::Same});
  const NodeId cat = g.emplace<Concat>({ca, cb}, "cat");
  const NodeId pad = g.emplace<ZeroPad2D>({cat}, "pad", Padding{1, 1, 1, 1});
  const NodeId c2 = g.emplace<Conv2D>({pad}, "c2", 3, ConvOptions{.filters = 3, .kh = 3, .kw = 3});
  const NodeId b2 = g.emplace<BatchNorm>({c2}, "b2", 3);
  const NodeId sum = g.emplace<Add>({b2, b1}, "sum", Activation::Relu);
  const NodeId gap = g.emplace<GlobalPool>({sum}, "gap", PoolKind::Average);
  const NodeId out = g.emplace<Dense>({gap}, "out", 3, 1);
  CHECK(g.output() == out);
  initialize(g, 17);

  const Tensor batch = random_tensor({3, 2, 6, 6}, 31);
  const Tensor r({3, 1, 1, 1}, 1.0f);
  auto loss = [&] { return dot(g.forward(batch, Mode::Train), r); };

  const auto params = g.params();
  for (Param* p : params)
    if (p->grad.allocated()) p->grad.fill(0.0f);
  g.forward(batch, Mode::Train);
  g.backward(r);
  for (auto& [name, p] : g.named_params()) {
    REQUIRE(p->grad.allocated());
    const Tensor grad = p->grad;
    check_gradient(loss, p->value, grad, name.c_str(), 1e-2f, 3e-2);
  }
}

TEST_CASE("graph inference releases intermediates but keeps requested taps") {
  Graph g;
  const NodeId x = g.add_input({1, 1, 4, 4});
  const NodeId c = g.emplace<Conv2D>({x}, "c", 1, ConvOptions{.filters = 2, .kh = 3, .kw = 3});
  const NodeId p = g.emplace<GlobalPool>({c}, "p", PoolKind::Max);
  g.emplace<Dense>({p}, "d", 2, 1);
  initialize(g, 1);
  const Tensor batch = random_tensor({2, 1, 4, 4}, 32);
  const NodeId keep[] = {p};
  const Tensor& y = g.forward(batch, Mode::Infer, keep);
  CHECK(y.shape() == Shape{2, 1, 1, 1});
  CHECK(g.value(p).allocated());
  CHECK_FALSE(g.value(c).allocated());
}

TEST_CASE("glorot initialization respects the Keras fan limits") {
  Graph g;
  const NodeId x = g.add_input({1, 3, 8, 8});
  g.emplace<Conv2D>({x}, "c", 3, ConvOptions{.filters = 16, .kh = 3, .kw = 3});
  initialize(g, 42);
  const Param* k = g.params()[0];
  const float limit = std::sqrt(6.0f / (27.0f + 144.0f));
  float lo = 1, hi = -1;
  for (float v : k->value.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -limit);
  CHECK(hi <= limit);
  CHECK(hi > 0.8f * limit);
  for (float v : g.params()[1]->value.values()) CHECK(v == 0.0f);
}
