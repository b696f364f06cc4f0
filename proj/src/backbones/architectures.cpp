// Backbone graphs mirroring the Keras application models (include_top=False).
// Layer names follow a fresh Keras session so exported ImageNet weights map
// one-to-one; activations that directly follow a batch norm are fused into it.

#include <map>
#include <string>
#include <vector>

#include "backbones/backbone.hpp"
#include "common/error.hpp"

namespace tlb::backbones {

using nn::Activation;
using nn::BatchNormOptions;
using nn::ConvOptions;
using nn::NodeId;
using nn::PadMode;
using nn::PoolKind;

namespace {

class Builder {
 public:
  explicit Builder(nn::Graph& g) : g_(g) {}

  int channels(NodeId x) const { return g_.shape(x).c; }

  NodeId conv(NodeId x, const std::string& name, int filters, int kh, int kw, int stride,
              PadMode pad, bool bias, Activation act = Activation::None) {
    return g_.emplace<nn::Conv2D>({x}, name, channels(x),
                                  ConvOptions{.filters = filters, .kh = kh, .kw = kw,
                                              .stride_h = stride, .stride_w = stride,
                                              .pad = pad, .bias = bias, .act = act});
  }

  NodeId bn(NodeId x, const std::string& name, float eps, Activation act = Activation::None,
            bool scale = true) {
    return g_.emplace<nn::BatchNorm>({x}, name, channels(x),
                                     BatchNormOptions{.epsilon = eps, .scale = scale, .act = act});
  }

  NodeId depthwise(NodeId x, const std::string& name, int k, int stride, PadMode pad) {
    return g_.emplace<nn::DepthwiseConv2D>({x}, name, channels(x), k, stride, pad);
  }

  // Keras SeparableConv2D: depthwise then pointwise, no bias.
  NodeId separable(NodeId x, const std::string& name, int filters) {
    const NodeId dw = depthwise(x, name + "_depthwise", 3, 1, PadMode::Same);
    return conv(dw, name, filters, 1, 1, 1, PadMode::Same, false);
  }

  NodeId relu(NodeId x, const std::string& name, Activation act = Activation::Relu) {
    return g_.emplace<nn::ActivationLayer>({x}, name, act);
  }

  NodeId pool(NodeId x, const std::string& name, PoolKind kind, int k, int stride, PadMode pad) {
    return g_.emplace<nn::Pool2D>({x}, name, kind, k, stride, pad);
  }

  NodeId pad(NodeId x, const std::string& name, nn::Padding p) {
    return g_.emplace<nn::ZeroPad2D>({x}, name, p);
  }

  NodeId add(std::vector<NodeId> xs, const std::string& name, Activation act = Activation::None) {
    return g_.emplace<nn::Add>(std::move(xs), name, act);
  }

  NodeId concat(std::vector<NodeId> xs, const std::string& name) {
    return g_.emplace<nn::Concat>(std::move(xs), name);
  }

  // Auto-generated Keras layer names: "conv2d", "conv2d_1", ...
  std::string auto_name(const std::string& base) {
    const int k = counters_[base]++;
    return k == 0 ? base : base + "_" + std::to_string(k);
  }

 private:
  nn::Graph& g_;
  std::map<std::string, int> counters_;
};

// ---------------------------------------------------------------------------

NodeId vgg16(Builder& b, NodeId x) {
  const int widths[] = {64, 128, 256, 512, 512};
  const int depth[] = {2, 2, 3, 3, 3};
  for (int blk = 0; blk < 5; ++blk) {
    const std::string prefix = "block" + std::to_string(blk + 1);
    for (int i = 0; i < depth[blk]; ++i)
      x = b.conv(x, prefix + "_conv" + std::to_string(i + 1), widths[blk], 3, 3, 1, PadMode::Same,
                 true, Activation::Relu);
    x = b.pool(x, prefix + "_pool", PoolKind::Max, 2, 2, PadMode::Valid);
  }
  return x;
}

// ---------------------------------------------------------------------------

constexpr float kResNetEps = 1.001e-5f;

NodeId resnet_block(Builder& b, NodeId x, int filters, int stride, bool conv_shortcut,
                    const std::string& name) {
  NodeId shortcut = x;
  if (conv_shortcut) {
    shortcut = b.conv(x, name + "_0_conv", 4 * filters, 1, 1, stride, PadMode::Valid, true);
    shortcut = b.bn(shortcut, name + "_0_bn", kResNetEps);
  }
  NodeId y = b.conv(x, name + "_1_conv", filters, 1, 1, stride, PadMode::Valid, true);
  y = b.bn(y, name + "_1_bn", kResNetEps, Activation::Relu);
  y = b.conv(y, name + "_2_conv", filters, 3, 3, 1, PadMode::Same, true);
  y = b.bn(y, name + "_2_bn", kResNetEps, Activation::Relu);
  y = b.conv(y, name + "_3_conv", 4 * filters, 1, 1, 1, PadMode::Valid, true);
  y = b.bn(y, name + "_3_bn", kResNetEps);
  return b.add({shortcut, y}, name + "_add", Activation::Relu);
}

NodeId resnet_stack(Builder& b, NodeId x, int filters, int blocks, int stride,
                    const std::string& name) {
  x = resnet_block(b, x, filters, stride, true, name + "_block1");
  for (int i = 2; i <= blocks; ++i)
    x = resnet_block(b, x, filters, 1, false, name + "_block" + std::to_string(i));
  return x;
}

NodeId resnet50(Builder& b, NodeId x) {
  x = b.pad(x, "conv1_pad", {3, 3, 3, 3});
  x = b.conv(x, "conv1_conv", 64, 7, 7, 2, PadMode::Valid, true);
  x = b.bn(x, "conv1_bn", kResNetEps, Activation::Relu);
  x = b.pad(x, "pool1_pad", {1, 1, 1, 1});
  x = b.pool(x, "pool1_pool", PoolKind::Max, 3, 2, PadMode::Valid);
  x = resnet_stack(b, x, 64, 3, 1, "conv2");
  x = resnet_stack(b, x, 128, 4, 2, "conv3");
  x = resnet_stack(b, x, 256, 6, 2, "conv4");
  return resnet_stack(b, x, 512, 3, 2, "conv5");
}

// ---------------------------------------------------------------------------

constexpr float kDenseNetEps = 1.001e-5f;

NodeId densenet121(Builder& b, NodeId x) {
  x = b.pad(x, b.auto_name("zero_padding2d"), {3, 3, 3, 3});
  x = b.conv(x, "conv1_conv", 64, 7, 7, 2, PadMode::Valid, false);
  x = b.bn(x, "conv1_bn", kDenseNetEps, Activation::Relu);
  x = b.pad(x, b.auto_name("zero_padding2d"), {1, 1, 1, 1});
  x = b.pool(x, "pool1", PoolKind::Max, 3, 2, PadMode::Valid);

  const int blocks[] = {6, 12, 24, 16};
  // Each dense layer concatenates every earlier piece of its block at once,
  // rather than chaining pairwise concatenations.
  std::vector<NodeId> pieces{x};
  for (int stage = 0; stage < 4; ++stage) {
    const std::string stage_name = "conv" + std::to_string(stage + 2);
    for (int i = 1; i <= blocks[stage]; ++i) {
      const std::string name = stage_name + "_block" + std::to_string(i);
      NodeId y = b.bn(x, name + "_0_bn", kDenseNetEps, Activation::Relu);
      y = b.conv(y, name + "_1_conv", 128, 1, 1, 1, PadMode::Valid, false);
      y = b.bn(y, name + "_1_bn", kDenseNetEps, Activation::Relu);
      y = b.conv(y, name + "_2_conv", 32, 3, 3, 1, PadMode::Same, false);
      pieces.push_back(y);
      x = b.concat(pieces, name + "_concat");
    }
    if (stage == 3) break;
    const std::string name = "pool" + std::to_string(stage + 2);
    NodeId y = b.bn(x, name + "_bn", kDenseNetEps, Activation::Relu);
    y = b.conv(y, name + "_conv", b.channels(x) / 2, 1, 1, 1, PadMode::Valid, false);
    x = b.pool(y, name + "_pool", PoolKind::Average, 2, 2, PadMode::Valid);
    pieces = {x};
  }
  return b.bn(x, "bn", kDenseNetEps, Activation::Relu);
}

// ---------------------------------------------------------------------------

NodeId mobilenet(Builder& b, NodeId x) {
  constexpr float eps = 1e-3f;
  x = b.conv(x, "conv1", 32, 3, 3, 2, PadMode::Same, false);
  x = b.bn(x, "conv1_bn", eps, Activation::Relu6);
  struct Block {
    int filters;
    int stride;
  };
  const Block blocks[] = {{64, 1},  {128, 2}, {128, 1}, {256, 2},  {256, 1},  {512, 2}, {512, 1},
                          {512, 1}, {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1}};
  int id = 1;
  for (const Block& blk : blocks) {
    const std::string n = std::to_string(id++);
    PadMode mode = PadMode::Same;
    if (blk.stride == 2) {
      x = b.pad(x, "conv_pad_" + n, {0, 1, 0, 1});
      mode = PadMode::Valid;
    }
    x = b.depthwise(x, "conv_dw_" + n, 3, blk.stride, mode);
    x = b.bn(x, "conv_dw_" + n + "_bn", eps, Activation::Relu6);
    x = b.conv(x, "conv_pw_" + n, blk.filters, 1, 1, 1, PadMode::Same, false);
    x = b.bn(x, "conv_pw_" + n + "_bn", eps, Activation::Relu6);
  }
  return x;
}

// ---------------------------------------------------------------------------

class Inception {
 public:
  explicit Inception(Builder& b) : b_(b) {}

  // Keras conv2d_bn: conv without bias, batch norm without scale, relu.
  NodeId conv_bn(NodeId x, int filters, int kh, int kw, int stride = 1,
                 PadMode pad = PadMode::Same) {
    x = b_.conv(x, b_.auto_name("conv2d"), filters, kh, kw, stride, pad, false);
    return b_.bn(x, b_.auto_name("batch_normalization"), 1e-3f, Activation::Relu, false);
  }

  NodeId avg_pool(NodeId x) {
    return b_.pool(x, b_.auto_name("average_pooling2d"), PoolKind::Average, 3, 1, PadMode::Same);
  }

  NodeId max_pool(NodeId x) {
    return b_.pool(x, b_.auto_name("max_pooling2d"), PoolKind::Max, 3, 2, PadMode::Valid);
  }

  NodeId build(NodeId x) {
    x = conv_bn(x, 32, 3, 3, 2, PadMode::Valid);
    x = conv_bn(x, 32, 3, 3, 1, PadMode::Valid);
    x = conv_bn(x, 64, 3, 3);
    x = max_pool(x);
    x = conv_bn(x, 80, 1, 1, 1, PadMode::Valid);
    x = conv_bn(x, 192, 3, 3, 1, PadMode::Valid);
    x = max_pool(x);

    for (int i = 0; i < 3; ++i) {
      const NodeId b1 = conv_bn(x, 64, 1, 1);
      NodeId b5 = conv_bn(x, 48, 1, 1);
      b5 = conv_bn(b5, 64, 5, 5);
      NodeId bd = conv_bn(x, 64, 1, 1);
      bd = conv_bn(bd, 96, 3, 3);
      bd = conv_bn(bd, 96, 3, 3);
      NodeId bp = avg_pool(x);
      bp = conv_bn(bp, i == 0 ? 32 : 64, 1, 1);
      x = b_.concat({b1, b5, bd, bp}, "mixed" + std::to_string(i));
    }

    {
      const NodeId b3 = conv_bn(x, 384, 3, 3, 2, PadMode::Valid);
      NodeId bd = conv_bn(x, 64, 1, 1);
      bd = conv_bn(bd, 96, 3, 3);
      bd = conv_bn(bd, 96, 3, 3, 2, PadMode::Valid);
      const NodeId bp = max_pool(x);
      x = b_.concat({b3, bd, bp}, "mixed3");
    }

    const int widths[] = {128, 160, 160, 192};
    for (int i = 0; i < 4; ++i) {
      const int w = widths[i];
      const NodeId b1 = conv_bn(x, 192, 1, 1);
      NodeId b7 = conv_bn(x, w, 1, 1);
      b7 = conv_bn(b7, w, 1, 7);
      b7 = conv_bn(b7, 192, 7, 1);
      NodeId bd = conv_bn(x, w, 1, 1);
      bd = conv_bn(bd, w, 7, 1);
      bd = conv_bn(bd, w, 1, 7);
      bd = conv_bn(bd, w, 7, 1);
      bd = conv_bn(bd, 192, 1, 7);
      NodeId bp = avg_pool(x);
      bp = conv_bn(bp, 192, 1, 1);
      x = b_.concat({b1, b7, bd, bp}, "mixed" + std::to_string(4 + i));
    }

    {
      NodeId b3 = conv_bn(x, 192, 1, 1);
      b3 = conv_bn(b3, 320, 3, 3, 2, PadMode::Valid);
      NodeId b7 = conv_bn(x, 192, 1, 1);
      b7 = conv_bn(b7, 192, 1, 7);
      b7 = conv_bn(b7, 192, 7, 1);
      b7 = conv_bn(b7, 192, 3, 3, 2, PadMode::Valid);
      const NodeId bp = max_pool(x);
      x = b_.concat({b3, b7, bp}, "mixed8");
    }

    for (int i = 0; i < 2; ++i) {
      const NodeId b1 = conv_bn(x, 320, 1, 1);
      NodeId b3 = conv_bn(x, 384, 1, 1);
      const NodeId b3a = conv_bn(b3, 384, 1, 3);
      const NodeId b3b = conv_bn(b3, 384, 3, 1);
      b3 = b_.concat({b3a, b3b}, "mixed9_" + std::to_string(i));
      NodeId bd = conv_bn(x, 448, 1, 1);
      bd = conv_bn(bd, 384, 3, 3);
      const NodeId bda = conv_bn(bd, 384, 1, 3);
      const NodeId bdb = conv_bn(bd, 384, 3, 1);
      bd = b_.concat({bda, bdb}, b_.auto_name("concatenate"));
      NodeId bp = avg_pool(x);
      bp = conv_bn(bp, 192, 1, 1);
      x = b_.concat({b1, b3, bd, bp}, "mixed" + std::to_string(9 + i));
    }
    return x;
  }

 private:
  Builder& b_;
};

// ---------------------------------------------------------------------------

NodeId xception(Builder& b, NodeId x) {
  constexpr float eps = 1e-3f;
  x = b.conv(x, "block1_conv1", 32, 3, 3, 2, PadMode::Valid, false);
  x = b.bn(x, "block1_conv1_bn", eps, Activation::Relu);
  x = b.conv(x, "block1_conv2", 64, 3, 3, 1, PadMode::Valid, false);
  x = b.bn(x, "block1_conv2_bn", eps, Activation::Relu);

  // Entry flow: blocks 2-4 downsample with a strided 1x1 shortcut.
  const int entry[] = {128, 256, 728};
  for (int i = 0; i < 3; ++i) {
    const std::string p = "block" + std::to_string(i + 2);
    NodeId residual = b.conv(x, b.auto_name("conv2d"), entry[i], 1, 1, 2, PadMode::Same, false);
    residual = b.bn(residual, b.auto_name("batch_normalization"), eps);
    NodeId y = x;
    if (i > 0) y = b.relu(y, p + "_sepconv1_act");
    y = b.separable(y, p + "_sepconv1", entry[i]);
    y = b.bn(y, p + "_sepconv1_bn", eps, Activation::Relu);
    y = b.separable(y, p + "_sepconv2", entry[i]);
    y = b.bn(y, p + "_sepconv2_bn", eps);
    y = b.pool(y, p + "_pool", PoolKind::Max, 3, 2, PadMode::Same);
    x = b.add({y, residual}, b.auto_name("add"));
  }

  // Middle flow: eight identity-shortcut blocks.
  for (int i = 0; i < 8; ++i) {
    const std::string p = "block" + std::to_string(i + 5);
    NodeId y = b.relu(x, p + "_sepconv1_act");
    y = b.separable(y, p + "_sepconv1", 728);
    y = b.bn(y, p + "_sepconv1_bn", eps, Activation::Relu);
    y = b.separable(y, p + "_sepconv2", 728);
    y = b.bn(y, p + "_sepconv2_bn", eps, Activation::Relu);
    y = b.separable(y, p + "_sepconv3", 728);
    y = b.bn(y, p + "_sepconv3_bn", eps);
    x = b.add({y, x}, b.auto_name("add"));
  }

  // Exit flow.
  NodeId residual = b.conv(x, b.auto_name("conv2d"), 1024, 1, 1, 2, PadMode::Same, false);
  residual = b.bn(residual, b.auto_name("batch_normalization"), eps);
  NodeId y = b.relu(x, "block13_sepconv1_act");
  y = b.separable(y, "block13_sepconv1", 728);
  y = b.bn(y, "block13_sepconv1_bn", eps, Activation::Relu);
  y = b.separable(y, "block13_sepconv2", 1024);
  y = b.bn(y, "block13_sepconv2_bn", eps);
  y = b.pool(y, "block13_pool", PoolKind::Max, 3, 2, PadMode::Same);
  x = b.add({y, residual}, b.auto_name("add"));

  x = b.separable(x, "block14_sepconv1", 1536);
  x = b.bn(x, "block14_sepconv1_bn", eps, Activation::Relu);
  x = b.separable(x, "block14_sepconv2", 2048);
  return b.bn(x, "block14_sepconv2_bn", eps, Activation::Relu);
}

}  // namespace

nn::Graph build_base(BackboneId id, BasePooling pooling, int height, int width) {
  nn::Graph g;
  Builder b(g);
  NodeId x = g.add_input({1, 3, height, width});
  switch (id) {
    case BackboneId::VGG16: x = vgg16(b, x); break;
    case BackboneId::ResNet50: x = resnet50(b, x); break;
    case BackboneId::DenseNet121: x = densenet121(b, x); break;
    case BackboneId::MobileNet: x = mobilenet(b, x); break;
    case BackboneId::InceptionV3: x = Inception(b).build(x); break;
    case BackboneId::Xception: x = xception(b, x); break;
  }
  if (pooling == BasePooling::Average)
    x = g.emplace<nn::GlobalPool>({x}, "avg_pool", PoolKind::Average);
  g.set_output(x);
  return g;
}

}  // namespace tlb::backbones
