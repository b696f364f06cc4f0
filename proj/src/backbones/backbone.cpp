#include "backbones/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "common/error.hpp"
#include "nn/rng.hpp"
#include "nn/weights_io.hpp"

namespace tlb::backbones {

std::string_view token(BackboneId id) {
  switch (id) {
    case BackboneId::InceptionV3: return "inceptionv3";
    case BackboneId::Xception: return "xception";
    case BackboneId::DenseNet121: return "densenet121";
    case BackboneId::MobileNet: return "mobilenet";
    case BackboneId::ResNet50: return "resnet50";
    case BackboneId::VGG16: return "vgg16";
  }
  return "unknown";
}

std::string_view display_name(BackboneId id) {
  switch (id) {
    case BackboneId::InceptionV3: return "Inceptionv3";
    case BackboneId::Xception: return "Xception";
    case BackboneId::DenseNet121: return "Densenet";
    case BackboneId::MobileNet: return "Mobilenet";
    case BackboneId::ResNet50: return "Resnet50";
    case BackboneId::VGG16: return "VGG16";
  }
  return "unknown";
}

std::optional<BackboneId> parse_backbone(std::string_view text) {
  for (BackboneId id : kCanonicalOrder)
    if (text == token(id)) return id;
  return std::nullopt;
}

std::string describe(const HeadLayer& layer) {
  switch (layer.kind) {
    case HeadLayerKind::GlobalAvgPool: return "GLOBAL_AVG_POOL";
    case HeadLayerKind::GlobalMaxPool: return "GLOBAL_MAX_POOL";
    case HeadLayerKind::Flatten: return "FLATTEN";
    case HeadLayerKind::BatchNorm: return "BATCH_NORM";
    case HeadLayerKind::Dense:
      return "DENSE(" + std::to_string(layer.units) + ", " + layer.activation + ")";
    case HeadLayerKind::Dropout: {
      std::ostringstream os;
      os << "DROPOUT(" << layer.rate << ")";
      return os.str();
    }
  }
  return "?";
}

std::string describe(const HeadSpec& head) {
  std::string out = "[";
  for (std::size_t i = 0; i < head.size(); ++i) {
    if (i) out += ", ";
    out += describe(head[i]);
  }
  return out + "]";
}

HeadSpec head_for(BackboneId id) {
  const HeadLayer gap{HeadLayerKind::GlobalAvgPool, 0, "", 0.0};
  const HeadLayer gmp{HeadLayerKind::GlobalMaxPool, 0, "", 0.0};
  const HeadLayer flatten{HeadLayerKind::Flatten, 0, "", 0.0};
  const HeadLayer bn{HeadLayerKind::BatchNorm, 0, "", 0.0};
  const HeadLayer drop{HeadLayerKind::Dropout, 0, "", 0.5};
  const HeadLayer out{HeadLayerKind::Dense, 1, "sigmoid", 0.0};
  switch (id) {
    case BackboneId::InceptionV3:
    case BackboneId::DenseNet121:
    case BackboneId::MobileNet:
      return {gap, drop, out};
    case BackboneId::Xception:
    case BackboneId::ResNet50:
      return {flatten, bn, {HeadLayerKind::Dense, 128, "relu"}, bn, out};
    case BackboneId::VGG16:
      return {gmp, {HeadLayerKind::Dense, 512, "relu"}, drop, out};
  }
  return {};
}

BackboneSpec spec_for(BackboneId id) {
  BackboneSpec spec{id, head_for(id), 0};
  switch (id) {
    case BackboneId::InceptionV3: spec.expected_trainable_params = 21'770'401; break;
    case BackboneId::Xception: spec.expected_trainable_params = 33'853'225; break;
    case BackboneId::DenseNet121: spec.expected_trainable_params = 6'954'881; break;
    case BackboneId::MobileNet: spec.expected_trainable_params = 3'208'001; break;
    case BackboneId::ResNet50:
      spec.expected_trainable_params = 23'796'993;
      // A flattened 7x7x2048 map would put ~12.8M weights in DENSE(128) alone;
      // the published total only fits a globally pooled 2048-wide base.
      spec.base_pooling = BasePooling::Average;
      break;
    case BackboneId::VGG16: spec.expected_trainable_params = 14'977'857; break;
  }
  return spec;
}

namespace {

nn::NodeId append_head(nn::Graph& g, nn::NodeId x, const HeadSpec& head, std::uint64_t seed) {
  int dense = 0, norm = 0, drop = 0;
  for (const HeadLayer& layer : head) {
    const int width = static_cast<int>(g.shape(x).per_sample());
    switch (layer.kind) {
      case HeadLayerKind::GlobalAvgPool:
        x = g.emplace<nn::GlobalPool>({x}, "head_global_avg_pool", nn::PoolKind::Average);
        break;
      case HeadLayerKind::GlobalMaxPool:
        x = g.emplace<nn::GlobalPool>({x}, "head_global_max_pool", nn::PoolKind::Max);
        break;
      case HeadLayerKind::Flatten:
        x = g.emplace<nn::Flatten>({x}, "head_flatten");
        break;
      case HeadLayerKind::BatchNorm:
        x = g.emplace<nn::BatchNorm>({x}, "head_batch_norm_" + std::to_string(++norm), width,
                                     nn::BatchNormOptions{});
        break;
      case HeadLayerKind::Dense: {
        // The sigmoid output unit stays a logit inside the graph; the loss and
        // predict_proba apply the sigmoid.
        const auto act = layer.activation == "relu" ? nn::Activation::Relu : nn::Activation::None;
        x = g.emplace<nn::Dense>({x}, "head_dense_" + std::to_string(++dense), width, layer.units,
                                 act);
        break;
      }
      case HeadLayerKind::Dropout:
        ++drop;
        x = g.emplace<nn::Dropout>({x}, "head_dropout_" + std::to_string(drop),
                                   static_cast<float>(layer.rate), nn::mix_seed(seed, 0xD50 + drop));
        break;
    }
  }
  return x;
}

}  // namespace

Model build_model(const BackboneSpec& spec, const BuildOptions& options) {
  if (spec.head.empty() || spec.head.back().kind != HeadLayerKind::Dense ||
      spec.head.back().units != 1)
    throw Error(Errc::ShapeMismatch, "head must end in a single output unit");

  Model model{spec, build_base(spec.id, spec.base_pooling, spec.input_height, spec.input_width)};
  nn::Graph& g = model.graph;
  model.base_output = g.output();
  model.base_layers = g.size() - 1;
  const nn::NodeId out = append_head(g, model.base_output, spec.head, options.seed);
  model.feature_tap = model.base_output + 1;
  g.set_output(out);
  if (!(g.shape(out) == nn::Shape{1, 1, 1, 1}))
    throw Error(Errc::ShapeMismatch, "model output is " + nn::to_string(g.shape(out)));

  nn::initialize(g, options.seed);
  if (options.pretrained) {
    if (options.weights_path.empty() || !std::filesystem::exists(options.weights_path))
      throw Error(Errc::WeightsUnavailable,
                  std::string(token(spec.id)) + ": no local weights at '" +
                      options.weights_path.string() + "' and downloads are not supported");
    nn::Graph base = build_base(spec.id, spec.base_pooling, spec.input_height, spec.input_width);
    nn::load_weights(base, options.weights_path);
    // copy base tensors by name into the full model
    auto src = base.named_params();
    auto dst = g.named_params();
    for (auto& [name, p] : src) {
      const auto it = std::find_if(dst.begin(), dst.end(), [&](auto& d) { return d.first == name; });
      if (it == dst.end()) throw Error(Errc::ShapeMismatch, "unexpected weight " + name);
      it->second->value = p->value;
    }
    auto src_buf = base.named_buffers();
    auto dst_buf = g.named_buffers();
    for (auto& [name, t] : src_buf)
      for (auto& [dname, dt] : dst_buf)
        if (dname == name) *dt = *t;
  }
  set_base_trainable(model, options.trainable_base);
  return model;
}

void set_base_trainable(Model& model, bool trainable) {
  for (nn::NodeId id = 1; id <= model.base_output; ++id)
    for (nn::Param* p : model.graph.layer(id)->params()) p->trainable = trainable;
}

std::int64_t trainable_param_count(Model& model) {
  return nn::count_params(model.graph, true);
}

std::vector<LayerCount> layer_breakdown(Model& model) {
  std::vector<LayerCount> rows;
  nn::Graph& g = model.graph;
  for (nn::NodeId id = 1; id < g.size(); ++id) {
    nn::Layer* layer = g.layer(id);
    LayerCount row{layer->name(), std::string(layer->kind()), {}, 0, 0};
    const nn::Shape s = g.shape(id);
    row.output_shape = s.h == 1 && s.w == 1
                           ? std::to_string(s.c)
                           : std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
    for (nn::Param* p : layer->params())
      (p->trainable ? row.trainable : row.non_trainable) += static_cast<std::int64_t>(p->value.size());
    for (const nn::Buffer& b : layer->buffers())
      row.non_trainable += static_cast<std::int64_t>(b.tensor->size());
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

void check_batch(const Model& model, const nn::Tensor& batch) {
  const nn::Shape s = batch.shape();
  if (s.c != model.spec.input_channels || s.h != model.spec.input_height ||
      s.w != model.spec.input_width)
    throw Error(Errc::ShapeMismatch,
                "expected " + std::to_string(model.spec.input_height) + "x" +
                    std::to_string(model.spec.input_width) + "x" +
                    std::to_string(model.spec.input_channels) + " samples, got " +
                    nn::to_string(s));
}

}  // namespace

std::vector<double> predict_proba(Model& model, const nn::Tensor& batch) {
  if (batch.shape().n == 0) return {};
  check_batch(model, batch);
  const nn::Tensor& logits = model.graph.forward(batch, nn::Mode::Infer);
  std::vector<double> out(static_cast<std::size_t>(batch.shape().n));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z = logits[i];
    out[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  model.graph.clear_activations();
  return out;
}

nn::Tensor features_at_tap(Model& model, const nn::Tensor& batch) {
  const nn::Shape tap = model.graph.shape(model.feature_tap);
  if (batch.shape().n == 0) return nn::Tensor(tap.with_batch(0));
  check_batch(model, batch);
  const nn::NodeId keep[] = {model.feature_tap};
  model.graph.forward(batch, nn::Mode::Infer, keep);
  nn::Tensor features = model.graph.value(model.feature_tap);
  model.graph.clear_activations();
  return features;
}

}  // namespace tlb::backbones
