#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nn/graph.hpp"

namespace tlb::backbones {

enum class BackboneId { InceptionV3, Xception, DenseNet121, MobileNet, ResNet50, VGG16 };

// Level-0 column order of the stacking ensemble.
inline constexpr std::array<BackboneId, 6> kCanonicalOrder = {
    BackboneId::InceptionV3, BackboneId::Xception,  BackboneId::DenseNet121,
    BackboneId::MobileNet,   BackboneId::ResNet50, BackboneId::VGG16};

// CLI token ("inceptionv3") and report row name ("Inceptionv3").
std::string_view token(BackboneId id);
std::string_view display_name(BackboneId id);
std::optional<BackboneId> parse_backbone(std::string_view token);

enum class HeadLayerKind { GlobalAvgPool, GlobalMaxPool, Flatten, BatchNorm, Dense, Dropout };

struct HeadLayer {
  HeadLayerKind kind;
  int units = 0;              // Dense
  std::string activation;     // Dense: "relu" or "sigmoid"
  double rate = 0.0;          // Dropout

  bool operator==(const HeadLayer&) const = default;
};

using HeadSpec = std::vector<HeadLayer>;

// "DENSE(512, relu)", "DROPOUT(0.5)", "GLOBAL_MAX_POOL", ...
std::string describe(const HeadLayer& layer);
std::string describe(const HeadSpec& head);

HeadSpec head_for(BackboneId id);

// Spatial reduction built into the base before the head (Keras `pooling=`).
enum class BasePooling { None, Average };

struct BackboneSpec {
  BackboneId id;
  HeadSpec head;
  std::int64_t expected_trainable_params;
  BasePooling base_pooling = BasePooling::None;
  int input_height = 224;
  int input_width = 224;
  int input_channels = 3;
};

BackboneSpec spec_for(BackboneId id);

struct BuildOptions {
  bool pretrained = false;
  // Weights container for the whole model or, when `base_only` is set, for the
  // backbone layers alone (the head then keeps its seeded initialization).
  std::filesystem::path weights_path;
  std::uint64_t seed = 0;
  bool trainable_base = true;
};

// A built network: graph plus the node ids callers need.
struct Model {
  BackboneSpec spec;
  nn::Graph graph;
  nn::NodeId base_output = -1;
  nn::NodeId feature_tap = -1;  // first head layer output (pooled features)
  int base_layers = 0;          // nodes [1, base_layers] belong to the backbone
};

// Builds the backbone with its fine-tuning head. The output node emits one
// logit per sample; predict_proba applies the sigmoid.
Model build_model(const BackboneSpec& spec, const BuildOptions& options);

// Backbone only (no head), for weight export and layer audits.
nn::Graph build_base(BackboneId id, BasePooling pooling, int height, int width);

std::int64_t trainable_param_count(Model& model);

// Per-layer accounting used by the `params` audit and the breakdown document.
struct LayerCount {
  std::string layer;
  std::string kind;
  std::string output_shape;
  std::int64_t trainable = 0;
  std::int64_t non_trainable = 0;
};
std::vector<LayerCount> layer_breakdown(Model& model);

// Probabilities for a batch of preprocessed NCHW images, in input order.
std::vector<double> predict_proba(Model& model, const nn::Tensor& batch);

// Runs the forward pass and returns the per-sample feature vectors at the tap.
nn::Tensor features_at_tap(Model& model, const nn::Tensor& batch);

void set_base_trainable(Model& model, bool trainable);

}  // namespace tlb::backbones
