#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nn/tensor.hpp"

namespace tlb::nn {

enum class Mode { Train, Infer };

enum class Activation { None, Relu, Relu6 };

std::string_view activation_name(Activation a);

enum class Init { GlorotUniform, Zeros, Ones };

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  Init init = Init::Zeros;
  int fan_in = 0;
  int fan_out = 0;
};

struct Buffer {
  std::string name;
  Tensor* tensor;
};

using Inputs = std::span<const Tensor* const>;
using InputGrads = std::span<Tensor* const>;

// A node operation in a Graph. Input and output shapes carry the batch in `n`.
//
// backward() accumulates into the entries of `din`; a null entry means that
// input needs no gradient.
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual std::string_view kind() const = 0;

  // Per-sample output shape (n ignored) for the given per-sample input shapes.
  virtual Shape output_shape(std::span<const Shape> in) const = 0;

  virtual void forward(Inputs in, Tensor& out, Mode mode) = 0;
  virtual void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) = 0;

  virtual bool needs_inputs_for_backward() const { return true; }
  virtual bool needs_output_for_backward() const { return false; }

  // Recomputable layers let the graph drop their output after the forward pass
  // and rebuild it (from inputs plus saved state) when backward needs it.
  virtual bool recomputable() const { return false; }
  virtual void recompute(Inputs in, Tensor& out);

  virtual std::vector<Param*> params() { return {}; }
  virtual std::vector<Buffer> buffers() { return {}; }

 private:
  std::string name_;
};

// ---------------------------------------------------------------------------

struct Padding {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;
};

enum class PadMode { Valid, Same };

// TF-style "same" padding (extra pixel goes to the bottom/right).
Padding same_padding(int in_h, int in_w, int kh, int kw, int sh, int sw);
int conv_out_dim(int in, int k, int stride, int pad_before, int pad_after);

struct ConvOptions {
  int filters = 0;
  int kh = 1;
  int kw = 1;
  int stride_h = 1;
  int stride_w = 1;
  PadMode pad = PadMode::Valid;
  bool bias = true;
  Activation act = Activation::None;
};

class Conv2D final : public Layer {
 public:
  Conv2D(std::string name, int in_channels, ConvOptions opt);

  std::string_view kind() const override { return "Conv2D"; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_output_for_backward() const override { return opt_.act != Activation::None; }
  std::vector<Param*> params() override;

  const ConvOptions& options() const { return opt_; }
  int in_channels() const { return in_channels_; }

 private:
  Padding padding_for(const Shape& in) const;

  int in_channels_;
  ConvOptions opt_;
  Param kernel_;  // [filters][in_channels][kh][kw]
  Param bias_;
};

// Depth multiplier 1.
class DepthwiseConv2D final : public Layer {
 public:
  DepthwiseConv2D(std::string name, int channels, int k, int stride, PadMode pad,
                  Activation act = Activation::None);

  std::string_view kind() const override { return "DepthwiseConv2D"; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_output_for_backward() const override { return act_ != Activation::None; }
  std::vector<Param*> params() override { return {&kernel_}; }

 private:
  Padding padding_for(const Shape& in) const;

  int channels_;
  int k_;
  int stride_;
  PadMode pad_;
  Activation act_;
  Param kernel_;  // [channels][k][k]
};

struct BatchNormOptions {
  float epsilon = 1e-3f;
  float momentum = 0.99f;
  bool scale = true;
  bool center = true;
  Activation act = Activation::None;
};

class BatchNorm final : public Layer {
 public:
  BatchNorm(std::string name, int channels, BatchNormOptions opt = {});

  std::string_view kind() const override { return "BatchNormalization"; }
  Shape output_shape(std::span<const Shape> in) const override { return in[0]; }
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool recomputable() const override { return true; }
  void recompute(Inputs in, Tensor& out) override;
  std::vector<Param*> params() override;
  std::vector<Buffer> buffers() override;

  const BatchNormOptions& options() const { return opt_; }

 private:
  void normalize(const Tensor& x, Tensor& out, const float* mean, const float* invstd) const;

  int channels_;
  BatchNormOptions opt_;
  Param gamma_;
  Param beta_;
  Tensor moving_mean_;
  Tensor moving_var_;
  // batch statistics of the last training forward
  std::vector<float> saved_mean_;
  std::vector<float> saved_invstd_;
};

class ActivationLayer final : public Layer {
 public:
  ActivationLayer(std::string name, Activation act) : Layer(std::move(name)), act_(act) {}

  std::string_view kind() const override { return "Activation"; }
  Shape output_shape(std::span<const Shape> in) const override { return in[0]; }
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool recomputable() const override { return true; }
  void recompute(Inputs in, Tensor& out) override { forward(in, out, Mode::Infer); }

 private:
  Activation act_;
};

enum class PoolKind { Max, Average };

class Pool2D final : public Layer {
 public:
  Pool2D(std::string name, PoolKind kind, int k, int stride, PadMode pad);

  std::string_view kind() const override {
    return kind_ == PoolKind::Max ? "MaxPooling2D" : "AveragePooling2D";
  }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_inputs_for_backward() const override { return false; }

 private:
  Padding padding_for(const Shape& in) const;

  PoolKind kind_;
  int k_;
  int stride_;
  PadMode pad_;
  Shape in_shape_;
  std::vector<int> argmax_;  // flat input offset per output element (max pooling)
};

class GlobalPool final : public Layer {
 public:
  GlobalPool(std::string name, PoolKind kind) : Layer(std::move(name)), kind_(kind) {}

  std::string_view kind() const override {
    return kind_ == PoolKind::Max ? "GlobalMaxPooling2D" : "GlobalAveragePooling2D";
  }
  Shape output_shape(std::span<const Shape> in) const override { return {1, in[0].c, 1, 1}; }
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_inputs_for_backward() const override { return false; }

 private:
  PoolKind kind_;
  Shape in_shape_;
  std::vector<int> argmax_;
};

class ZeroPad2D final : public Layer {
 public:
  ZeroPad2D(std::string name, Padding pad) : Layer(std::move(name)), pad_(pad) {}

  std::string_view kind() const override { return "ZeroPadding2D"; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_inputs_for_backward() const override { return false; }
  bool recomputable() const override { return true; }
  void recompute(Inputs in, Tensor& out) override { forward(in, out, Mode::Infer); }

 private:
  Padding pad_;
};

// Sum of inputs with an optional fused activation.
class Add final : public Layer {
 public:
  Add(std::string name, Activation act = Activation::None) : Layer(std::move(name)), act_(act) {}

  std::string_view kind() const override { return "Add"; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_inputs_for_backward() const override { return false; }
  bool needs_output_for_backward() const override { return act_ != Activation::None; }

 private:
  Activation act_;
};

// Channel concatenation.
class Concat final : public Layer {
 public:
  explicit Concat(std::string name) : Layer(std::move(name)) {}

  std::string_view kind() const override { return "Concatenate"; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_inputs_for_backward() const override { return false; }
  bool recomputable() const override { return true; }
  void recompute(Inputs in, Tensor& out) override { forward(in, out, Mode::Infer); }
};

class Flatten final : public Layer {
 public:
  explicit Flatten(std::string name) : Layer(std::move(name)) {}

  std::string_view kind() const override { return "Flatten"; }
  Shape output_shape(std::span<const Shape> in) const override {
    return {1, static_cast<int>(in[0].per_sample()), 1, 1};
  }
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_inputs_for_backward() const override { return false; }
  bool recomputable() const override { return true; }
  void recompute(Inputs in, Tensor& out) override { forward(in, out, Mode::Infer); }
};

class Dense final : public Layer {
 public:
  Dense(std::string name, int in_features, int units, Activation act = Activation::None);

  std::string_view kind() const override { return "Dense"; }
  Shape output_shape(std::span<const Shape> in) const override;
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_output_for_backward() const override { return act_ != Activation::None; }
  std::vector<Param*> params() override { return {&kernel_, &bias_}; }

  int units() const { return units_; }
  int in_features() const { return in_features_; }

 private:
  int in_features_;
  int units_;
  Activation act_;
  Param kernel_;  // [units][in_features]
  Param bias_;
};

// Inverted dropout; the training-mode mask is kept for backward and recompute.
class Dropout final : public Layer {
 public:
  Dropout(std::string name, float rate, std::uint64_t seed);

  std::string_view kind() const override { return "Dropout"; }
  Shape output_shape(std::span<const Shape> in) const override { return in[0]; }
  void forward(Inputs in, Tensor& out, Mode mode) override;
  void backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) override;
  bool needs_inputs_for_backward() const override { return false; }
  bool recomputable() const override { return true; }
  void recompute(Inputs in, Tensor& out) override;

  float rate() const { return rate_; }

 private:
  float rate_;
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  bool last_train_ = false;
  std::vector<std::uint8_t> mask_;
};

}  // namespace tlb::nn
