#pragma once

#include "nn/layer.hpp"
#include "nn/tensor.hpp"

namespace tlb::nn::kernels {

// out[n, c, :] = act(out[n, c, :] + bias[c]); bias may be null.
void bias_activation(Tensor& out, const float* bias, Activation act);

// grad *= act'(pre) where the derivative is read off the activation output.
void activation_backward_from_output(const Tensor& out, Tensor& grad, Activation act);

inline float apply(Activation act, float v) {
  switch (act) {
    case Activation::None: return v;
    case Activation::Relu: return v > 0.0f ? v : 0.0f;
    case Activation::Relu6: return v > 0.0f ? (v < 6.0f ? v : 6.0f) : 0.0f;
  }
  return v;
}

// Derivative evaluated at a pre-activation value.
inline float derivative(Activation act, float pre) {
  switch (act) {
    case Activation::None: return 1.0f;
    case Activation::Relu: return pre > 0.0f ? 1.0f : 0.0f;
    case Activation::Relu6: return (pre > 0.0f && pre < 6.0f) ? 1.0f : 0.0f;
  }
  return 1.0f;
}

}  // namespace tlb::nn::kernels
