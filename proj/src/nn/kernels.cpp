#include "nn/kernels.hpp"

namespace tlb::nn::kernels {

void bias_activation(Tensor& out, const float* bias, Activation act) {
  if (bias == nullptr && act == Activation::None) return;
  const Shape s = out.shape();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    float* base = out.sample(n);
    for (int c = 0; c < s.c; ++c) {
      float* p = base + static_cast<std::size_t>(c) * plane;
      const float b = bias ? bias[c] : 0.0f;
      switch (act) {
        case Activation::None:
          for (std::size_t i = 0; i < plane; ++i) p[i] += b;
          break;
        case Activation::Relu:
          for (std::size_t i = 0; i < plane; ++i) {
            const float v = p[i] + b;
            p[i] = v > 0.0f ? v : 0.0f;
          }
          break;
        case Activation::Relu6:
          for (std::size_t i = 0; i < plane; ++i) {
            const float v = p[i] + b;
            p[i] = v > 0.0f ? (v < 6.0f ? v : 6.0f) : 0.0f;
          }
          break;
      }
    }
  }
}

void activation_backward_from_output(const Tensor& out, Tensor& grad, Activation act) {
  const std::size_t n = grad.size();
  const float* y = out.data();
  float* g = grad.data();
  switch (act) {
    case Activation::None:
      return;
    case Activation::Relu:
      for (std::size_t i = 0; i < n; ++i) g[i] = y[i] > 0.0f ? g[i] : 0.0f;
      return;
    case Activation::Relu6:
      for (std::size_t i = 0; i < n; ++i) g[i] = (y[i] > 0.0f && y[i] < 6.0f) ? g[i] : 0.0f;
      return;
  }
}

}  // namespace tlb::nn::kernels
