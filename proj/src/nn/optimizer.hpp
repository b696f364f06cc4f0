#pragma once

#include <vector>

#include "nn/layer.hpp"

namespace tlb::nn {

// Plain SGD with optional classical momentum (Keras update rule):
//   v <- momentum * v - lr * g;  w <- w + v
class Sgd {
 public:
  Sgd(float learning_rate, float momentum) : lr_(learning_rate), momentum_(momentum) {}

  void step(const std::vector<Param*>& params);
  static void zero_grad(const std::vector<Param*>& params);

  float learning_rate() const { return lr_; }
  float momentum() const { return momentum_; }

 private:
  float lr_;
  float momentum_;
  std::vector<Tensor> velocity_;
};

}  // namespace tlb::nn
