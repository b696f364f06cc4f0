#include "nn/optimizer.hpp"

namespace tlb::nn {

void Sgd::step(const std::vector<Param*>& params) {
  if (momentum_ != 0.0f && velocity_.size() != params.size()) {
    velocity_.clear();
    for (const Param* p : params) velocity_.emplace_back(p->value.shape());
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    if (!p.trainable || !p.grad.allocated()) continue;
    float* w = p.value.data();
    const float* g = p.grad.data();
    const std::size_t n = p.value.size();
    if (momentum_ == 0.0f) {
      for (std::size_t i = 0; i < n; ++i) w[i] -= lr_ * g[i];
    } else {
      float* v = velocity_[k].data();
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = momentum_ * v[i] - lr_ * g[i];
        w[i] += v[i];
      }
    }
  }
}

void Sgd::zero_grad(const std::vector<Param*>& params) {
  for (Param* p : params)
    if (p->grad.allocated()) p->grad.fill(0.0f);
}

}  // namespace tlb::nn
