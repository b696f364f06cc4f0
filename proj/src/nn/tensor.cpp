#include "nn/tensor.hpp"

#include <algorithm>

namespace tlb::nn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + ", " + std::to_string(s.c) + ", " + std::to_string(s.h) +
         ", " + std::to_string(s.w) + ")";
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape), data_(shape.numel(), fill) {}

void Tensor::reset(Shape shape) {
  shape_ = shape;
  data_.assign(shape.numel(), 0.0f);
}

void Tensor::reset_uninitialized(Shape shape) {
  shape_ = shape;
  data_.resize(shape.numel());
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::release() { decltype(data_)().swap(data_); }

}  // namespace tlb::nn
