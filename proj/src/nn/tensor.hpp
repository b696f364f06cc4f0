#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tlb::nn {

// NCHW shape. Dense activations use (n, features, 1, 1).
struct Shape {
  int n = 0;
  int c = 0;
  int h = 1;
  int w = 1;

  std::size_t numel() const { return static_cast<std::size_t>(n) * per_sample(); }
  std::size_t per_sample() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  Shape with_batch(int batch) const { return {batch, c, h, w}; }

  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

// Leaves new elements uninitialized so buffers that are about to be fully
// overwritten skip a zero-fill pass.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool allocated() const { return !data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float* sample(int i) { return data_.data() + static_cast<std::size_t>(i) * shape_.per_sample(); }
  const float* sample(int i) const {
    return data_.data() + static_cast<std::size_t>(i) * shape_.per_sample();
  }

  // Reallocates to `shape`, zero-filled.
  void reset(Shape shape);
  // Reallocates to `shape` with unspecified contents.
  void reset_uninitialized(Shape shape);
  void fill(float v);
  // Frees storage but keeps the shape so the buffer can be rebuilt later.
  void release();

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

 private:
  Shape shape_;
  std::vector<float, DefaultInitAllocator<float>> data_;
};

}  // namespace tlb::nn
