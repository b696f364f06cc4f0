#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "common/error.hpp"
#include "nn/kernels.hpp"
#include "nn/layer.hpp"
#include "nn/rng.hpp"

namespace tlb::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same_shape(const std::string& who, std::span<const Shape> in) {
  for (const Shape& s : in.subspan(1))
    if (s.c != in[0].c || s.h != in[0].h || s.w != in[0].w)
      throw Error(Errc::ShapeMismatch, who + ": inputs " + to_string(in[0]) + " and " +
                                           to_string(s) + " differ");
}

}  // namespace

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::None: return "linear";
    case Activation::Relu: return "relu";
    case Activation::Relu6: return "relu6";
  }
  return "linear";
}

void Layer::recompute(Inputs, Tensor&) {
  throw Error(Errc::InvalidArgument, name() + " cannot recompute its output");
}

// ---------------------------------------------------------------------------
// BatchNorm

BatchNorm::BatchNorm(std::string name, int channels, BatchNormOptions opt)
    : Layer(std::move(name)),
      channels_(channels),
      opt_(opt),
      moving_mean_({1, channels, 1, 1}, 0.0f),
      moving_var_({1, channels, 1, 1}, 1.0f) {
  gamma_.name = "gamma";
  gamma_.value.reset({1, channels, 1, 1});
  gamma_.value.fill(1.0f);
  gamma_.init = Init::Ones;
  gamma_.trainable = opt.scale;
  beta_.name = "beta";
  beta_.value.reset({1, channels, 1, 1});
  beta_.init = Init::Zeros;
  beta_.trainable = opt.center;
}

std::vector<Param*> BatchNorm::params() {
  std::vector<Param*> p;
  if (opt_.scale) p.push_back(&gamma_);
  if (opt_.center) p.push_back(&beta_);
  return p;
}

std::vector<Buffer> BatchNorm::buffers() {
  return {{"moving_mean", &moving_mean_}, {"moving_variance", &moving_var_}};
}

void BatchNorm::normalize(const Tensor& x, Tensor& out, const float* mean,
                          const float* invstd) const {
  const Shape s = x.shape();
  out.reset_uninitialized(s);
  const std::size_t plane = s.plane();
  const float* g = gamma_.value.data();
  const float* b = beta_.value.data();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const float scale = (opt_.scale ? g[c] : 1.0f) * invstd[c];
      const float shift = (opt_.center ? b[c] : 0.0f) - mean[c] * scale;
      const float* src = x.sample(n) + c * plane;
      float* dst = out.sample(n) + c * plane;
      switch (opt_.act) {
        case Activation::None:
          for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
          break;
        case Activation::Relu:
          for (std::size_t i = 0; i < plane; ++i) dst[i] = std::max(src[i] * scale + shift, 0.0f);
          break;
        case Activation::Relu6:
          for (std::size_t i = 0; i < plane; ++i)
            dst[i] = std::clamp(src[i] * scale + shift, 0.0f, 6.0f);
          break;
      }
    }
  }
}

void BatchNorm::forward(Inputs in, Tensor& out, Mode mode) {
  const Tensor& x = *in[0];
  const Shape s = x.shape();
  if (s.c != channels_) throw Error(Errc::ShapeMismatch, name() + ": channel mismatch");

  if (mode == Mode::Infer) {
    std::vector<float> invstd(channels_);
    for (int c = 0; c < channels_; ++c)
      invstd[c] = 1.0f / std::sqrt(moving_var_[c] + opt_.epsilon);
    normalize(x, out, moving_mean_.data(), invstd.data());
    return;
  }

  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  saved_mean_.assign(channels_, 0.0f);
  saved_invstd_.assign(channels_, 0.0f);
  for (int c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* p = x.sample(n) + c * plane;
      float part = 0.0f;
#pragma omp simd reduction(+ : part)
      for (std::size_t i = 0; i < plane; ++i) part += p[i];
      sum += part;
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* p = x.sample(n) + c * plane;
      const auto m = static_cast<float>(mean);
      float part = 0.0f;
#pragma omp simd reduction(+ : part)
      for (std::size_t i = 0; i < plane; ++i) part += (p[i] - m) * (p[i] - m);
      sq += part;
    }
    const double var = sq / count;
    saved_mean_[c] = static_cast<float>(mean);
    saved_invstd_[c] = static_cast<float>(1.0 / std::sqrt(var + opt_.epsilon));
    moving_mean_[c] = opt_.momentum * moving_mean_[c] + (1.0f - opt_.momentum) * saved_mean_[c];
    moving_var_[c] =
        opt_.momentum * moving_var_[c] + (1.0f - opt_.momentum) * static_cast<float>(var);
  }
  normalize(x, out, saved_mean_.data(), saved_invstd_.data());
}

void BatchNorm::recompute(Inputs in, Tensor& out) {
  normalize(*in[0], out, saved_mean_.data(), saved_invstd_.data());
}

namespace {

// Per-channel batch-norm backward with the fused activation resolved at
// compile time so the inner loops vectorize.
template <Activation A>
void batch_norm_backward(const Tensor& x, const Tensor& dout, Tensor* dx, int c, float mean,
                         float invstd, float gc, float bc, double& sum_dy, double& sum_dy_xh,
                         float* dgrad_scale) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  if (dgrad_scale == nullptr) {
    for (int n = 0; n < s.n; ++n) {
      const float* xp = x.sample(n) + c * plane;
      const float* gp = dout.sample(n) + c * plane;
      float a = 0.0f;
      float b = 0.0f;
#pragma omp simd reduction(+ : a, b)
      for (std::size_t i = 0; i < plane; ++i) {
        const float xh = (xp[i] - mean) * invstd;
        const float dy = gp[i] * kernels::derivative(A, gc * xh + bc);
        a += dy;
        b += dy * xh;
      }
      sum_dy += a;
      sum_dy_xh += b;
    }
    return;
  }
  const float mdy = dgrad_scale[0];
  const float mdyxh = dgrad_scale[1];
  const float k = gc * invstd;
  for (int n = 0; n < s.n; ++n) {
    const float* xp = x.sample(n) + c * plane;
    const float* gp = dout.sample(n) + c * plane;
    float* dp = dx->sample(n) + c * plane;
#pragma omp simd
    for (std::size_t i = 0; i < plane; ++i) {
      const float xh = (xp[i] - mean) * invstd;
      const float dy = gp[i] * kernels::derivative(A, gc * xh + bc);
      dp[i] += k * (dy - mdy - xh * mdyxh);
    }
  }
}

}  // namespace

void BatchNorm::backward(Inputs in, const Tensor&, const Tensor& dout, InputGrads din) {
  const Tensor& x = *in[0];
  const Shape s = x.shape();
  const auto count = static_cast<double>(s.n) * static_cast<double>(s.plane());
  const float* g = gamma_.value.data();
  const float* b = beta_.value.data();
  if (opt_.scale && !gamma_.grad.allocated()) gamma_.grad.reset(gamma_.value.shape());
  if (opt_.center && !beta_.grad.allocated()) beta_.grad.reset(beta_.value.shape());
  Tensor* dx = din[0];

  auto run = [&](auto tag) {
    constexpr Activation A = decltype(tag)::value;
    for (int c = 0; c < channels_; ++c) {
      const float mean = saved_mean_[c];
      const float invstd = saved_invstd_[c];
      const float gc = opt_.scale ? g[c] : 1.0f;
      const float bc = opt_.center ? b[c] : 0.0f;
      double sum_dy = 0.0;
      double sum_dy_xh = 0.0;
      batch_norm_backward<A>(x, dout, dx, c, mean, invstd, gc, bc, sum_dy, sum_dy_xh, nullptr);
      if (opt_.scale && gamma_.trainable) gamma_.grad[c] += static_cast<float>(sum_dy_xh);
      if (opt_.center && beta_.trainable) beta_.grad[c] += static_cast<float>(sum_dy);
      if (dx == nullptr) continue;
      float scale[2] = {static_cast<float>(sum_dy / count), static_cast<float>(sum_dy_xh / count)};
      batch_norm_backward<A>(x, dout, dx, c, mean, invstd, gc, bc, sum_dy, sum_dy_xh, scale);
    }
  };
  switch (opt_.act) {
    case Activation::None: run(std::integral_constant<Activation, Activation::None>{}); break;
    case Activation::Relu: run(std::integral_constant<Activation, Activation::Relu>{}); break;
    case Activation::Relu6: run(std::integral_constant<Activation, Activation::Relu6>{}); break;
  }
}

// ---------------------------------------------------------------------------
// ActivationLayer

void ActivationLayer::forward(Inputs in, Tensor& out, Mode) {
  out = *in[0];
  kernels::bias_activation(out, nullptr, act_);
}

void ActivationLayer::backward(Inputs in, const Tensor&, const Tensor& dout, InputGrads din) {
  if (din[0] == nullptr) return;
  const float* x = in[0]->data();
  const float* g = dout.data();
  float* d = din[0]->data();
  for (std::size_t i = 0, n = dout.size(); i < n; ++i) d[i] += g[i] * kernels::derivative(act_, x[i]);
}

// ---------------------------------------------------------------------------
// Pool2D

Pool2D::Pool2D(std::string name, PoolKind kind, int k, int stride, PadMode pad)
    : Layer(std::move(name)), kind_(kind), k_(k), stride_(stride), pad_(pad) {}

Padding Pool2D::padding_for(const Shape& in) const {
  if (pad_ == PadMode::Same) return same_padding(in.h, in.w, k_, k_, stride_, stride_);
  return {};
}

Shape Pool2D::output_shape(std::span<const Shape> in) const {
  const Shape& s = in[0];
  const Padding p = padding_for(s);
  const int oh = conv_out_dim(s.h, k_, stride_, p.top, p.bottom);
  const int ow = conv_out_dim(s.w, k_, stride_, p.left, p.right);
  if (oh <= 0 || ow <= 0) throw Error(Errc::ShapeMismatch, name() + ": input too small");
  return {s.n, s.c, oh, ow};
}

void Pool2D::forward(Inputs in, Tensor& out, Mode) {
  const Tensor& x = *in[0];
  const Shape xs = x.shape();
  in_shape_ = xs;
  const Shape ys = output_shape(std::span(&xs, 1)).with_batch(xs.n);
  out.reset(ys);
  const Padding p = padding_for(xs);
  const bool is_max = kind_ == PoolKind::Max;
  if (is_max) argmax_.assign(out.size(), 0);

  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const float* src = x.sample(n) + c * xs.plane();
      float* dst = out.sample(n) + c * ys.plane();
      int* arg = is_max ? argmax_.data() + (static_cast<std::size_t>(n) * ys.c + c) * ys.plane()
                        : nullptr;
      for (int oy = 0; oy < ys.h; ++oy) {
        const int y0 = std::max(oy * stride_ - p.top, 0);
        const int y1 = std::min(oy * stride_ - p.top + k_, xs.h);
        for (int ox = 0; ox < ys.w; ++ox) {
          const int x0 = std::max(ox * stride_ - p.left, 0);
          const int x1 = std::min(ox * stride_ - p.left + k_, xs.w);
          const int o = oy * ys.w + ox;
          if (is_max) {
            float best = -std::numeric_limits<float>::infinity();
            int best_i = y0 * xs.w + x0;
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix) {
                const float v = src[iy * xs.w + ix];
                if (v > best) {
                  best = v;
                  best_i = iy * xs.w + ix;
                }
              }
            dst[o] = best;
            arg[o] = best_i;
          } else {
            float acc = 0.0f;
            for (int iy = y0; iy < y1; ++iy)
              for (int ix = x0; ix < x1; ++ix) acc += src[iy * xs.w + ix];
            dst[o] = acc / static_cast<float>((y1 - y0) * (x1 - x0));
          }
        }
      }
    }
  }
}

void Pool2D::backward(Inputs, const Tensor&, const Tensor& dout, InputGrads din) {
  Tensor* dx = din[0];
  if (dx == nullptr) return;
  const Shape xs = in_shape_;
  const Shape ys = dout.shape();
  const Padding p = padding_for(xs);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      float* d = dx->sample(n) + c * xs.plane();
      const float* g = dout.sample(n) + c * ys.plane();
      if (kind_ == PoolKind::Max) {
        const int* arg = argmax_.data() + (static_cast<std::size_t>(n) * ys.c + c) * ys.plane();
        for (std::size_t o = 0; o < ys.plane(); ++o) d[arg[o]] += g[o];
        continue;
      }
      for (int oy = 0; oy < ys.h; ++oy) {
        const int y0 = std::max(oy * stride_ - p.top, 0);
        const int y1 = std::min(oy * stride_ - p.top + k_, xs.h);
        for (int ox = 0; ox < ys.w; ++ox) {
          const int x0 = std::max(ox * stride_ - p.left, 0);
          const int x1 = std::min(ox * stride_ - p.left + k_, xs.w);
          const float share = g[oy * ys.w + ox] / static_cast<float>((y1 - y0) * (x1 - x0));
          for (int iy = y0; iy < y1; ++iy)
            for (int ix = x0; ix < x1; ++ix) d[iy * xs.w + ix] += share;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// GlobalPool

void GlobalPool::forward(Inputs in, Tensor& out, Mode) {
  const Tensor& x = *in[0];
  const Shape xs = x.shape();
  in_shape_ = xs;
  out.reset({xs.n, xs.c, 1, 1});
  const std::size_t plane = xs.plane();
  if (kind_ == PoolKind::Max) argmax_.assign(out.size(), 0);
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const float* p = x.sample(n) + c * plane;
      const std::size_t o = static_cast<std::size_t>(n) * xs.c + c;
      if (kind_ == PoolKind::Max) {
        const auto it = std::max_element(p, p + plane);
        out[o] = *it;
        argmax_[o] = static_cast<int>(it - p);
      } else {
        float acc = 0.0f;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        out[o] = acc / static_cast<float>(plane);
      }
    }
  }
}

void GlobalPool::backward(Inputs, const Tensor&, const Tensor& dout, InputGrads din) {
  Tensor* dx = din[0];
  if (dx == nullptr) return;
  const Shape xs = in_shape_;
  const std::size_t plane = xs.plane();
  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < xs.c; ++c) {
      const std::size_t o = static_cast<std::size_t>(n) * xs.c + c;
      float* d = dx->sample(n) + c * plane;
      if (kind_ == PoolKind::Max) {
        d[argmax_[o]] += dout[o];
      } else {
        const float share = dout[o] / static_cast<float>(plane);
        for (std::size_t i = 0; i < plane; ++i) d[i] += share;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ZeroPad2D

Shape ZeroPad2D::output_shape(std::span<const Shape> in) const {
  const Shape& s = in[0];
  return {s.n, s.c, s.h + pad_.top + pad_.bottom, s.w + pad_.left + pad_.right};
}

void ZeroPad2D::forward(Inputs in, Tensor& out, Mode) {
  const Tensor& x = *in[0];
  const Shape xs = x.shape();
  const Shape ys = output_shape(std::span(&xs, 1)).with_batch(xs.n);
  out.reset(ys);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h; ++y) {
        const float* src = x.sample(n) + (c * xs.h + y) * static_cast<std::size_t>(xs.w);
        float* dst = out.sample(n) + (c * ys.h + y + pad_.top) * static_cast<std::size_t>(ys.w) +
                     pad_.left;
        std::copy(src, src + xs.w, dst);
      }
}

void ZeroPad2D::backward(Inputs, const Tensor&, const Tensor& dout, InputGrads din) {
  Tensor* dx = din[0];
  if (dx == nullptr) return;
  const Shape xs = dx->shape();
  const Shape ys = dout.shape();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h; ++y) {
        float* d = dx->sample(n) + (c * xs.h + y) * static_cast<std::size_t>(xs.w);
        const float* g = dout.sample(n) + (c * ys.h + y + pad_.top) * static_cast<std::size_t>(ys.w) +
                         pad_.left;
        for (int x = 0; x < xs.w; ++x) d[x] += g[x];
      }
}

// ---------------------------------------------------------------------------
// Add

Shape Add::output_shape(std::span<const Shape> in) const {
  require_same_shape(name(), in);
  return in[0];
}

void Add::forward(Inputs in, Tensor& out, Mode) {
  out = *in[0];
  float* o = out.data();
  for (const Tensor* t : in.subspan(1)) {
    const float* p = t->data();
    for (std::size_t i = 0, n = out.size(); i < n; ++i) o[i] += p[i];
  }
  kernels::bias_activation(out, nullptr, act_);
}

void Add::backward(Inputs, const Tensor& out, const Tensor& dout, InputGrads din) {
  Tensor dz_holder;
  const Tensor* dz = &dout;
  if (act_ != Activation::None) {
    dz_holder = dout;
    kernels::activation_backward_from_output(out, dz_holder, act_);
    dz = &dz_holder;
  }
  const float* g = dz->data();
  for (Tensor* d : din) {
    if (d == nullptr) continue;
    float* p = d->data();
    for (std::size_t i = 0, n = d->size(); i < n; ++i) p[i] += g[i];
  }
}

// ---------------------------------------------------------------------------
// Concat

Shape Concat::output_shape(std::span<const Shape> in) const {
  Shape out = in[0];
  out.c = 0;
  for (const Shape& s : in) {
    if (s.h != in[0].h || s.w != in[0].w)
      throw Error(Errc::ShapeMismatch, name() + ": spatial sizes differ");
    out.c += s.c;
  }
  return out;
}

void Concat::forward(Inputs in, Tensor& out, Mode) {
  std::vector<Shape> shapes;
  for (const Tensor* t : in) shapes.push_back(t->shape());
  const Shape ys = output_shape(shapes).with_batch(shapes[0].n);
  out.reset_uninitialized(ys);
  for (int n = 0; n < ys.n; ++n) {
    float* dst = out.sample(n);
    for (const Tensor* t : in) {
      const std::size_t len = t->shape().per_sample();
      std::copy(t->sample(n), t->sample(n) + len, dst);
      dst += len;
    }
  }
}

void Concat::backward(Inputs in, const Tensor&, const Tensor& dout, InputGrads din) {
  // input shapes survive even when the graph has released their storage
  const Shape ys = dout.shape();
  for (int n = 0; n < ys.n; ++n) {
    const float* src = dout.sample(n);
    for (std::size_t k = 0; k < in.size(); ++k) {
      const std::size_t len = in[k]->shape().per_sample();
      if (Tensor* d = din[k]) {
        float* p = d->sample(n);
        for (std::size_t i = 0; i < len; ++i) p[i] += src[i];
      }
      src += len;
    }
  }
}

// ---------------------------------------------------------------------------
// Flatten

void Flatten::forward(Inputs in, Tensor& out, Mode) {
  const Tensor& x = *in[0];
  out.reset_uninitialized({x.shape().n, static_cast<int>(x.shape().per_sample()), 1, 1});
  std::copy(x.data(), x.data() + x.size(), out.data());
}

void Flatten::backward(Inputs, const Tensor&, const Tensor& dout, InputGrads din) {
  if (din[0] == nullptr) return;
  float* d = din[0]->data();
  const float* g = dout.data();
  for (std::size_t i = 0, n = dout.size(); i < n; ++i) d[i] += g[i];
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, int in_features, int units, Activation act)
    : Layer(std::move(name)), in_features_(in_features), units_(units), act_(act) {
  kernel_.name = "kernel";
  kernel_.value.reset({units, in_features, 1, 1});
  kernel_.init = Init::GlorotUniform;
  kernel_.fan_in = in_features;
  kernel_.fan_out = units;
  bias_.name = "bias";
  bias_.value.reset({1, units, 1, 1});
  bias_.init = Init::Zeros;
}

Shape Dense::output_shape(std::span<const Shape> in) const {
  if (static_cast<int>(in[0].per_sample()) != in_features_)
    throw Error(Errc::ShapeMismatch, name() + ": expected " + std::to_string(in_features_) +
                                         " features, got " + std::to_string(in[0].per_sample()));
  return {in[0].n, units_, 1, 1};
}

void Dense::forward(Inputs in, Tensor& out, Mode) {
  const Tensor& x = *in[0];
  const int n = x.shape().n;
  out.reset({n, units_, 1, 1});
  ConstMatMap xm(x.data(), n, in_features_);
  ConstMatMap wm(kernel_.value.data(), units_, in_features_);
  MatMap ym(out.data(), n, units_);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i)
    for (int u = 0; u < units_; ++u) ym(i, u) = kernels::apply(act_, ym(i, u) + bias_.value[u]);
}

void Dense::backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) {
  const Tensor& x = *in[0];
  const int n = x.shape().n;
  Tensor dz = dout;
  kernels::activation_backward_from_output(out, dz, act_);
  ConstMatMap dzm(dz.data(), n, units_);
  if (kernel_.trainable) {
    if (!kernel_.grad.allocated()) kernel_.grad.reset(kernel_.value.shape());
    MatMap(kernel_.grad.data(), units_, in_features_).noalias() +=
        dzm.transpose() * ConstMatMap(x.data(), n, in_features_);
  }
  if (bias_.trainable) {
    if (!bias_.grad.allocated()) bias_.grad.reset(bias_.value.shape());
    for (int i = 0; i < n; ++i)
      for (int u = 0; u < units_; ++u) bias_.grad[u] += dzm(i, u);
  }
  if (din[0] != nullptr)
    MatMap(din[0]->data(), n, in_features_).noalias() +=
        dzm * ConstMatMap(kernel_.value.data(), units_, in_features_);
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(std::string name, float rate, std::uint64_t seed)
    : Layer(std::move(name)), rate_(rate), seed_(seed) {
  if (!(rate > 0.0f && rate < 1.0f))
    throw Error(Errc::InvalidArgument, "dropout rate must lie in (0, 1)");
}

void Dropout::forward(Inputs in, Tensor& out, Mode mode) {
  out = *in[0];
  last_train_ = mode == Mode::Train;
  if (!last_train_) return;
  Rng rng(mix_seed(seed_, draws_++));
  mask_.resize(out.size());
  const float keep_scale = 1.0f / (1.0f - rate_);
  float* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask_[i] = rng.uniform() >= rate_ ? 1 : 0;
    o[i] = mask_[i] ? o[i] * keep_scale : 0.0f;
  }
}

void Dropout::recompute(Inputs in, Tensor& out) {
  out = *in[0];
  if (!last_train_) return;
  const float keep_scale = 1.0f / (1.0f - rate_);
  float* o = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) o[i] = mask_[i] ? o[i] * keep_scale : 0.0f;
}

void Dropout::backward(Inputs, const Tensor&, const Tensor& dout, InputGrads din) {
  if (din[0] == nullptr) return;
  const float keep_scale = 1.0f / (1.0f - rate_);
  float* d = din[0]->data();
  const float* g = dout.data();
  for (std::size_t i = 0; i < dout.size(); ++i)
    d[i] += last_train_ ? (mask_[i] ? g[i] * keep_scale : 0.0f) : g[i];
}

}  // namespace tlb::nn
