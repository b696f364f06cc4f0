#include <Eigen/Core>

#include <algorithm>
#include <vector>

#include "common/error.hpp"
#include "nn/kernels.hpp"
#include "nn/layer.hpp"

namespace tlb::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Upper bound on the im2col scratch (floats) before the batch is split into chunks.
constexpr std::size_t kColBudget = std::size_t{8} << 20;
constexpr std::size_t kMinBatchedCols = 512;

struct Geometry {
  int cin, h, w;
  int kh, kw, sh, sw;
  Padding pad;
  int oh, ow;

  std::size_t rows() const { return static_cast<std::size_t>(cin) * kh * kw; }
  std::size_t cols() const { return static_cast<std::size_t>(oh) * ow; }
  bool is_pointwise() const {
    return kh == 1 && kw == 1 && sh == 1 && sw == 1 && pad.top == 0 && pad.left == 0 &&
           pad.bottom == 0 && pad.right == 0;
  }
};

// Writes the patch matrix of one sample into `col` (rows() x cols(), leading dim `ld`).
void im2col(const Geometry& g, const float* img, float* col, std::size_t ld) {
  for (int c = 0; c < g.cin; ++c) {
    const float* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        float* row = col + ((static_cast<std::size_t>(c) * g.kh + ki) * g.kw + kj) * ld;
        // valid ox range: 0 <= ox*sw - left + kj < w
        const int off = kj - g.pad.left;
        int ox_lo = off >= 0 ? 0 : (-off + g.sw - 1) / g.sw;
        int ox_hi = g.w - 1 - off < 0 ? -1 : (g.w - 1 - off) / g.sw;
        ox_hi = std::min(ox_hi, g.ow - 1);
        for (int oy = 0; oy < g.oh; ++oy) {
          float* dst = row + static_cast<std::size_t>(oy) * g.ow;
          const int iy = oy * g.sh - g.pad.top + ki;
          if (iy < 0 || iy >= g.h || ox_lo > ox_hi) {
            std::fill(dst, dst + g.ow, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.w;
          std::fill(dst, dst + ox_lo, 0.0f);
          if (g.sw == 1) {
            std::copy(src + ox_lo + off, src + ox_hi + 1 + off, dst + ox_lo);
          } else {
            for (int ox = ox_lo; ox <= ox_hi; ++ox) dst[ox] = src[ox * g.sw + off];
          }
          std::fill(dst + ox_hi + 1, dst + g.ow, 0.0f);
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates the patch gradients back into the image gradient.
void col2im(const Geometry& g, const float* col, std::size_t ld, float* img) {
  for (int c = 0; c < g.cin; ++c) {
    float* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ki = 0; ki < g.kh; ++ki) {
      for (int kj = 0; kj < g.kw; ++kj) {
        const float* row = col + ((static_cast<std::size_t>(c) * g.kh + ki) * g.kw + kj) * ld;
        const int off = kj - g.pad.left;
        int ox_lo = off >= 0 ? 0 : (-off + g.sw - 1) / g.sw;
        int ox_hi = g.w - 1 - off < 0 ? -1 : (g.w - 1 - off) / g.sw;
        ox_hi = std::min(ox_hi, g.ow - 1);
        if (ox_lo > ox_hi) continue;
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.sh - g.pad.top + ki;
          if (iy < 0 || iy >= g.h) continue;
          const float* src = row + static_cast<std::size_t>(oy) * g.ow;
          float* dst = plane + static_cast<std::size_t>(iy) * g.w;
          if (g.sw == 1) {
            for (int ox = ox_lo; ox <= ox_hi; ++ox) dst[ox + off] += src[ox];
          } else {
            for (int ox = ox_lo; ox <= ox_hi; ++ox) dst[ox * g.sw + off] += src[ox];
          }
        }
      }
    }
  }
}

// Samples per GEMM. Large feature maps already give the GEMM a wide enough
// right-hand side, so they run one sample at a time without gather copies;
// small maps are batched to keep the product efficient.
int chunk_size(const Geometry& g, int n) {
  if (g.cols() >= kMinBatchedCols) return 1;
  const std::size_t per_sample = g.rows() * g.cols();
  if (per_sample == 0) return std::max(n, 1);
  const auto fit = static_cast<int>(std::max<std::size_t>(1, kColBudget / per_sample));
  return std::clamp(fit, 1, std::max(n, 1));
}

}  // namespace

Padding same_padding(int in_h, int in_w, int kh, int kw, int sh, int sw) {
  auto dim = [](int in, int k, int s) {
    const int out = (in + s - 1) / s;
    const int total = std::max((out - 1) * s + k - in, 0);
    return std::pair{total / 2, total - total / 2};
  };
  const auto [t, b] = dim(in_h, kh, sh);
  const auto [l, r] = dim(in_w, kw, sw);
  return {t, b, l, r};
}

int conv_out_dim(int in, int k, int stride, int pad_before, int pad_after) {
  return (in + pad_before + pad_after - k) / stride + 1;
}

// ---------------------------------------------------------------------------
// Conv2D

Conv2D::Conv2D(std::string name, int in_channels, ConvOptions opt)
    : Layer(std::move(name)), in_channels_(in_channels), opt_(opt) {
  kernel_.name = "kernel";
  kernel_.value.reset({opt.filters, in_channels, opt.kh, opt.kw});
  kernel_.init = Init::GlorotUniform;
  kernel_.fan_in = in_channels * opt.kh * opt.kw;
  kernel_.fan_out = opt.filters * opt.kh * opt.kw;
  if (opt.bias) {
    bias_.name = "bias";
    bias_.value.reset({1, opt.filters, 1, 1});
    bias_.init = Init::Zeros;
  }
}

std::vector<Param*> Conv2D::params() {
  if (opt_.bias) return {&kernel_, &bias_};
  return {&kernel_};
}

Padding Conv2D::padding_for(const Shape& in) const {
  if (opt_.pad == PadMode::Same)
    return same_padding(in.h, in.w, opt_.kh, opt_.kw, opt_.stride_h, opt_.stride_w);
  return {};
}

Shape Conv2D::output_shape(std::span<const Shape> in) const {
  const Shape& s = in[0];
  if (s.c != in_channels_)
    throw Error(Errc::ShapeMismatch, name() + ": expected " + std::to_string(in_channels_) +
                                         " input channels, got " + std::to_string(s.c));
  const Padding p = padding_for(s);
  const int oh = conv_out_dim(s.h, opt_.kh, opt_.stride_h, p.top, p.bottom);
  const int ow = conv_out_dim(s.w, opt_.kw, opt_.stride_w, p.left, p.right);
  if (oh <= 0 || ow <= 0) throw Error(Errc::ShapeMismatch, name() + ": input too small");
  return {s.n, opt_.filters, oh, ow};
}

void Conv2D::forward(Inputs in, Tensor& out, Mode) {
  const Tensor& x = *in[0];
  const Shape xs = x.shape();
  const Shape ys = output_shape(std::span(&xs, 1)).with_batch(xs.n);
  out.reset_uninitialized(ys);

  const Geometry g{xs.c, xs.h, xs.w, opt_.kh, opt_.kw, opt_.stride_h, opt_.stride_w,
                   padding_for(xs), ys.h, ys.w};
  const auto K = static_cast<Eigen::Index>(g.rows());
  const auto P = static_cast<Eigen::Index>(g.cols());
  const int F = opt_.filters;
  ConstMatMap weights(kernel_.value.data(), F, K);

  const int chunk = chunk_size(g, xs.n);
  std::vector<float> col;
  std::vector<float> result;
  for (int s0 = 0; s0 < xs.n; s0 += chunk) {
    const int sb = std::min(chunk, xs.n - s0);
    const Eigen::Index width = P * sb;
    if (sb == 1 && g.is_pointwise()) {
      ConstMatMap src(x.sample(s0), K, P);
      MatMap dst(out.sample(s0), F, P);
      dst.noalias() = weights * src;
      continue;
    }
    col.resize(static_cast<std::size_t>(K) * width);
    for (int b = 0; b < sb; ++b) {
      if (g.is_pointwise()) {
        ConstMatMap src(x.sample(s0 + b), K, P);
        StridedMap(col.data() + b * P, K, P, Eigen::OuterStride<>(width)) = src;
      } else {
        im2col(g, x.sample(s0 + b), col.data() + b * P, static_cast<std::size_t>(width));
      }
    }
    ConstMatMap cols(col.data(), K, width);
    if (sb == 1) {
      MatMap dst(out.sample(s0), F, P);
      dst.noalias() = weights * cols;
    } else {
      result.resize(static_cast<std::size_t>(F) * width);
      MatMap res(result.data(), F, width);
      res.noalias() = weights * cols;
      for (int b = 0; b < sb; ++b)
        MatMap(out.sample(s0 + b), F, P) =
            ConstStridedMap(result.data() + b * P, F, P, Eigen::OuterStride<>(width));
    }
  }

  const float* bias = opt_.bias ? bias_.value.data() : nullptr;
  kernels::bias_activation(out, bias, opt_.act);
}

void Conv2D::backward(Inputs in, const Tensor& out, const Tensor& dout, InputGrads din) {
  const Tensor& x = *in[0];
  const Shape xs = x.shape();
  const Shape ys = dout.shape();
  const Geometry g{xs.c, xs.h, xs.w, opt_.kh, opt_.kw, opt_.stride_h, opt_.stride_w,
                   padding_for(xs), ys.h, ys.w};
  const auto K = static_cast<Eigen::Index>(g.rows());
  const auto P = static_cast<Eigen::Index>(g.cols());
  const int F = opt_.filters;

  // Gradient w.r.t. the pre-activation.
  Tensor dz_holder;
  const Tensor* dz = &dout;
  if (opt_.act != Activation::None) {
    dz_holder = dout;
    kernels::activation_backward_from_output(out, dz_holder, opt_.act);
    dz = &dz_holder;
  }

  if (opt_.bias && bias_.trainable) {
    if (!bias_.grad.allocated()) bias_.grad.reset(bias_.value.shape());
    float* db = bias_.grad.data();
    for (int n = 0; n < ys.n; ++n) {
      const float* g0 = dz->sample(n);
      for (int f = 0; f < F; ++f) {
        const float* p = g0 + static_cast<std::size_t>(f) * P;
        float acc = 0.0f;
        for (Eigen::Index i = 0; i < P; ++i) acc += p[i];
        db[f] += acc;
      }
    }
  }

  const bool want_dw = kernel_.trainable;
  Tensor* dx = din[0];
  if (!want_dw && dx == nullptr) return;
  if (want_dw && !kernel_.grad.allocated()) kernel_.grad.reset(kernel_.value.shape());
  MatMap dweights(want_dw ? kernel_.grad.data() : nullptr, F, K);
  ConstMatMap weights(kernel_.value.data(), F, K);

  const int chunk = chunk_size(g, xs.n);
  std::vector<float> col;
  std::vector<float> dzcat;
  std::vector<float> dcol;
  for (int s0 = 0; s0 < xs.n; s0 += chunk) {
    const int sb = std::min(chunk, xs.n - s0);
    const Eigen::Index width = P * sb;
    const bool direct = sb == 1 && g.is_pointwise();

    // gather dz for the chunk as F x width
    const float* dz_ptr;
    if (sb == 1) {
      dz_ptr = dz->sample(s0);
    } else {
      dzcat.resize(static_cast<std::size_t>(F) * width);
      for (int b = 0; b < sb; ++b)
        StridedMap(dzcat.data() + b * P, F, P, Eigen::OuterStride<>(width)) =
            ConstMatMap(dz->sample(s0 + b), F, P);
      dz_ptr = dzcat.data();
    }
    ConstMatMap dzm(dz_ptr, F, width);

    if (want_dw) {
      if (direct) {
        dweights.noalias() += dzm * ConstMatMap(x.sample(s0), K, P).transpose();
      } else {
        col.resize(static_cast<std::size_t>(K) * width);
        for (int b = 0; b < sb; ++b) {
          if (g.is_pointwise())
            StridedMap(col.data() + b * P, K, P, Eigen::OuterStride<>(width)) =
                ConstMatMap(x.sample(s0 + b), K, P);
          else
            im2col(g, x.sample(s0 + b), col.data() + b * P, static_cast<std::size_t>(width));
        }
        dweights.noalias() += dzm * ConstMatMap(col.data(), K, width).transpose();
      }
    }

    if (dx != nullptr) {
      if (direct) {
        MatMap(dx->sample(s0), K, P).noalias() += weights.transpose() * dzm;
        continue;
      }
      dcol.resize(static_cast<std::size_t>(K) * width);
      MatMap dcols(dcol.data(), K, width);
      dcols.noalias() = weights.transpose() * dzm;
      for (int b = 0; b < sb; ++b) {
        if (g.is_pointwise())
          MatMap(dx->sample(s0 + b), K, P) +=
              ConstStridedMap(dcol.data() + b * P, K, P, Eigen::OuterStride<>(width));
        else
          col2im(g, dcol.data() + b * P, static_cast<std::size_t>(width), dx->sample(s0 + b));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// DepthwiseConv2D

DepthwiseConv2D::DepthwiseConv2D(std::string name, int channels, int k, int stride, PadMode pad,
                                 Activation act)
    : Layer(std::move(name)), channels_(channels), k_(k), stride_(stride), pad_(pad), act_(act) {
  kernel_.name = "depthwise_kernel";
  kernel_.value.reset({channels, 1, k, k});
  kernel_.init = Init::GlorotUniform;
  kernel_.fan_in = channels * k * k;
  kernel_.fan_out = k * k;
}

Padding DepthwiseConv2D::padding_for(const Shape& in) const {
  if (pad_ == PadMode::Same) return same_padding(in.h, in.w, k_, k_, stride_, stride_);
  return {};
}

Shape DepthwiseConv2D::output_shape(std::span<const Shape> in) const {
  const Shape& s = in[0];
  if (s.c != channels_) throw Error(Errc::ShapeMismatch, name() + ": channel mismatch");
  const Padding p = padding_for(s);
  const int oh = conv_out_dim(s.h, k_, stride_, p.top, p.bottom);
  const int ow = conv_out_dim(s.w, k_, stride_, p.left, p.right);
  if (oh <= 0 || ow <= 0) throw Error(Errc::ShapeMismatch, name() + ": input too small");
  return {s.n, channels_, oh, ow};
}

void DepthwiseConv2D::forward(Inputs in, Tensor& out, Mode) {
  const Tensor& x = *in[0];
  const Shape xs = x.shape();
  const Shape ys = output_shape(std::span(&xs, 1)).with_batch(xs.n);
  out.reset(ys);
  const Padding p = padding_for(xs);
  const int s = stride_;

  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < channels_; ++c) {
      const float* src = x.sample(n) + static_cast<std::size_t>(c) * xs.plane();
      float* dst = out.sample(n) + static_cast<std::size_t>(c) * ys.plane();
      const float* kern = kernel_.value.data() + static_cast<std::size_t>(c) * k_ * k_;
      for (int ki = 0; ki < k_; ++ki) {
        for (int kj = 0; kj < k_; ++kj) {
          const float wv = kern[ki * k_ + kj];
          const int off = kj - p.left;
          const int ox_lo = off >= 0 ? 0 : (-off + s - 1) / s;
          const int ox_hi = std::min(xs.w - 1 - off < 0 ? -1 : (xs.w - 1 - off) / s, ys.w - 1);
          if (ox_lo > ox_hi) continue;
          for (int oy = 0; oy < ys.h; ++oy) {
            const int iy = oy * s - p.top + ki;
            if (iy < 0 || iy >= xs.h) continue;
            const float* row = src + static_cast<std::size_t>(iy) * xs.w;
            float* o = dst + static_cast<std::size_t>(oy) * ys.w;
            if (s == 1) {
              for (int ox = ox_lo; ox <= ox_hi; ++ox) o[ox] += wv * row[ox + off];
            } else {
              for (int ox = ox_lo; ox <= ox_hi; ++ox) o[ox] += wv * row[ox * s + off];
            }
          }
        }
      }
    }
  }
  kernels::bias_activation(out, nullptr, act_);
}

void DepthwiseConv2D::backward(Inputs in, const Tensor& out, const Tensor& dout,
                               InputGrads din) {
  const Tensor& x = *in[0];
  const Shape xs = x.shape();
  const Shape ys = dout.shape();
  const Padding p = padding_for(xs);
  const int s = stride_;

  Tensor dz_holder;
  const Tensor* dz = &dout;
  if (act_ != Activation::None) {
    dz_holder = dout;
    kernels::activation_backward_from_output(out, dz_holder, act_);
    dz = &dz_holder;
  }
  const bool want_dw = kernel_.trainable;
  if (want_dw && !kernel_.grad.allocated()) kernel_.grad.reset(kernel_.value.shape());
  Tensor* dx = din[0];

  for (int n = 0; n < xs.n; ++n) {
    for (int c = 0; c < channels_; ++c) {
      const float* src = x.sample(n) + static_cast<std::size_t>(c) * xs.plane();
      const float* g = dz->sample(n) + static_cast<std::size_t>(c) * ys.plane();
      float* dsrc = dx ? dx->sample(n) + static_cast<std::size_t>(c) * xs.plane() : nullptr;
      const float* kern = kernel_.value.data() + static_cast<std::size_t>(c) * k_ * k_;
      float* dkern = want_dw ? kernel_.grad.data() + static_cast<std::size_t>(c) * k_ * k_ : nullptr;
      for (int ki = 0; ki < k_; ++ki) {
        for (int kj = 0; kj < k_; ++kj) {
          const float wv = kern[ki * k_ + kj];
          const int off = kj - p.left;
          const int ox_lo = off >= 0 ? 0 : (-off + s - 1) / s;
          const int ox_hi = std::min(xs.w - 1 - off < 0 ? -1 : (xs.w - 1 - off) / s, ys.w - 1);
          if (ox_lo > ox_hi) continue;
          float acc = 0.0f;
          for (int oy = 0; oy < ys.h; ++oy) {
            const int iy = oy * s - p.top + ki;
            if (iy < 0 || iy >= xs.h) continue;
            const float* row = src + static_cast<std::size_t>(iy) * xs.w;
            const float* go = g + static_cast<std::size_t>(oy) * ys.w;
            float* drow = dsrc ? dsrc + static_cast<std::size_t>(iy) * xs.w : nullptr;
            if (s == 1) {
              for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += go[ox] * row[ox + off];
              if (drow)
                for (int ox = ox_lo; ox <= ox_hi; ++ox) drow[ox + off] += wv * go[ox];
            } else {
              for (int ox = ox_lo; ox <= ox_hi; ++ox) acc += go[ox] * row[ox * s + off];
              if (drow)
                for (int ox = ox_lo; ox <= ox_hi; ++ox) drow[ox * s + off] += wv * go[ox];
            }
          }
          if (dkern) dkern[ki * k_ + kj] += acc;
        }
      }
    }
  }
}

}  // namespace tlb::nn
