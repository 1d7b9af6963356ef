#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "hgpose/tensor.hpp"

namespace hgpose {

enum class ParamKind { Weight, Bias, NormScale, NormShift, RunningMean, RunningVar };

/// Running statistics live next to the learned values so that checkpoints
/// and pretrained imports carry them, but they receive no gradient.
inline bool is_trainable(ParamKind k) { return k != ParamKind::RunningMean && k != ParamKind::RunningVar; }

/// Classical L2 decay touches convolution and fully connected weights only.
inline bool is_decayed(ParamKind k) { return k == ParamKind::Weight; }

/// Layer family used to group parameters in gradient checks and reports.
enum class LayerType { Conv, UpConv, BatchNorm, FullyConnected };

inline const char* to_string(LayerType t) {
  switch (t) {
    case LayerType::Conv: return "conv";
    case LayerType::UpConv: return "upconv";
    case LayerType::BatchNorm: return "batchnorm";
    case LayerType::FullyConnected: return "fc";
  }
  return "?";
}

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily; empty until the first backward pass
  ParamKind kind = ParamKind::Weight;
  LayerType layer = LayerType::Conv;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;

  Parameter() = default;
  Parameter(Shape shape, ParamKind k, LayerType l, std::size_t fi = 0, std::size_t fo = 0)
      : value(std::move(shape)), kind(k), layer(l), fan_in(fi), fan_out(fo) {}

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(T(0));
  }
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline void hash_combine(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}

inline std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) fail(ErrorCode::ShapeMismatch, "input smaller than kernel");
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t pad,
         bool with_bias, LayerType type = LayerType::Conv)
      : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(pad),
        weight_({out_ch, in_ch, kernel, kernel}, ParamKind::Weight, type, in_ch * kernel * kernel,
                out_ch * kernel * kernel) {
    if (with_bias) bias_ = Parameter<T>({out_ch}, ParamKind::Bias, type);
  }

  std::size_t out_channels() const { return out_ch_; }

  Shape output_shape(const Shape& in) const {
    check_input(in);
    return {in[0], out_ch_, conv_out_size(in[2], kernel_, stride_, pad_), conv_out_size(in[3], kernel_, stride_, pad_)};
  }

  Tensor<T> forward_eval(const Tensor<T>& x) const {
    const Shape os = output_shape(x.shape());
    Tensor<T> y(os);
    const std::size_t hw_out = os[2] * os[3];
    const std::size_t k_rows = in_ch_ * kernel_ * kernel_;
    AlignedVector<T> col(k_rows * hw_out);
    ConstMatrixMap<T> w(weight_.value.data(), out_ch_, k_rows);
    for (std::size_t n = 0; n < x.dim(0); ++n) {
      im2col(x, n, os[2], os[3], col.data());
      MatrixMap<T> out(y.data() + n * out_ch_ * hw_out, out_ch_, hw_out);
      out.noalias() = w * ConstMatrixMap<T>(col.data(), k_rows, hw_out);
      if (has_bias())
        for (std::size_t c = 0; c < out_ch_; ++c) out.row(c).array() += bias_.value[c];
    }
    return y;
  }

  Tensor<T> forward_train(const Tensor<T>& x) {
    input_ = x;
    return forward_eval(x);
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const Shape& is = input_.shape();
    const std::size_t ho = gy.dim(2), wo = gy.dim(3), hw_out = ho * wo;
    const std::size_t k_rows = in_ch_ * kernel_ * kernel_;
    Tensor<T> gx(is);
    AlignedVector<T> col(k_rows * hw_out);
    MatrixMap<T> gw(weight_.ensure_grad().data(), out_ch_, k_rows);
    ConstMatrixMap<T> w(weight_.value.data(), out_ch_, k_rows);
    if (has_bias()) bias_.ensure_grad();
    for (std::size_t n = 0; n < is[0]; ++n) {
      ConstMatrixMap<T> g(gy.data() + n * out_ch_ * hw_out, out_ch_, hw_out);
      im2col(input_, n, ho, wo, col.data());
      gw.noalias() += g * ConstMatrixMap<T>(col.data(), k_rows, hw_out).transpose();
      if (has_bias())
        for (std::size_t c = 0; c < out_ch_; ++c) bias_.grad[c] += g.row(c).sum();
      MatrixMap<T>(col.data(), k_rows, hw_out).noalias() = w.transpose() * g;
      col2im(col.data(), n, ho, wo, gx);
    }
    return gx;
  }

  bool has_bias() const { return !bias_.value.empty(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight_);
    if (has_bias()) f(prefix + ".bias", bias_);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".weight", weight_);
    if (has_bias()) f(prefix + ".bias", bias_);
  }

 private:
  void check_input(const Shape& in) const {
    if (in.size() != 4 || in[1] != in_ch_)
      fail(ErrorCode::ShapeMismatch, "conv expects [N," + std::to_string(in_ch_) + ",H,W], got " + shape_string(in));
  }

  void im2col(const Tensor<T>& x, std::size_t n, std::size_t ho, std::size_t wo, T* col) const {
    const std::size_t h = x.dim(2), w = x.dim(3);
    const T* src = x.data() + n * in_ch_ * h * w;
    for (std::size_t c = 0; c < in_ch_; ++c)
      for (std::size_t kh = 0; kh < kernel_; ++kh)
        for (std::size_t kw = 0; kw < kernel_; ++kw) {
          T* row = col + ((c * kernel_ + kh) * kernel_ + kw) * ho * wo;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride_ + kh) - static_cast<std::ptrdiff_t>(pad_);
            T* dst = row + oh * wo;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T* line = src + (c * h + static_cast<std::size_t>(ih)) * w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride_ + kw) - static_cast<std::ptrdiff_t>(pad_);
              dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) ? T(0) : line[iw];
            }
          }
        }
  }

  void col2im(const T* col, std::size_t n, std::size_t ho, std::size_t wo, Tensor<T>& gx) const {
    const std::size_t h = gx.dim(2), w = gx.dim(3);
    T* dst = gx.data() + n * in_ch_ * h * w;
    for (std::size_t c = 0; c < in_ch_; ++c)
      for (std::size_t kh = 0; kh < kernel_; ++kh)
        for (std::size_t kw = 0; kw < kernel_; ++kw) {
          const T* row = col + ((c * kernel_ + kh) * kernel_ + kw) * ho * wo;
          for (std::size_t oh = 0; oh < ho; ++oh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride_ + kh) - static_cast<std::ptrdiff_t>(pad_);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            T* line = dst + (c * h + static_cast<std::size_t>(ih)) * w;
            for (std::size_t ow = 0; ow < wo; ++ow) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride_ + kw) - static_cast<std::ptrdiff_t>(pad_);
              if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(w)) line[iw] += row[oh * wo + ow];
            }
          }
        }
  }

  std::size_t in_ch_ = 0, out_ch_ = 0, kernel_ = 1, stride_ = 1, pad_ = 0;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------

/// Batch normalization over [N, C, H, W] (per channel across N, H, W) or
/// [N, C] (per feature across N).
template <typename T>
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : channels_(channels),
        scale_({channels}, ParamKind::NormScale, LayerType::BatchNorm),
        shift_({channels}, ParamKind::NormShift, LayerType::BatchNorm),
        running_mean_({channels}, ParamKind::RunningMean, LayerType::BatchNorm),
        running_var_({channels}, ParamKind::RunningVar, LayerType::BatchNorm) {
    scale_.value.fill(T(1));
    running_var_.value.fill(T(1));
  }

  Tensor<T> forward_eval(const Tensor<T>& x) const {
    const auto [n, spatial] = layout(x.shape());
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      const T inv = T(1) / std::sqrt(running_var_.value[c] + T(kEps));
      const T a = scale_.value[c] * inv;
      const T b = shift_.value[c] - running_mean_.value[c] * a;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * channels_ + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) y[base + s] = x[base + s] * a + b;
      }
    }
    return y;
  }

  /// Frozen layers normalize with the running statistics in training passes
  /// too and leave them untouched; backward then treats them as constants.
  void set_frozen(bool frozen) { frozen_ = frozen; }
  bool frozen() const { return frozen_; }

  Tensor<T> forward_train(const Tensor<T>& x) {
    const auto [n, spatial] = layout(x.shape());
    const std::size_t m = n * spatial;
    normalized_ = Tensor<T>(x.shape());
    inv_std_.assign(channels_, T(0));
    Tensor<T> y(x.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      if (frozen_) {
        const T inv = T(1) / std::sqrt(running_var_.value[c] + T(kEps));
        const T a = scale_.value[c] * inv;
        const T b = shift_.value[c] - running_mean_.value[c] * a;
        inv_std_[c] = inv;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t base = (i * channels_ + c) * spatial;
          for (std::size_t s = 0; s < spatial; ++s) {
            normalized_[base + s] = (x[base + s] - running_mean_.value[c]) * inv;
            y[base + s] = x[base + s] * a + b;
          }
        }
        continue;
      }
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * channels_ + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) sum += x[base + s];
      }
      const double mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * channels_ + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const double d = x[base + s] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
      inv_std_[c] = inv;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * channels_ + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const T xh = (x[base + s] - static_cast<T>(mean)) * inv;
          normalized_[base + s] = xh;
          y[base + s] = scale_.value[c] * xh + shift_.value[c];
        }
      }
      const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      running_mean_.value[c] = static_cast<T>((1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
      running_var_.value[c] = static_cast<T>((1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    const auto [n, spatial] = layout(gy.shape());
    const double m = static_cast<double>(n * spatial);
    Tensor<T> gx(gy.shape());
    auto& gs = scale_.ensure_grad();
    auto& gb = shift_.ensure_grad();
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * channels_ + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          sum_g += gy[base + s];
          sum_gx += static_cast<double>(gy[base + s]) * normalized_[base + s];
        }
      }
      gs[c] += static_cast<T>(sum_gx);
      gb[c] += static_cast<T>(sum_g);
      if (frozen_) {
        const T k = scale_.value[c] * inv_std_[c];
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t base = (i * channels_ + c) * spatial;
          for (std::size_t s = 0; s < spatial; ++s) gx[base + s] = k * gy[base + s];
        }
        continue;
      }
      const double k = static_cast<double>(scale_.value[c]) * inv_std_[c] / m;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = (i * channels_ + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s)
          gx[base + s] = static_cast<T>(k * (m * gy[base + s] - sum_g - normalized_[base + s] * sum_gx));
      }
    }
    return gx;
  }

  // Visitors that also accept BatchNorm& get called once on the layer itself.
  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    if constexpr (std::is_invocable_v<F&, BatchNorm&>) f(*this);
    f(prefix + ".weight", scale_);
    f(prefix + ".bias", shift_);
    f(prefix + ".running_mean", running_mean_);
    f(prefix + ".running_var", running_var_);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    if constexpr (std::is_invocable_v<F&, const BatchNorm&>) f(*this);
    f(prefix + ".weight", scale_);
    f(prefix + ".bias", shift_);
    f(prefix + ".running_mean", running_mean_);
    f(prefix + ".running_var", running_var_);
  }

 private:
  std::pair<std::size_t, std::size_t> layout(const Shape& s) const {
    if ((s.size() != 4 && s.size() != 2) || s[1] != channels_)
      fail(ErrorCode::ShapeMismatch, "batchnorm(" + std::to_string(channels_) + ") got " + shape_string(s));
    return {s[0], s.size() == 4 ? s[2] * s[3] : 1};
  }

  std::size_t channels_ = 0;
  Parameter<T> scale_, shift_, running_mean_, running_var_;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------

template <typename T>
class ReLU {
 public:
  Tensor<T> forward_eval(const Tensor<T>& x) const {
    Tensor<T> y = x;
    for (auto& v : y.values()) v = v > T(0) ? v : T(0);
    return y;
  }
  Tensor<T> forward_train(const Tensor<T>& x) {
    output_ = forward_eval(x);
    return output_;
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(output_[i] > T(0))) gx[i] = T(0);
    return gx;
  }
  void hash_pattern(std::uint64_t& h) const {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < output_.size(); ++i) {
      word = (word << 1) | (output_[i] > T(0) ? 1u : 0u);
      if (i % 64 == 63) hash_combine(h, word), word = 0;
    }
    hash_combine(h, word);
  }

 private:
  Tensor<T> output_;
};

// ---------------------------------------------------------------------------

template <typename T>
class MaxPool2d {
 public:
  MaxPool2d() = default;
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t pad) : kernel_(kernel), stride_(stride), pad_(pad) {}

  Shape output_shape(const Shape& in) const {
    if (in.size() != 4) fail(ErrorCode::ShapeMismatch, "maxpool expects rank 4");
    return {in[0], in[1], conv_out_size(in[2], kernel_, stride_, pad_), conv_out_size(in[3], kernel_, stride_, pad_)};
  }

  Tensor<T> forward_eval(const Tensor<T>& x) const { return run(x, nullptr); }
  Tensor<T> forward_train(const Tensor<T>& x) {
    input_shape_ = x.shape();
    return run(x, &argmax_);
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    Tensor<T> gx(input_shape_);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[argmax_[i]] += gy[i];
    return gx;
  }
  void hash_pattern(std::uint64_t& h) const {
    for (auto i : argmax_) hash_combine(h, i);
  }

 private:
  Tensor<T> run(const Tensor<T>& x, std::vector<std::size_t>* argmax) const {
    const Shape os = output_shape(x.shape());
    Tensor<T> y(os);
    if (argmax) argmax->assign(y.size(), 0);
    const std::size_t h = x.dim(2), w = x.dim(3);
    std::size_t o = 0;
    for (std::size_t nc = 0; nc < os[0] * os[1]; ++nc)
      for (std::size_t oh = 0; oh < os[2]; ++oh)
        for (std::size_t ow = 0; ow < os[3]; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t kh = 0; kh < kernel_; ++kh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride_ + kh) - static_cast<std::ptrdiff_t>(pad_);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kw = 0; kw < kernel_; ++kw) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride_ + kw) - static_cast<std::ptrdiff_t>(pad_);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t idx = (nc * h + static_cast<std::size_t>(ih)) * w + static_cast<std::size_t>(iw);
              if (x[idx] > best) best = x[idx], best_idx = idx;
            }
          }
          y[o] = best;
          if (argmax) (*argmax)[o] = best_idx;
        }
    return y;
  }

  std::size_t kernel_ = 3, stride_ = 2, pad_ = 1;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------

/// Stride-2 zero insertion: [N,C,H,W] -> [N,C,2H-1,2W-1], input samples at
/// even positions.
template <typename T>
Tensor<T> zero_insert(const Tensor<T>& x) {
  const std::size_t h = x.dim(2), w = x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1), 2 * h - 1, 2 * w - 1});
  for (std::size_t nc = 0; nc < x.dim(0) * x.dim(1); ++nc)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) y[(nc * (2 * h - 1) + 2 * i) * (2 * w - 1) + 2 * j] = x[(nc * h + i) * w + j];
  return y;
}

template <typename T>
Tensor<T> zero_insert_backward(const Tensor<T>& gy) {
  const std::size_t h = (gy.dim(2) + 1) / 2, w = (gy.dim(3) + 1) / 2;
  Tensor<T> gx({gy.dim(0), gy.dim(1), h, w});
  for (std::size_t nc = 0; nc < gy.dim(0) * gy.dim(1); ++nc)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[(nc * h + i) * w + j] = gy[(nc * gy.dim(2) + 2 * i) * gy.dim(3) + 2 * j];
  return gx;
}

// ---------------------------------------------------------------------------

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out)
      : in_(in), out_(out),
        weight_({out, in}, ParamKind::Weight, LayerType::FullyConnected, in, out),
        bias_({out}, ParamKind::Bias, LayerType::FullyConnected) {}

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  Tensor<T> forward_eval(const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_)
      fail(ErrorCode::ShapeMismatch, "linear expects [N," + std::to_string(in_) + "], got " + shape_string(x.shape()));
    Tensor<T> y({x.dim(0), out_});
    MatrixMap<T> ym(y.data(), x.dim(0), out_);
    ym.noalias() = ConstMatrixMap<T>(x.data(), x.dim(0), in_) * ConstMatrixMap<T>(weight_.value.data(), out_, in_).transpose();
    for (std::size_t n = 0; n < x.dim(0); ++n)
      for (std::size_t o = 0; o < out_; ++o) y.at(n, o) += bias_.value[o];
    return y;
  }
  Tensor<T> forward_train(const Tensor<T>& x) {
    input_ = x;
    return forward_eval(x);
  }
  Tensor<T> backward(const Tensor<T>& gy) {
    const std::size_t n = gy.dim(0);
    ConstMatrixMap<T> g(gy.data(), n, out_);
    MatrixMap<T>(weight_.ensure_grad().data(), out_, in_).noalias() += g.transpose() * ConstMatrixMap<T>(input_.data(), n, in_);
    auto& gb = bias_.ensure_grad();
    for (std::size_t o = 0; o < out_; ++o) gb[o] += g.col(o).sum();
    Tensor<T> gx({n, in_});
    MatrixMap<T>(gx.data(), n, in_).noalias() = g * ConstMatrixMap<T>(weight_.value.data(), out_, in_);
    return gx;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight_);
    f(prefix + ".bias", bias_);
  }
  template <typename F>
  void visit(const std::string& prefix, F&& f) const {
    f(prefix + ".weight", weight_);
    f(prefix + ".bias", bias_);
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------

/// Inverted dropout: kept activations are scaled by 1/(1-p) during training
/// so evaluation is the identity.
template <typename T>
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double p) : p_(p) {}

  Tensor<T> forward_eval(const Tensor<T>& x) const { return x; }
  Tensor<T> forward_train(const Tensor<T>& x, std::mt19937_64& rng) {
    mask_ = Tensor<T>(x.shape());
    if (p_ <= 0.0) {
      mask_.fill(T(1));
      return x;
    }
    std::bernoulli_distribution keep(1.0 - p_);
    const T scale = static_cast<T>(1.0 / (1.0 - p_));
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = keep(rng) ? scale : T(0);
      y[i] = x[i] * mask_[i];
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    Tensor<T> gx(gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * mask_[i];
    return gx;
  }

 private:
  double p_ = 0.5;
  Tensor<T> mask_;
};

}  // namespace hgpose
