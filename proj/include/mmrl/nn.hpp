#pragma once

// Minimal layers with hand-written backward passes. Every layer is templated
// on the scalar type: training runs in float, gradient checks in double.

#include "mmrl/common.hpp"
#include "mmrl/container.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace mmrl::nn {

template <typename Scalar>
struct Param {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;

  Param() = default;
  Param(std::string n, Index rows, Index cols)
      : name(std::move(n)), value(Mat<Scalar>::Zero(rows, cols)), grad(Mat<Scalar>::Zero(rows, cols)) {}
};

template <typename Scalar>
using ParamList = std::vector<Param<Scalar>*>;

template <typename Scalar>
void zero_grad(const ParamList<Scalar>& params) {
  for (auto* p : params) p->grad.setZero();
}

template <typename Scalar>
void he_init(Param<Scalar>& p, Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(dist(rng));
}

template <typename Scalar>
std::vector<NamedTensor> export_params(const ParamList<Scalar>& params, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (auto* p : params) out.push_back(NamedTensor::from(prefix + p->name, p->value));
  return out;
}

template <typename Scalar>
void import_params(const ParamList<Scalar>& params, const TensorFile& file, const std::string& prefix) {
  for (auto* p : params) {
    const auto& t = file.at(prefix + p->name);
    if (t.rows != p->value.rows() || t.cols != p->value.cols()) {
      throw ConfigError("tensor '" + t.name + "' has an unexpected shape");
    }
    p->value = t.template as<Scalar>();
  }
}

template <typename Scalar>
void copy_params(const ParamList<Scalar>& from, const ParamList<Scalar>& to) {
  for (std::size_t i = 0; i < from.size(); ++i) to[i]->value = from[i]->value;
}

/// y = W x + b on column batches.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, Index in, Index out)
      : weight_(name + ".weight", out, in), bias_(name + ".bias", out, 1) {}

  void init(std::mt19937_64& rng, bool zero_bias = true) {
    he_init(weight_, weight_.value.cols(), rng);
    if (zero_bias) bias_.value.setZero();
  }

  Index in_dim() const { return weight_.value.cols(); }
  Index out_dim() const { return weight_.value.rows(); }

  template <typename Derived>
  Mat<Scalar> forward(const Eigen::MatrixBase<Derived>& x) const {
    Mat<Scalar> y = weight_.value * x;
    y.colwise() += bias_.value.col(0);
    return y;
  }

  /// Accumulates parameter gradients and returns dL/dx.
  template <typename DX, typename DG>
  Mat<Scalar> backward(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DG>& grad_out) {
    weight_.grad.noalias() += grad_out * x.transpose();
    bias_.grad.col(0) += grad_out.rowwise().sum();
    return weight_.value.transpose() * grad_out;
  }

  /// dL/dx without touching parameter gradients.
  template <typename DG>
  Mat<Scalar> input_grad(const Eigen::MatrixBase<DG>& grad_out) const {
    return weight_.value.transpose() * grad_out;
  }

  Param<Scalar>& weight() { return weight_; }
  Param<Scalar>& bias() { return bias_; }
  const Param<Scalar>& weight() const { return weight_; }
  const Param<Scalar>& bias() const { return bias_; }
  ParamList<Scalar> params() { return {&weight_, &bias_}; }

 private:
  Param<Scalar> weight_;
  Param<Scalar> bias_;
};

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

/// Adam with bias correction.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(ParamList<Scalar> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto b1 = static_cast<Scalar>(beta1_);
    const auto b2 = static_cast<Scalar>(beta2_);
    const auto step_size = static_cast<Scalar>(lr * std::sqrt(c2) / c1);
    const auto eps = static_cast<Scalar>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad;
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      params_[i]->value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }

  long steps() const { return t_; }

 private:
  ParamList<Scalar> params_;
  std::vector<Mat<Scalar>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

enum class Activation { relu, identity };

/// 1-D convolution over token rows with "same" zero padding (odd width),
/// nonlinearity, and global max-pool per filter.
template <typename Scalar>
class TextConv {
 public:
  struct Cache {
    RowMat<Scalar> padded;        // (L + width - 1) x D
    Mat<Scalar> activation;       // L x F, post-rectifier
    Mat<Scalar> preactivation;    // L x F
    Vec<Scalar> pooled;           // F
    std::vector<Index> argmax;    // per filter
  };

  TextConv() = default;
  TextConv(std::string name, Index width, Index dim, Index filters, Activation act = Activation::relu)
      : width_(width), dim_(dim), act_(act), weight_(name + ".weight", width * dim, filters), bias_(name + ".bias", 1, filters) {
    if (width % 2 == 0) throw ConfigError("text filter widths must be odd");
  }

  void init(std::mt19937_64& rng) {
    he_init(weight_, width_ * dim_, rng);
    bias_.value.setZero();
  }

  Index width() const { return width_; }
  Index filters() const { return weight_.value.cols(); }

  template <typename Derived>
  Cache forward(const Eigen::MatrixBase<Derived>& seq) const {
    const Index L = seq.rows();
    const Index half = width_ / 2;
    Cache c;
    c.padded = RowMat<Scalar>::Zero(L + width_ - 1, dim_);
    c.padded.middleRows(half, L) = seq;
    // Consecutive padded rows are contiguous, so the unfolded windows are a
    // strided view with overlapping rows.
    Eigen::Map<const RowMat<Scalar>, 0, Eigen::OuterStride<>> windows(c.padded.data(), L, width_ * dim_,
                                                                       Eigen::OuterStride<>(dim_));
    c.preactivation.noalias() = windows * weight_.value;
    c.preactivation.rowwise() += bias_.value.row(0);
    c.activation = act_ == Activation::relu ? Mat<Scalar>(relu(c.preactivation)) : c.preactivation;
    const Index F = filters();
    c.pooled.resize(F);
    c.argmax.resize(static_cast<std::size_t>(F));
    for (Index f = 0; f < F; ++f) {
      Index arg = 0;
      c.pooled(f) = c.activation.col(f).maxCoeff(&arg);
      c.argmax[static_cast<std::size_t>(f)] = arg;
    }
    return c;
  }

  /// Gradient of the loss w.r.t. the post-rectifier activation map given
  /// the gradient at the pooled outputs.
  Mat<Scalar> activation_grad(const Cache& c, const Vec<Scalar>& grad_pooled) const {
    Mat<Scalar> g = Mat<Scalar>::Zero(c.activation.rows(), c.activation.cols());
    for (Index f = 0; f < g.cols(); ++f) g(c.argmax[static_cast<std::size_t>(f)], f) = grad_pooled(f);
    return g;
  }

  /// Accumulates parameter gradients; returns dL/dseq when requested.
  RowMat<Scalar> backward(const Cache& c, const Vec<Scalar>& grad_pooled, bool want_input_grad) {
    const Index L = c.activation.rows();
    Mat<Scalar> grad_pre = activation_grad(c, grad_pooled);
    if (act_ == Activation::relu) grad_pre = (c.preactivation.array() > Scalar(0)).select(grad_pre, Scalar(0));
    Eigen::Map<const RowMat<Scalar>, 0, Eigen::OuterStride<>> windows(c.padded.data(), L, width_ * dim_,
                                                                       Eigen::OuterStride<>(dim_));
    weight_.grad.noalias() += windows.transpose() * grad_pre;
    bias_.grad.row(0) += grad_pre.colwise().sum();
    if (!want_input_grad) return {};
    RowMat<Scalar> grad_windows = grad_pre * weight_.value.transpose();
    RowMat<Scalar> grad_padded = RowMat<Scalar>::Zero(c.padded.rows(), dim_);
    for (Index p = 0; p < L; ++p) {
      for (Index j = 0; j < width_; ++j) grad_padded.row(p + j) += grad_windows.block(p, j * dim_, 1, dim_);
    }
    return grad_padded.middleRows(width_ / 2, L);
  }

  ParamList<Scalar> params() { return {&weight_, &bias_}; }

 private:
  Index width_ = 3;
  Index dim_ = 128;
  Activation act_ = Activation::relu;
  Param<Scalar> weight_;
  Param<Scalar> bias_;
};

/// Channel-major image tensor: one row per channel, pixels row-major.
template <typename Scalar>
struct Tensor3 {
  Index channels = 0;
  Index height = 0;
  Index width = 0;
  Mat<Scalar> data;  // channels x (height * width)

  Tensor3() = default;
  Tensor3(Index c, Index h, Index w) : channels(c), height(h), width(w), data(Mat<Scalar>::Zero(c, h * w)) {}
  Scalar& at(Index c, Index y, Index x) { return data(c, y * width + x); }
  Scalar at(Index c, Index y, Index x) const { return data(c, y * width + x); }
};

/// 3x3 convolution, stride 1, zero padding 1.
template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, Index in_channels, Index out_channels)
      : in_(in_channels), weight_(name + ".weight", out_channels, in_channels * 9), bias_(name + ".bias", out_channels, 1) {}

  void init(std::mt19937_64& rng) {
    he_init(weight_, in_ * 9, rng);
    bias_.value.setZero();
  }

  Index out_channels() const { return weight_.value.rows(); }

  static Mat<Scalar> im2col(const Tensor3<Scalar>& x) {
    const Index H = x.height, W = x.width;
    Mat<Scalar> cols = Mat<Scalar>::Zero(x.channels * 9, H * W);
    for (Index c = 0; c < x.channels; ++c) {
      for (Index ky = 0; ky < 3; ++ky) {
        for (Index kx = 0; kx < 3; ++kx) {
          const Index row = c * 9 + ky * 3 + kx;
          for (Index y = 0; y < H; ++y) {
            const Index sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            for (Index xx = 0; xx < W; ++xx) {
              const Index sx = xx + kx - 1;
              if (sx < 0 || sx >= W) continue;
              cols(row, y * W + xx) = x.data(c, sy * W + sx);
            }
          }
        }
      }
    }
    return cols;
  }

  static Tensor3<Scalar> col2im(const Mat<Scalar>& cols, Index channels, Index H, Index W) {
    Tensor3<Scalar> g(channels, H, W);
    for (Index c = 0; c < channels; ++c) {
      for (Index ky = 0; ky < 3; ++ky) {
        for (Index kx = 0; kx < 3; ++kx) {
          const Index row = c * 9 + ky * 3 + kx;
          for (Index y = 0; y < H; ++y) {
            const Index sy = y + ky - 1;
            if (sy < 0 || sy >= H) continue;
            for (Index xx = 0; xx < W; ++xx) {
              const Index sx = xx + kx - 1;
              if (sx < 0 || sx >= W) continue;
              g.data(c, sy * W + sx) += cols(row, y * W + xx);
            }
          }
        }
      }
    }
    return g;
  }

  /// Returns pre-activation output; `cols` receives the unfolded input.
  Tensor3<Scalar> forward(const Tensor3<Scalar>& x, Mat<Scalar>& cols) const {
    if (x.channels != in_) throw ConfigError("conv input channel mismatch");
    cols = im2col(x);
    Tensor3<Scalar> y;
    y.channels = out_channels();
    y.height = x.height;
    y.width = x.width;
    y.data.noalias() = weight_.value * cols;
    y.data.colwise() += bias_.value.col(0);
    return y;
  }

  Tensor3<Scalar> backward(const Mat<Scalar>& cols, const Mat<Scalar>& grad_out, Index H, Index W,
                           bool accumulate_params, bool want_input_grad) {
    if (accumulate_params) {
      weight_.grad.noalias() += grad_out * cols.transpose();
      bias_.grad.col(0) += grad_out.rowwise().sum();
    }
    if (!want_input_grad) return {};
    Mat<Scalar> grad_cols = weight_.value.transpose() * grad_out;
    return col2im(grad_cols, in_, H, W);
  }

  ParamList<Scalar> params() { return {&weight_, &bias_}; }

 private:
  Index in_ = 3;
  Param<Scalar> weight_;
  Param<Scalar> bias_;
};

/// 2x2 max pooling, stride 2 (odd trailing rows/columns dropped).
template <typename Scalar>
Tensor3<Scalar> max_pool2(const Tensor3<Scalar>& x, std::vector<Index>& argmax) {
  Tensor3<Scalar> y(x.channels, x.height / 2, x.width / 2);
  argmax.assign(static_cast<std::size_t>(y.data.size()), 0);
  for (Index c = 0; c < x.channels; ++c) {
    for (Index yy = 0; yy < y.height; ++yy) {
      for (Index xx = 0; xx < y.width; ++xx) {
        Index best = (2 * yy) * x.width + 2 * xx;
        for (Index dy = 0; dy < 2; ++dy) {
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = (2 * yy + dy) * x.width + 2 * xx + dx;
            if (x.data(c, idx) > x.data(c, best)) best = idx;
          }
        }
        const Index out = yy * y.width + xx;
        y.data(c, out) = x.data(c, best);
        argmax[static_cast<std::size_t>(c * y.height * y.width + out)] = best;
      }
    }
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> max_pool2_backward(const Mat<Scalar>& grad_out, const std::vector<Index>& argmax, Index channels,
                               Index in_pixels) {
  Mat<Scalar> g = Mat<Scalar>::Zero(channels, in_pixels);
  const Index out_pixels = grad_out.cols();
  for (Index c = 0; c < channels; ++c) {
    for (Index o = 0; o < out_pixels; ++o) g(c, argmax[static_cast<std::size_t>(c * out_pixels + o)]) += grad_out(c, o);
  }
  return g;
}

}  // namespace mmrl::nn
