#pragma once

#include <span>
#include <vector>

#include "modrestore/tensor.hpp"

/// Differentiable building blocks shared by the generator, the discriminator
/// and the perceptual feature extractor. Every forward has a matching
/// backward that accumulates parameter gradients (`+=`) and returns the
/// gradient with respect to its input.
namespace modrestore::layers {

/// Convolution geometry. Weights are stored [out, k, k, in] so that the
/// row-major matrix view is out x (k*k*in), matching the im2col row order.
struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int output_extent(int n) const noexcept { return (n + 2 * pad - kernel) / stride + 1; }
  int patch_size() const noexcept { return kernel * kernel * in_channels; }
};

template <typename Scalar>
using ConstWeights = Eigen::Ref<const RowMatrix<Scalar>>;
template <typename Scalar>
using MutableWeights = Eigen::Ref<RowMatrix<Scalar>>;

namespace detail {

template <typename Scalar>
void check_conv_input(const FeatureMap<Scalar>& x, const ConvGeometry& g) {
  if (x.channels != g.in_channels) {
    throw ShapeError("convolution expects " + std::to_string(g.in_channels) + " input channels, got " +
                     std::to_string(x.channels));
  }
  if (g.output_extent(x.height) < 1 || g.output_extent(x.width) < 1) {
    throw ShapeError("convolution input is smaller than its kernel");
  }
}

// Writes the patches of `x` into columns [col0, col0 + ho*wo) of `cols`.
template <typename Scalar>
void im2col_into(const FeatureMap<Scalar>& x, const ConvGeometry& g, Matrix<Scalar>& cols, Eigen::Index col0) {
  const int ho = g.output_extent(x.height);
  const int wo = g.output_extent(x.width);
  const int c = x.channels;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      auto col = cols.col(col0 + oy * wo + ox);
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          auto seg = col.segment((ky * g.kernel + kx) * c, c);
          if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) {
            seg.setZero();
          } else {
            seg = x.data.col(iy * x.width + ix);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_from(const Matrix<Scalar>& cols, Eigen::Index col0, const ConvGeometry& g, FeatureMap<Scalar>& dx) {
  const int ho = g.output_extent(dx.height);
  const int wo = g.output_extent(dx.width);
  const int c = dx.channels;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      auto col = cols.col(col0 + oy * wo + ox);
      for (int ky = 0; ky < g.kernel; ++ky) {
        const int iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= dx.height) continue;
        for (int kx = 0; kx < g.kernel; ++kx) {
          const int ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= dx.width) continue;
          dx.data.col(iy * dx.width + ix) += col.segment((ky * g.kernel + kx) * c, c);
        }
      }
    }
  }
}

template <typename Scalar>
Matrix<Scalar> im2col_batch(std::span<const FeatureMap<Scalar>> xs, const ConvGeometry& g) {
  Eigen::Index total = 0;
  for (const auto& x : xs) {
    check_conv_input(x, g);
    total += static_cast<Eigen::Index>(g.output_extent(x.height)) * g.output_extent(x.width);
  }
  Matrix<Scalar> cols(g.patch_size(), total);
  Eigen::Index col0 = 0;
  for (const auto& x : xs) {
    im2col_into(x, g, cols, col0);
    col0 += static_cast<Eigen::Index>(g.output_extent(x.height)) * g.output_extent(x.width);
  }
  return cols;
}

}  // namespace detail

/// Batched 2D convolution (cross-correlation) with zero padding. `bias` may be null.
template <typename Scalar>
std::vector<FeatureMap<Scalar>> conv2d(std::span<const FeatureMap<Scalar>> xs, const ConvGeometry& g,
                                       const ConstWeights<Scalar>& weight, const Vector<Scalar>* bias) {
  const Matrix<Scalar> cols = detail::im2col_batch(xs, g);
  Matrix<Scalar> y(g.out_channels, cols.cols());
  y.noalias() = weight * cols;
  if (bias) y.colwise() += *bias;
  std::vector<FeatureMap<Scalar>> out;
  out.reserve(xs.size());
  Eigen::Index col0 = 0;
  for (const auto& x : xs) {
    const int ho = g.output_extent(x.height);
    const int wo = g.output_extent(x.width);
    out.emplace_back(g.out_channels, ho, wo, y.middleCols(col0, static_cast<Eigen::Index>(ho) * wo));
    col0 += static_cast<Eigen::Index>(ho) * wo;
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> conv2d(const FeatureMap<Scalar>& x, const ConvGeometry& g, const ConstWeights<Scalar>& weight,
                          const Vector<Scalar>* bias) {
  return std::move(conv2d<Scalar>(std::span<const FeatureMap<Scalar>>(&x, 1), g, weight, bias).front());
}

/// Accumulates weight/bias gradients and returns input gradients (empty when
/// `need_input_grad` is false).
template <typename Scalar>
std::vector<FeatureMap<Scalar>> conv2d_backward(std::span<const FeatureMap<Scalar>> xs,
                                                std::span<const FeatureMap<Scalar>> grad_out,
                                                const ConvGeometry& g, const ConstWeights<Scalar>& weight,
                                                MutableWeights<Scalar> grad_weight, Vector<Scalar>* grad_bias,
                                                bool need_input_grad = true) {
  const Matrix<Scalar> cols = detail::im2col_batch(xs, g);
  Matrix<Scalar> dy(g.out_channels, cols.cols());
  Eigen::Index col0 = 0;
  for (const auto& d : grad_out) {
    dy.middleCols(col0, d.pixels()) = d.data;
    col0 += d.pixels();
  }
  grad_weight.noalias() += dy * cols.transpose();
  if (grad_bias) *grad_bias += dy.rowwise().sum();

  std::vector<FeatureMap<Scalar>> dxs;
  if (!need_input_grad) return dxs;
  Matrix<Scalar> dcols(cols.rows(), cols.cols());
  dcols.noalias() = weight.transpose() * dy;
  col0 = 0;
  dxs.reserve(xs.size());
  for (const auto& x : xs) {
    FeatureMap<Scalar> dx(x.channels, x.height, x.width);
    detail::col2im_from(dcols, col0, g, dx);
    col0 += static_cast<Eigen::Index>(g.output_extent(x.height)) * g.output_extent(x.width);
    dxs.push_back(std::move(dx));
  }
  return dxs;
}

template <typename Scalar>
FeatureMap<Scalar> conv2d_backward(const FeatureMap<Scalar>& x, const FeatureMap<Scalar>& grad_out,
                                   const ConvGeometry& g, const ConstWeights<Scalar>& weight,
                                   MutableWeights<Scalar> grad_weight, Vector<Scalar>* grad_bias,
                                   bool need_input_grad = true) {
  auto dxs = conv2d_backward<Scalar>(std::span<const FeatureMap<Scalar>>(&x, 1),
                                     std::span<const FeatureMap<Scalar>>(&grad_out, 1), g, weight, grad_weight,
                                     grad_bias, need_input_grad);
  return dxs.empty() ? FeatureMap<Scalar>() : std::move(dxs.front());
}

/// 2x2 stride-2 transposed convolution. `weight` is (4*out) x in with row
/// index (dy*2 + dx)*out + o, i.e. stored as [2, 2, out, in].
template <typename Scalar>
FeatureMap<Scalar> upconv2x2(const FeatureMap<Scalar>& x, const ConstWeights<Scalar>& weight,
                             const Vector<Scalar>& bias) {
  const int out_c = static_cast<int>(weight.rows() / 4);
  if (weight.cols() != x.channels) throw ShapeError("transposed convolution channel mismatch");
  Matrix<Scalar> y4(weight.rows(), x.pixels());
  y4.noalias() = weight * x.data;
  FeatureMap<Scalar> out(out_c, 2 * x.height, 2 * x.width);
  for (int y = 0; y < x.height; ++y) {
    for (int xx = 0; xx < x.width; ++xx) {
      const auto src = y4.col(y * x.width + xx);
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          out.data.col((2 * y + dy) * out.width + 2 * xx + dx) = src.segment((dy * 2 + dx) * out_c, out_c) + bias;
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> upconv2x2_backward(const FeatureMap<Scalar>& x, const FeatureMap<Scalar>& grad_out,
                                      const ConstWeights<Scalar>& weight, MutableWeights<Scalar> grad_weight,
                                      Vector<Scalar>& grad_bias) {
  const int out_c = static_cast<int>(weight.rows() / 4);
  Matrix<Scalar> dy4(weight.rows(), x.pixels());
  for (int y = 0; y < x.height; ++y) {
    for (int xx = 0; xx < x.width; ++xx) {
      auto dst = dy4.col(y * x.width + xx);
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          dst.segment((dy * 2 + dx) * out_c, out_c) = grad_out.data.col((2 * y + dy) * grad_out.width + 2 * xx + dx);
        }
      }
    }
  }
  grad_weight.noalias() += dy4 * x.data.transpose();
  grad_bias += grad_out.data.rowwise().sum();
  FeatureMap<Scalar> dx(x.channels, x.height, x.width);
  dx.data.noalias() = weight.transpose() * dy4;
  return dx;
}

template <typename Scalar>
FeatureMap<Scalar> relu(FeatureMap<Scalar> x) {
  x.data = x.data.cwiseMax(Scalar(0));
  return x;
}

/// Gradient of ReLU given its pre-activation input.
template <typename Scalar>
FeatureMap<Scalar> relu_backward(const FeatureMap<Scalar>& pre, FeatureMap<Scalar> grad) {
  grad.data = (pre.data.array() > Scalar(0)).select(grad.data, Scalar(0));
  return grad;
}

template <typename Scalar, typename Derived>
Matrix<Scalar> leaky_relu(const Eigen::MatrixBase<Derived>& x, Scalar slope) {
  return (x.array() > Scalar(0)).select(x.array(), slope * x.array()).matrix();
}

template <typename Scalar, typename DerivedPre, typename DerivedGrad>
Matrix<Scalar> leaky_relu_backward(const Eigen::MatrixBase<DerivedPre>& pre,
                                   const Eigen::MatrixBase<DerivedGrad>& grad, Scalar slope) {
  return (pre.array() > Scalar(0)).select(grad.array(), slope * grad.array()).matrix();
}

/// Per-channel statistics of one batch-norm application, kept for backward.
template <typename Scalar>
struct BatchNormTape {
  bool training = true;
  std::vector<Matrix<Scalar>> normalized;
  Vector<Scalar> inv_std;
  Vector<Scalar> batch_mean;
  Vector<Scalar> batch_var;  // biased
  Eigen::Index count = 0;
};

/// Batch normalization over (batch, height, width). Training mode uses the
/// batch statistics, evaluation mode the supplied running statistics.
template <typename Scalar>
std::vector<FeatureMap<Scalar>> batchnorm(std::span<const FeatureMap<Scalar>> xs, const Vector<Scalar>& gamma,
                                          const Vector<Scalar>& beta, const Vector<Scalar>& running_mean,
                                          const Vector<Scalar>& running_var, Scalar eps, bool training,
                                          BatchNormTape<Scalar>* tape) {
  const Eigen::Index c = gamma.size();
  Vector<Scalar> mean = Vector<Scalar>::Zero(c);
  Vector<Scalar> var = Vector<Scalar>::Zero(c);
  Eigen::Index count = 0;
  if (training) {
    for (const auto& x : xs) {
      mean += x.data.rowwise().sum();
      count += x.pixels();
    }
    mean /= static_cast<Scalar>(count);
    for (const auto& x : xs) var += (x.data.colwise() - mean).rowwise().squaredNorm();
    var /= static_cast<Scalar>(count);
  } else {
    mean = running_mean;
    var = running_var;
  }
  const Vector<Scalar> inv_std = (var.array() + eps).rsqrt().matrix();

  std::vector<FeatureMap<Scalar>> out;
  out.reserve(xs.size());
  if (tape) {
    tape->training = training;
    tape->normalized.clear();
    tape->inv_std = inv_std;
    tape->batch_mean = mean;
    tape->batch_var = var;
    tape->count = count;
  }
  for (const auto& x : xs) {
    Matrix<Scalar> xhat = inv_std.asDiagonal() * (x.data.colwise() - mean);
    Matrix<Scalar> y = gamma.asDiagonal() * xhat;
    y.colwise() += beta;
    out.emplace_back(x.channels, x.height, x.width, std::move(y));
    if (tape) tape->normalized.push_back(std::move(xhat));
  }
  return out;
}

template <typename Scalar>
std::vector<FeatureMap<Scalar>> batchnorm_backward(const BatchNormTape<Scalar>& tape,
                                                   std::span<const FeatureMap<Scalar>> grad_out,
                                                   const Vector<Scalar>& gamma, Vector<Scalar>& grad_gamma,
                                                   Vector<Scalar>& grad_beta) {
  const Eigen::Index c = gamma.size();
  Vector<Scalar> sum_dxhat = Vector<Scalar>::Zero(c);
  Vector<Scalar> sum_dxhat_xhat = Vector<Scalar>::Zero(c);
  for (std::size_t n = 0; n < grad_out.size(); ++n) {
    const auto& dy = grad_out[n].data;
    const auto& xhat = tape.normalized[n];
    grad_gamma += dy.cwiseProduct(xhat).rowwise().sum();
    grad_beta += dy.rowwise().sum();
    sum_dxhat += dy.rowwise().sum();
    sum_dxhat_xhat += dy.cwiseProduct(xhat).rowwise().sum();
  }
  // dxhat = gamma * dy, so both sums pick up a gamma factor.
  sum_dxhat = sum_dxhat.cwiseProduct(gamma);
  sum_dxhat_xhat = sum_dxhat_xhat.cwiseProduct(gamma);

  std::vector<FeatureMap<Scalar>> dxs;
  dxs.reserve(grad_out.size());
  const Scalar m = static_cast<Scalar>(tape.count);
  for (std::size_t n = 0; n < grad_out.size(); ++n) {
    const auto& g = grad_out[n];
    Matrix<Scalar> dxhat = gamma.asDiagonal() * g.data;
    Matrix<Scalar> dx;
    if (tape.training) {
      dx = (dxhat * m).colwise() - sum_dxhat;
      dx -= sum_dxhat_xhat.asDiagonal() * tape.normalized[n];
      dx = (tape.inv_std / m).asDiagonal() * dx;
    } else {
      dx = tape.inv_std.asDiagonal() * dxhat;
    }
    dxs.emplace_back(g.channels, g.height, g.width, std::move(dx));
  }
  return dxs;
}

}  // namespace modrestore::layers
