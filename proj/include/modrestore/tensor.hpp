#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "modrestore/errors.hpp"

namespace modrestore {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense C x H x W feature map.
///
/// Storage is channel-planar: `data` has one row per channel and one column
/// per pixel, pixel (y, x) living in column `y * width + x`. Images are
/// feature maps with 1 or 3 channels and values in [0,1]; accessors take
/// (y, x, c) so callers can think channels-last.
template <typename Scalar>
struct FeatureMap {
  using scalar_type = Scalar;

  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix<Scalar> data;

  FeatureMap() = default;
  FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix<Scalar>::Zero(c, h * w)) {}
  FeatureMap(int c, int h, int w, Matrix<Scalar> values)
      : channels(c), height(h), width(w), data(std::move(values)) {
    if (data.rows() != c || data.cols() != static_cast<Eigen::Index>(h) * w) {
      throw ShapeError("feature map data does not match its declared shape");
    }
  }

  static FeatureMap constant(int c, int h, int w, Scalar value) {
    return FeatureMap(c, h, w, Matrix<Scalar>::Constant(c, h * w, value));
  }

  int pixels() const noexcept { return height * width; }
  Eigen::Index size() const noexcept { return data.size(); }
  bool empty() const noexcept { return data.size() == 0; }

  Scalar& operator()(int y, int x, int c) { return data(c, y * width + x); }
  Scalar operator()(int y, int x, int c) const { return data(c, y * width + x); }

  bool same_shape(const FeatureMap& other) const noexcept {
    return channels == other.channels && height == other.height && width == other.width;
  }

  template <typename Other>
  FeatureMap<Other> cast() const {
    return FeatureMap<Other>(channels, height, width, data.template cast<Other>());
  }
};

using Image = FeatureMap<float>;

template <typename Scalar>
void require_same_shape(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.channels) + "x" +
                     std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" +
                     std::to_string(b.width) + ")");
  }
}

/// Throws unless `img` is a non-empty 1- or 3-channel image with finite values.
template <typename Scalar>
void validate_image(const FeatureMap<Scalar>& img) {
  if (img.height < 1 || img.width < 1) throw ShapeError("image must be at least 1x1");
  if (img.channels != 1 && img.channels != 3) throw ShapeError("image must have 1 or 3 channels");
  if (!img.data.allFinite()) throw DataError("image contains non-finite values");
}

template <typename Scalar>
FeatureMap<Scalar> clamp01(FeatureMap<Scalar> img) {
  img.data = img.data.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
  return img;
}

/// Mirror index into [0, n) without repeating the edge sample (reflect-101).
inline int reflect_index(int i, int n) noexcept {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Reflect-pads bottom and right edges so both dimensions become multiples of `multiple`.
template <typename Scalar>
FeatureMap<Scalar> pad_to_multiple(const FeatureMap<Scalar>& img, int multiple) {
  const int h = (img.height + multiple - 1) / multiple * multiple;
  const int w = (img.width + multiple - 1) / multiple * multiple;
  if (h == img.height && w == img.width) return img;
  FeatureMap<Scalar> out(img.channels, h, w);
  for (int y = 0; y < h; ++y) {
    const int sy = reflect_index(y, img.height);
    for (int x = 0; x < w; ++x) {
      out.data.col(y * w + x) = img.data.col(sy * img.width + reflect_index(x, img.width));
    }
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> crop(const FeatureMap<Scalar>& img, int top, int left, int h, int w) {
  if (top < 0 || left < 0 || top + h > img.height || left + w > img.width) {
    throw ShapeError("crop window outside the image");
  }
  FeatureMap<Scalar> out(img.channels, h, w);
  for (int y = 0; y < h; ++y) {
    out.data.middleCols(y * w, w) = img.data.middleCols((top + y) * img.width + left, w);
  }
  return out;
}

}  // namespace modrestore
