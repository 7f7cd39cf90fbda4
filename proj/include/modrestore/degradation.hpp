#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "modrestore/tensor.hpp"

namespace modrestore {

inline constexpr double kMaxBlurWidth = 4.0;
inline constexpr double kMaxNoiseSigma = 50.0;
inline constexpr int kBlurKernelSize = 21;
inline constexpr int kBlurKernelRadius = kBlurKernelSize / 2;

/// Physical degradation levels: Gaussian blur width r (pixels) and noise
/// standard deviation sigma on the 0-255 intensity scale.
struct DegradationSpec {
  double blur_r = 0.0;
  double noise_sigma = 0.0;

  void validate() const;
  bool operator==(const DegradationSpec&) const = default;
};

/// 21x21 correlation kernel, taps[y][x] with the center at (10, 10).
struct BlurKernel {
  Eigen::Matrix<double, kBlurKernelSize, kBlurKernelSize> taps;
};

/// Truncated 2D Gaussian with standard deviation r, normalized to unit sum.
/// r = 0 gives the delta kernel.
BlurKernel make_gaussian_kernel(double r);

/// Per-channel 2D correlation with reflect-101 boundary padding.
Image apply_blur(const Image& img, const BlurKernel& kernel);

/// Adds i.i.d. N(0, (sigma/255)^2) noise and clamps to [0,1].
Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed);

/// Blur, then noise.
Image degrade(const Image& img, const DegradationSpec& spec, std::uint64_t seed);

/// Uniform draw from the training grid: r in {0.0, 0.1, ..., 4.0}, sigma in {0, 1, ..., 50}.
DegradationSpec sample_degradation(std::mt19937_64& rng);

}  // namespace modrestore
