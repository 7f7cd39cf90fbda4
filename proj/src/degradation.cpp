#include "modrestore/degradation.hpp"

#include <cmath>
#include <string>

namespace modrestore {

void DegradationSpec::validate() const {
  if (!std::isfinite(blur_r) || blur_r < 0.0 || blur_r > kMaxBlurWidth) {
    throw InvalidDegradation("blur width must lie in [0,4], got " + std::to_string(blur_r));
  }
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0 || noise_sigma > kMaxNoiseSigma) {
    throw InvalidDegradation("noise sigma must lie in [0,50], got " + std::to_string(noise_sigma));
  }
}

BlurKernel make_gaussian_kernel(double r) {
  if (!std::isfinite(r) || r < 0.0 || r > kMaxBlurWidth) {
    throw InvalidDegradation("blur width must lie in [0,4], got " + std::to_string(r));
  }
  BlurKernel k;
  k.taps.setZero();
  if (r == 0.0) {
    k.taps(kBlurKernelRadius, kBlurKernelRadius) = 1.0;
    return k;
  }
  const double denom = 2.0 * r * r;
  for (int y = 0; y < kBlurKernelSize; ++y) {
    for (int x = 0; x < kBlurKernelSize; ++x) {
      const double dy = y - kBlurKernelRadius;
      const double dx = x - kBlurKernelRadius;
      k.taps(y, x) = std::exp(-(dx * dx + dy * dy) / denom);
    }
  }
  k.taps /= k.taps.sum();
  return k;
}

Image apply_blur(const Image& img, const BlurKernel& kernel) {
  validate_image(img);
  const int h = img.height;
  const int w = img.width;
  const int pad = kBlurKernelRadius;
  const int ph = h + 2 * pad;
  const int pw = w + 2 * pad;

  // Nonzero taps only; the delta kernel then costs one multiply per pixel.
  struct Tap {
    int dy, dx;
    double weight;
  };
  std::vector<Tap> taps;
  for (int y = 0; y < kBlurKernelSize; ++y) {
    for (int x = 0; x < kBlurKernelSize; ++x) {
      if (kernel.taps(y, x) != 0.0) taps.push_back({y, x, kernel.taps(y, x)});
    }
  }

  Image out(img.channels, h, w);
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> padded(ph, pw);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < ph; ++y) {
      const int sy = reflect_index(y - pad, h);
      for (int x = 0; x < pw; ++x) padded(y, x) = img.data(c, sy * w + reflect_index(x - pad, w));
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (const auto& t : taps) acc += t.weight * padded(y + t.dy, x + t.dx);
        out.data(c, y * w + x) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Image add_gaussian_noise(const Image& img, double sigma, std::uint64_t seed) {
  validate_image(img);
  if (!std::isfinite(sigma) || sigma < 0.0 || sigma > kMaxNoiseSigma) {
    throw InvalidDegradation("noise sigma must lie in [0,50], got " + std::to_string(sigma));
  }
  if (sigma == 0.0) return img;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma / 255.0);
  Image out = img;
  // Column-major storage visits pixels in (y, x, c) order.
  float* v = out.data.data();
  for (Eigen::Index i = 0; i < out.data.size(); ++i) {
    v[i] = static_cast<float>(std::clamp(static_cast<double>(v[i]) + noise(rng), 0.0, 1.0));
  }
  return out;
}

Image degrade(const Image& img, const DegradationSpec& spec, std::uint64_t seed) {
  spec.validate();
  return add_gaussian_noise(apply_blur(img, make_gaussian_kernel(spec.blur_r)), spec.noise_sigma, seed);
}

DegradationSpec sample_degradation(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> blur_step(0, 40);
  std::uniform_int_distribution<int> sigma_step(0, 50);
  const int b = blur_step(rng);
  const int s = sigma_step(rng);
  return {b / 10.0, static_cast<double>(s)};
}

}  // namespace modrestore
