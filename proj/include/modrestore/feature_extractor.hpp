#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "modrestore/layers.hpp"
#include "modrestore/parameter_tree.hpp"

namespace modrestore {

/// Differentiable image-to-features map used by the perceptual loss.
/// Implementations are immutable and safe to share between threads.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual Image extract(const Image& img) const = 0;
  /// Vector-Jacobian product: d(features . grad_features)/d(img) at `img`.
  virtual Image backward(const Image& img, const Image& grad_features) const = 0;
};

class IdentityExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "identity"; }
  Image extract(const Image& img) const override { return img; }
  Image backward(const Image&, const Image& grad_features) const override { return grad_features; }
};

/// Plain feed-forward stack of 3x3 convolutions, ReLUs and 2x2 max pools.
/// Covers both the small random test extractor and the VGG19 feature stack
/// (features after the 4th convolution of block 5, before its activation).
class ConvStackExtractor final : public FeatureExtractor {
 public:
  enum class Op { Conv, Relu, MaxPool };
  struct Layer {
    Op op = Op::Conv;
    layers::ConvGeometry geometry;
    RowMatrix<float> weight;  // out x (3*3*in)
    Vector<float> bias;
  };

  ConvStackExtractor(std::string name, std::vector<Layer> layers, Vector<float> mean = {}, Vector<float> stddev = {});

  /// conv3x3 -> ReLU -> conv3x3 with fixed-seed fan-in scaled weights.
  static ConvStackExtractor random(int in_channels, int width, std::uint64_t seed);

  /// VGG19 up to conv5_4 from a tree holding `features.<n>.weight` ([out,3,3,in])
  /// and `features.<n>.bias` for the 16 convolutions, n = 0..15. Inputs are
  /// normalized with the ImageNet mean and standard deviation.
  static ConvStackExtractor vgg19_54(const ParameterTree<float>& weights);

  std::string name() const override { return name_; }
  Image extract(const Image& img) const override;
  Image backward(const Image& img, const Image& grad_features) const override;

  const std::vector<Layer>& layers() const noexcept { return layers_; }

 private:
  Image normalize(const Image& img) const;
  std::vector<Image> forward_all(const Image& img) const;

  std::string name_;
  std::vector<Layer> layers_;
  Vector<float> mean_;
  Vector<float> stddev_;
};

/// Mean absolute difference between the features of pred and target.
double perceptual_loss(const Image& pred, const Image& target, const FeatureExtractor& fx);

/// weight * d(perceptual_loss)/d(pred); the unweighted loss goes to `loss`.
Image perceptual_grad(const Image& pred, const Image& target, const FeatureExtractor& fx, double weight = 1.0,
                      double* loss = nullptr);

}  // namespace modrestore
