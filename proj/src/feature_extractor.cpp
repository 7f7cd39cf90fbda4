#include "modrestore/feature_extractor.hpp"

#include <random>

namespace modrestore {

namespace {

Image maxpool2x2(const Image& x) {
  Image out(x.channels, x.height / 2, x.width / 2);
  for (int y = 0; y < out.height; ++y) {
    for (int xx = 0; xx < out.width; ++xx) {
      auto dst = out.data.col(y * out.width + xx);
      dst = x.data.col(2 * y * x.width + 2 * xx);
      dst = dst.cwiseMax(x.data.col(2 * y * x.width + 2 * xx + 1));
      dst = dst.cwiseMax(x.data.col((2 * y + 1) * x.width + 2 * xx));
      dst = dst.cwiseMax(x.data.col((2 * y + 1) * x.width + 2 * xx + 1));
    }
  }
  return out;
}

// Routes each output gradient to the first input of its window holding the max.
Image maxpool2x2_backward(const Image& x, const Image& grad) {
  Image dx(x.channels, x.height, x.width);
  for (int y = 0; y < grad.height; ++y) {
    for (int xx = 0; xx < grad.width; ++xx) {
      const int cols[4] = {2 * y * x.width + 2 * xx, 2 * y * x.width + 2 * xx + 1, (2 * y + 1) * x.width + 2 * xx,
                           (2 * y + 1) * x.width + 2 * xx + 1};
      for (int c = 0; c < x.channels; ++c) {
        int best = cols[0];
        for (int k = 1; k < 4; ++k) {
          if (x.data(c, cols[k]) > x.data(c, best)) best = cols[k];
        }
        dx.data(c, best) += grad.data(c, y * grad.width + xx);
      }
    }
  }
  return dx;
}

}  // namespace

ConvStackExtractor::ConvStackExtractor(std::string name, std::vector<Layer> layers, Vector<float> mean,
                                       Vector<float> stddev)
    : name_(std::move(name)), layers_(std::move(layers)), mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() != stddev_.size()) throw ConfigError("extractor normalization mean/std length mismatch");
}

ConvStackExtractor ConvStackExtractor::random(int in_channels, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto conv = [&](int in, int out) {
    Layer l;
    l.op = Op::Conv;
    l.geometry = {in, out, 3, 1, 1};
    Vector<float> w(static_cast<Eigen::Index>(out) * 9 * in);
    fill_normal(w, std::sqrt(2.0 / (9.0 * in)), rng);
    l.weight = Eigen::Map<RowMatrix<float>>(w.data(), out, 9 * in);
    l.bias = Vector<float>::Zero(out);
    return l;
  };
  std::vector<Layer> stack;
  stack.push_back(conv(in_channels, width));
  stack.push_back(Layer{Op::Relu, {}, {}, {}});
  stack.push_back(conv(width, width));
  return ConvStackExtractor("random-conv", std::move(stack));
}

ConvStackExtractor ConvStackExtractor::vgg19_54(const ParameterTree<float>& weights) {
  // Channel widths of the 16 convolutions; a max pool closes blocks 1-4.
  const int widths[16] = {64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512};
  const int block_end[4] = {1, 3, 7, 11};
  std::vector<Layer> stack;
  int in = 3;
  for (int i = 0; i < 16; ++i) {
    const auto prefix = "features." + std::to_string(i);
    const auto& w = weights.at(prefix + ".weight");
    if (w.shape != std::vector<int>{widths[i], 3, 3, in}) {
      throw ConfigError("VGG weight '" + prefix + ".weight' has an unexpected shape");
    }
    Layer l;
    l.op = Op::Conv;
    l.geometry = {in, widths[i], 3, 1, 1};
    l.weight = Eigen::Map<const RowMatrix<float>>(w.values.data(), widths[i], 9 * in);
    l.bias = weights.values(prefix + ".bias");
    stack.push_back(std::move(l));
    if (i == 15) break;  // conv5_4 output, before its activation
    stack.push_back(Layer{Op::Relu, {}, {}, {}});
    for (int e : block_end) {
      if (e == i) stack.push_back(Layer{Op::MaxPool, {}, {}, {}});
    }
    in = widths[i];
  }
  Vector<float> mean(3), stddev(3);
  mean << 0.485f, 0.456f, 0.406f;
  stddev << 0.229f, 0.224f, 0.225f;
  return ConvStackExtractor("vgg19-54", std::move(stack), std::move(mean), std::move(stddev));
}

Image ConvStackExtractor::normalize(const Image& img) const {
  if (mean_.size() == 0) return img;
  if (mean_.size() != img.channels) throw ConfigError("extractor normalization expects a different channel count");
  Image out = img;
  out.data.colwise() -= mean_;
  out.data = stddev_.cwiseInverse().asDiagonal() * out.data;
  return out;
}

std::vector<Image> ConvStackExtractor::forward_all(const Image& img) const {
  std::vector<Image> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(normalize(img));
  for (const auto& l : layers_) {
    const Image& x = acts.back();
    switch (l.op) {
      case Op::Conv:
        acts.push_back(layers::conv2d<float>(x, l.geometry, l.weight, &l.bias));
        break;
      case Op::Relu:
        acts.push_back(layers::relu(x));
        break;
      case Op::MaxPool:
        if (x.height < 2 || x.width < 2) throw ShapeError("extractor input too small for max pooling");
        acts.push_back(maxpool2x2(x));
        break;
    }
  }
  return acts;
}

Image ConvStackExtractor::extract(const Image& img) const { return std::move(forward_all(img).back()); }

Image ConvStackExtractor::backward(const Image& img, const Image& grad_features) const {
  const auto acts = forward_all(img);
  Image g = grad_features;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    const Image& x = acts[i];
    switch (l.op) {
      case Op::Conv: {
        RowMatrix<float> dw = RowMatrix<float>::Zero(l.weight.rows(), l.weight.cols());
        g = layers::conv2d_backward<float>(x, g, l.geometry, l.weight, dw, nullptr, true);
        break;
      }
      case Op::Relu:
        g = layers::relu_backward(x, std::move(g));
        break;
      case Op::MaxPool:
        g = maxpool2x2_backward(x, g);
        break;
    }
  }
  if (stddev_.size() != 0) g.data = stddev_.cwiseInverse().asDiagonal() * g.data;
  return g;
}

double perceptual_loss(const Image& pred, const Image& target, const FeatureExtractor& fx) {
  require_same_shape(pred, target, "perceptual_loss");
  const Image fp = fx.extract(pred);
  const Image ft = fx.extract(target);
  return static_cast<double>((fp.data - ft.data).cwiseAbs().sum()) / static_cast<double>(fp.size());
}

Image perceptual_grad(const Image& pred, const Image& target, const FeatureExtractor& fx, double weight,
                      double* loss) {
  require_same_shape(pred, target, "perceptual_grad");
  const Image fp = fx.extract(pred);
  const Image ft = fx.extract(target);
  const Matrix<float> diff = fp.data - ft.data;
  const auto n = static_cast<double>(diff.size());
  if (loss) *loss = static_cast<double>(diff.cwiseAbs().sum()) / n;
  const auto scale = static_cast<float>(weight / n);
  Image g(fp.channels, fp.height, fp.width,
          diff.unaryExpr([scale](float d) { return d > 0.f ? scale : (d < 0.f ? -scale : 0.f); }));
  return fx.backward(pred, g);
}

}  // namespace modrestore
