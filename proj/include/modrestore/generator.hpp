#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "modrestore/layers.hpp"
#include "modrestore/modulation.hpp"
#include "modrestore/parameter_tree.hpp"

namespace modrestore {

struct GeneratorConfig {
  int num_scales = 3;
  int blocks_per_side = 2;
  std::vector<int> channels{64, 128, 256};
  int image_channels = 3;

  void validate() const;
  /// Input height and width must be multiples of this.
  int spatial_multiple() const noexcept { return 1 << (num_scales - 1); }
  bool operator==(const GeneratorConfig&) const = default;
};

/// Sites in forward order: left blocks of each scale top-down, then the
/// bottom scale's right blocks, then for each scale bottom-up its fusion
/// junction followed by its right blocks.
SiteManifest generator_sites(const GeneratorConfig& cfg);

template <typename Scalar>
struct GeneratorParams {
  GeneratorConfig config;
  ParameterTree<Scalar> tree;

  SiteManifest sites() const { return generator_sites(config); }

  template <typename Other>
  GeneratorParams<Other> cast() const {
    return {config, tree.template cast<Other>()};
  }
};

namespace generator_detail {

inline std::string scale_prefix(int m) { return "s" + std::to_string(m); }
inline std::string block_prefix(int m, const char* side, int b) {
  return scale_prefix(m) + "." + side + "." + std::to_string(b);
}

inline layers::ConvGeometry body_conv(int channels) { return {channels, channels, 3, 1, 1}; }

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> upconv_weights(const ParameterTree<Scalar>& tree, const std::string& name) {
  const auto& e = tree.at(name);
  return {e.values.data(), 4 * e.shape[2], e.shape[3]};
}
template <typename Scalar>
Eigen::Map<RowMatrix<Scalar>> upconv_weights(ParameterTree<Scalar>& tree, const std::string& name) {
  auto& e = tree.at(name);
  return {e.values.data(), 4 * e.shape[2], e.shape[3]};
}

}  // namespace generator_detail

/// Builds the parameter tree for `cfg` with fan-in scaled normal weights.
/// The second convolution of every residual branch and the exit convolution
/// are scaled by 0.1 so a fresh network stays close to the global identity
/// connection.
template <typename Scalar>
GeneratorParams<Scalar> build_generator(const GeneratorConfig& cfg, std::uint64_t seed) {
  using namespace generator_detail;
  cfg.validate();
  std::mt19937_64 rng(seed);
  GeneratorParams<Scalar> p{cfg, {}};
  auto& t = p.tree;
  auto conv = [&](const std::string& name, std::vector<int> shape, double fan_in, double gain) {
    fill_normal(t.add(name + ".weight", std::move(shape)).values, gain / std::sqrt(fan_in), rng);
  };
  const int img = cfg.image_channels;
  const auto& ch = cfg.channels;

  conv("s1.entry", {ch[0], 3, 3, img}, 9.0 * img, std::sqrt(2.0));
  t.add("s1.entry.bias", {ch[0]});
  for (int m = 1; m <= cfg.num_scales; ++m) {
    const int c = ch[m - 1];
    if (m > 1) {
      const int prev = ch[m - 2];
      conv(scale_prefix(m) + ".down", {c, 2, 2, prev}, 4.0 * prev, 1.0);
      t.add(scale_prefix(m) + ".down.bias", {c});
      conv(scale_prefix(m) + ".up", {2, 2, prev, c}, c, 1.0);
      t.add(scale_prefix(m) + ".up.bias", {prev});
    }
    for (const char* side : {"left", "right"}) {
      for (int b = 0; b < cfg.blocks_per_side; ++b) {
        const auto pre = block_prefix(m, side, b);
        conv(pre + ".conv1", {c, 3, 3, c}, 9.0 * c, std::sqrt(2.0));
        t.add(pre + ".conv1.bias", {c});
        conv(pre + ".conv2", {c, 3, 3, c}, 9.0 * c, 0.1);
        t.add(pre + ".conv2.bias", {c});
      }
    }
  }
  conv("s1.exit", {img, 3, 3, ch[0]}, 9.0 * ch[0], 0.1);
  t.add("s1.exit.bias", {img});
  return p;
}

/// Residual branch f(x) = conv3x3(relu(conv3x3(x))) of the block at `prefix`.
template <typename Scalar>
FeatureMap<Scalar> residual_branch(const FeatureMap<Scalar>& x, const ParameterTree<Scalar>& tree,
                                   const std::string& prefix, FeatureMap<Scalar>* hidden_pre = nullptr) {
  const auto g = generator_detail::body_conv(x.channels);
  auto a = layers::conv2d<Scalar>(x, g, tree.matrix(prefix + ".conv1.weight"), &tree.values(prefix + ".conv1.bias"));
  auto f = layers::conv2d<Scalar>(layers::relu(a), g, tree.matrix(prefix + ".conv2.weight"),
                                  &tree.values(prefix + ".conv2.bias"));
  if (hidden_pre) *hidden_pre = std::move(a);
  return f;
}

/// Modulated residual block: x + w * f(x), w broadcast over space.
template <typename Scalar>
FeatureMap<Scalar> mrb_forward(const FeatureMap<Scalar>& x, const Vector<Scalar>& w, const ParameterTree<Scalar>& tree,
                               const std::string& prefix) {
  if (w.size() != x.channels) throw ShapeError("mrb_forward: weight length must equal the channel count");
  auto f = residual_branch(x, tree, prefix);
  Matrix<Scalar> out = x.data;
  out.noalias() += w.asDiagonal() * f.data;
  return FeatureMap<Scalar>(x.channels, x.height, x.width, std::move(out));
}

/// Activations recorded by a taped forward pass.
template <typename Scalar>
struct GeneratorTape {
  struct Block {
    FeatureMap<Scalar> input;
    FeatureMap<Scalar> hidden_pre;
    FeatureMap<Scalar> branch;
  };
  struct Junction {
    FeatureMap<Scalar> skip;   // input of the downscale conv
    FeatureMap<Scalar> inner;  // lower scale output, input of the upscale conv
    FeatureMap<Scalar> up;     // upscaled lower-scale contribution
  };
  FeatureMap<Scalar> image;
  FeatureMap<Scalar> exit_input;
  std::vector<Block> blocks;        // by site index (residual sites only)
  std::vector<Junction> junctions;  // by site index (fusion sites only)
};

namespace generator_detail {

template <typename Scalar>
class Pass {
 public:
  Pass(const GeneratorParams<Scalar>& p, const GeneratorModulation<Scalar>& mods)
      : cfg_(p.config), tree_(p.tree), mods_(mods), sites_(p.sites()) {
    check_modulation(mods, sites_);
    for (std::size_t i = 0; i < sites_.size(); ++i) index_[sites_[i].id] = i;
  }

  const SiteManifest& sites() const { return sites_; }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& img, GeneratorTape<Scalar>* tape) {
    tape_ = tape;
    if (tape_) {
      tape_->image = img;
      tape_->blocks.assign(sites_.size(), {});
      tape_->junctions.assign(sites_.size(), {});
    }
    const int c1 = cfg_.channels[0];
    auto x = layers::conv2d<Scalar>(img, {img.channels, c1, 3, 1, 1}, tree_.matrix("s1.entry.weight"),
                                    &tree_.values("s1.entry.bias"));
    auto h = scale_forward(1, std::move(x));
    auto out = layers::conv2d<Scalar>(h, {c1, img.channels, 3, 1, 1}, tree_.matrix("s1.exit.weight"),
                                      &tree_.values("s1.exit.bias"));
    if (tape_) tape_->exit_input = std::move(h);
    out.data += img.data;
    return out;
  }

  void backward(const GeneratorTape<Scalar>& tape, const FeatureMap<Scalar>& grad_out, ParameterTree<Scalar>& grads,
                GeneratorModulation<Scalar>* grad_mods) {
    ctape_ = &tape;
    grads_ = &grads;
    grad_mods_ = grad_mods;
    if (grad_mods_) {
      grad_mods_->weights.clear();
      for (const auto& s : sites_) grad_mods_->weights.push_back(Vector<Scalar>::Zero(s.channels));
    }
    const int c1 = cfg_.channels[0];
    const int img_c = tape.image.channels;
    auto dh = layers::conv2d_backward<Scalar>(tape.exit_input, grad_out, {c1, img_c, 3, 1, 1},
                                              tree_.matrix("s1.exit.weight"), grads.matrix("s1.exit.weight"),
                                              &grads.values("s1.exit.bias"));
    auto dx = scale_backward(1, std::move(dh));
    layers::conv2d_backward<Scalar>(tape.image, dx, {img_c, c1, 3, 1, 1}, tree_.matrix("s1.entry.weight"),
                                    grads.matrix("s1.entry.weight"), &grads.values("s1.entry.bias"), false);
  }

 private:
  FeatureMap<Scalar> block_forward(int m, const char* side, int b, FeatureMap<Scalar> x) {
    const auto pre = block_prefix(m, side, b);
    const std::size_t site = index_.at(pre);
    FeatureMap<Scalar> hidden;
    auto f = residual_branch(x, tree_, pre, tape_ ? &hidden : nullptr);
    Matrix<Scalar> out = x.data;
    out.noalias() += mods_.weights[site].asDiagonal() * f.data;
    FeatureMap<Scalar> y(x.channels, x.height, x.width, std::move(out));
    if (tape_) tape_->blocks[site] = {std::move(x), std::move(hidden), std::move(f)};
    return y;
  }

  FeatureMap<Scalar> scale_forward(int m, FeatureMap<Scalar> h) {
    for (int b = 0; b < cfg_.blocks_per_side; ++b) h = block_forward(m, "left", b, std::move(h));
    if (m < cfg_.num_scales) {
      const int c = cfg_.channels[m - 1];
      const int lower = cfg_.channels[m];
      const auto down = scale_prefix(m + 1);
      auto d = layers::conv2d<Scalar>(h, {c, lower, 2, 2, 0}, tree_.matrix(down + ".down.weight"),
                                      &tree_.values(down + ".down.bias"));
      auto inner = scale_forward(m + 1, std::move(d));
      auto up = layers::upconv2x2<Scalar>(inner, upconv_weights(tree_, down + ".up.weight"),
                                          tree_.values(down + ".up.bias"));
      const std::size_t site = index_.at(scale_prefix(m) + ".fuse");
      auto fused = msf_fuse(h, up, mods_.weights[site]);
      if (tape_) tape_->junctions[site] = {std::move(h), std::move(inner), std::move(up)};
      h = std::move(fused);
    }
    for (int b = 0; b < cfg_.blocks_per_side; ++b) h = block_forward(m, "right", b, std::move(h));
    return h;
  }

  FeatureMap<Scalar> block_backward(int m, const char* side, int b, FeatureMap<Scalar> dy) {
    const auto pre = block_prefix(m, side, b);
    const std::size_t site = index_.at(pre);
    const auto& rec = ctape_->blocks[site];
    const auto& w = mods_.weights[site];
    if (grad_mods_) grad_mods_->weights[site] += dy.data.cwiseProduct(rec.branch.data).rowwise().sum();
    FeatureMap<Scalar> df(dy.channels, dy.height, dy.width, w.asDiagonal() * dy.data);
    const auto g = body_conv(dy.channels);
    auto dr = layers::conv2d_backward<Scalar>(layers::relu(rec.hidden_pre), df, g,
                                              tree_.matrix(pre + ".conv2.weight"),
                                              grads_->matrix(pre + ".conv2.weight"), &grads_->values(pre + ".conv2.bias"));
    auto da = layers::relu_backward(rec.hidden_pre, std::move(dr));
    auto dx = layers::conv2d_backward<Scalar>(rec.input, da, g, tree_.matrix(pre + ".conv1.weight"),
                                              grads_->matrix(pre + ".conv1.weight"),
                                              &grads_->values(pre + ".conv1.bias"));
    dx.data += dy.data;
    return dx;
  }

  FeatureMap<Scalar> scale_backward(int m, FeatureMap<Scalar> dh) {
    for (int b = cfg_.blocks_per_side - 1; b >= 0; --b) dh = block_backward(m, "right", b, std::move(dh));
    if (m < cfg_.num_scales) {
      const int c = cfg_.channels[m - 1];
      const int lower = cfg_.channels[m];
      const auto down = scale_prefix(m + 1);
      const std::size_t site = index_.at(scale_prefix(m) + ".fuse");
      const auto& rec = ctape_->junctions[site];
      const auto& w = mods_.weights[site];
      if (grad_mods_) grad_mods_->weights[site] += dh.data.cwiseProduct(rec.up.data).rowwise().sum();
      FeatureMap<Scalar> dup(dh.channels, dh.height, dh.width, w.asDiagonal() * dh.data);
      auto dinner = layers::upconv2x2_backward<Scalar>(rec.inner, dup, upconv_weights(tree_, down + ".up.weight"),
                                                       upconv_weights(*grads_, down + ".up.weight"),
                                                       grads_->values(down + ".up.bias"));
      auto dd = scale_backward(m + 1, std::move(dinner));
      auto dskip = layers::conv2d_backward<Scalar>(rec.skip, dd, {c, lower, 2, 2, 0},
                                                   tree_.matrix(down + ".down.weight"),
                                                   grads_->matrix(down + ".down.weight"),
                                                   &grads_->values(down + ".down.bias"));
      dh.data += dskip.data;
    }
    for (int b = cfg_.blocks_per_side - 1; b >= 0; --b) dh = block_backward(m, "left", b, std::move(dh));
    return dh;
  }

  const GeneratorConfig& cfg_;
  const ParameterTree<Scalar>& tree_;
  const GeneratorModulation<Scalar>& mods_;
  SiteManifest sites_;
  std::unordered_map<std::string, std::size_t> index_;
  GeneratorTape<Scalar>* tape_ = nullptr;
  const GeneratorTape<Scalar>* ctape_ = nullptr;
  ParameterTree<Scalar>* grads_ = nullptr;
  GeneratorModulation<Scalar>* grad_mods_ = nullptr;
};

}  // namespace generator_detail

/// Full modulated Unet forward with the global input-to-output connection.
/// Output is not clamped.
template <typename Scalar>
FeatureMap<Scalar> generator_forward(const FeatureMap<Scalar>& img, const GeneratorModulation<Scalar>& mods,
                                     const GeneratorParams<Scalar>& p, GeneratorTape<Scalar>* tape = nullptr) {
  if (img.channels != p.config.image_channels) throw ShapeError("generator: image channel count mismatch");
  const int mult = p.config.spatial_multiple();
  if (img.height % mult != 0 || img.width % mult != 0) {
    throw ShapeError("generator: height and width must be multiples of " + std::to_string(mult));
  }
  generator_detail::Pass<Scalar> pass(p, mods);
  return pass.forward(img, tape);
}

/// Accumulates d(loss)/d(params) into `grads` (same manifest as p.tree) and,
/// when requested, writes d(loss)/d(w_i) into `grad_mods`.
template <typename Scalar>
void generator_backward(const GeneratorTape<Scalar>& tape, const FeatureMap<Scalar>& grad_out,
                        const GeneratorModulation<Scalar>& mods, const GeneratorParams<Scalar>& p,
                        ParameterTree<Scalar>& grads, GeneratorModulation<Scalar>* grad_mods = nullptr) {
  generator_detail::Pass<Scalar> pass(p, mods);
  pass.backward(tape, grad_out, grads, grad_mods);
}

}  // namespace modrestore
