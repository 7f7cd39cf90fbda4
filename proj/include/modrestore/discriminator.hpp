#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "modrestore/layers.hpp"
#include "modrestore/modulation.hpp"
#include "modrestore/parameter_tree.hpp"

namespace modrestore {

struct ConvStage {
  int out_channels = 64;
  int stride = 1;
  bool operator==(const ConvStage&) const = default;
};

inline constexpr int kDiscriminatorLayers = 10;
inline constexpr int kDiscriminatorFinalChannels = 512;

/// (64,1) (64,2) (128,1) (128,2) (256,1) (256,2) (512,1) (512,2) (512,1) (512,2)
std::vector<ConvStage> default_discriminator_plan();

struct DiscriminatorConfig {
  std::vector<ConvStage> plan = default_discriminator_plan();
  bool gfm_enabled = true;
  double leaky_slope = 0.2;
  int image_channels = 3;
  int patch_size = 64;
  int fc_hidden = 128;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

/// One GFM site after every batch norm (conv2..conv10); none when GFM is off.
SiteManifest discriminator_sites(const DiscriminatorConfig& cfg);

template <typename Scalar>
struct DiscriminatorParams {
  DiscriminatorConfig config;
  ParameterTree<Scalar> tree;

  SiteManifest sites() const { return discriminator_sites(config); }

  template <typename Other>
  DiscriminatorParams<Other> cast() const {
    return {config, tree.template cast<Other>()};
  }
};

enum class NormMode { Train, Eval };

template <typename Scalar>
DiscriminatorParams<Scalar> build_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  DiscriminatorParams<Scalar> p{cfg, {}};
  auto& t = p.tree;
  int in = cfg.image_channels;
  for (int i = 1; i <= kDiscriminatorLayers; ++i) {
    const auto& st = cfg.plan[i - 1];
    const auto id = std::to_string(i);
    fill_normal(t.add("conv" + id + ".weight", {st.out_channels, 3, 3, in}).values, std::sqrt(2.0 / (9.0 * in)), rng);
    if (i == 1) {
      t.add("conv1.bias", {st.out_channels});
    } else {
      t.add("bn" + id + ".weight", {st.out_channels}).values.setOnes();
      t.add("bn" + id + ".bias", {st.out_channels});
      t.add("bn" + id + ".running_mean", {st.out_channels}, ParamKind::Buffer);
      t.add("bn" + id + ".running_var", {st.out_channels}, ParamKind::Buffer).values.setOnes();
    }
    in = st.out_channels;
  }
  fill_normal(t.add("fc1.weight", {cfg.fc_hidden, in}).values, std::sqrt(2.0 / in), rng);
  t.add("fc1.bias", {cfg.fc_hidden});
  fill_normal(t.add("fc2.weight", {1, cfg.fc_hidden}).values, std::sqrt(1.0 / cfg.fc_hidden), rng);
  t.add("fc2.bias", {1});
  return p;
}

template <typename Scalar>
struct DiscriminatorTape {
  NormMode mode = NormMode::Train;
  std::vector<std::vector<FeatureMap<Scalar>>> conv_in;  // [layer][sample]
  std::vector<FeatureMap<Scalar>> first_pre;              // conv1 output before LeakyReLU
  std::vector<layers::BatchNormTape<Scalar>> bn;          // [layer], layer 0 unused
  std::vector<std::vector<FeatureMap<Scalar>>> bn_out;    // [layer][sample]
  std::vector<std::vector<FeatureMap<Scalar>>> pre_act;   // [layer][sample], after GFM
  Matrix<Scalar> pooled;                                  // channels x batch
  Matrix<Scalar> hidden_pre;                              // fc_hidden x batch
};

struct DiscriminatorGradRequest {
  bool params = true;
  bool mods = true;
  bool input = false;
};

template <typename Scalar>
struct DiscriminatorGrads {
  std::vector<DiscriminatorModulation<Scalar>> mods;  // per sample
  std::vector<FeatureMap<Scalar>> input;              // per sample
};

namespace discriminator_detail {

inline layers::ConvGeometry geometry(const DiscriminatorConfig& cfg, int layer) {
  const int in = layer == 1 ? cfg.image_channels : cfg.plan[layer - 2].out_channels;
  const auto& st = cfg.plan[layer - 1];
  return {in, st.out_channels, 3, st.stride, 1};
}

template <typename Scalar>
void check_inputs(const DiscriminatorParams<Scalar>& p, std::span<const FeatureMap<Scalar>> batch,
                  std::span<const DiscriminatorModulation<Scalar>> mods) {
  if (batch.empty()) throw ShapeError("discriminator: empty batch");
  const auto sites = p.sites();
  for (const auto& x : batch) {
    if (x.channels != p.config.image_channels || x.height != p.config.patch_size ||
        x.width != p.config.patch_size) {
      throw ShapeError("discriminator expects " + std::to_string(p.config.patch_size) + "x" +
                       std::to_string(p.config.patch_size) + "x" + std::to_string(p.config.image_channels) +
                       " patches");
    }
  }
  if (!sites.empty()) {
    if (mods.size() != batch.size()) throw ConfigError("discriminator: one modulation set per sample is required");
    for (const auto& m : mods) check_modulation(m, sites);
  }
}

}  // namespace discriminator_detail

/// Raw logits (one per patch). Train mode normalizes with batch statistics,
/// eval mode with the running statistics in `p`; running statistics are
/// never modified here (see update_running_stats).
template <typename Scalar>
Vector<Scalar> discriminator_forward(std::span<const FeatureMap<Scalar>> batch,
                                     std::span<const DiscriminatorModulation<Scalar>> mods,
                                     const DiscriminatorParams<Scalar>& p, NormMode mode,
                                     DiscriminatorTape<Scalar>* tape = nullptr) {
  using namespace discriminator_detail;
  discriminator_detail::check_inputs(p, batch, mods);
  const auto& cfg = p.config;
  const auto& t = p.tree;
  const Scalar slope = static_cast<Scalar>(cfg.leaky_slope);
  const bool modulate = cfg.gfm_enabled;
  const std::size_t n = batch.size();
  if (tape) {
    tape->mode = mode;
    tape->conv_in.assign(kDiscriminatorLayers + 1, {});
    tape->bn.assign(kDiscriminatorLayers + 1, {});
    tape->bn_out.assign(kDiscriminatorLayers + 1, {});
    tape->pre_act.assign(kDiscriminatorLayers + 1, {});
  }

  std::vector<FeatureMap<Scalar>> x(batch.begin(), batch.end());
  for (int i = 1; i <= kDiscriminatorLayers; ++i) {
    const auto id = std::to_string(i);
    const auto g = geometry(cfg, i);
    std::vector<FeatureMap<Scalar>> pre;
    if (i == 1) {
      pre = layers::conv2d<Scalar>(x, g, t.matrix("conv1.weight"), &t.values("conv1.bias"));
      if (tape) tape->first_pre = pre;
    } else {
      auto c = layers::conv2d<Scalar>(x, g, t.matrix("conv" + id + ".weight"), nullptr);
      auto normed = layers::batchnorm<Scalar>(c, t.values("bn" + id + ".weight"), t.values("bn" + id + ".bias"),
                                              t.values("bn" + id + ".running_mean"),
                                              t.values("bn" + id + ".running_var"), static_cast<Scalar>(cfg.bn_eps),
                                              mode == NormMode::Train, tape ? &tape->bn[i] : nullptr);
      if (modulate) {
        pre.reserve(n);
        for (std::size_t s = 0; s < n; ++s) pre.push_back(gfm(normed[s], mods[s].alpha[i - 2], mods[s].beta[i - 2]));
        if (tape) tape->bn_out[i] = std::move(normed);
      } else {
        pre = std::move(normed);
      }
      if (tape) tape->pre_act[i] = pre;
    }
    if (tape) tape->conv_in[i] = std::move(x);
    x.clear();
    for (auto& a : pre) {
      a.data = layers::leaky_relu(a.data, slope);
      x.push_back(std::move(a));
    }
  }

  const int channels = x.front().channels;
  Matrix<Scalar> pooled(channels, static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < n; ++s) pooled.col(s) = x[s].data.rowwise().mean();
  Matrix<Scalar> hidden = t.matrix("fc1.weight") * pooled;
  hidden.colwise() += t.values("fc1.bias");
  const Matrix<Scalar> act = layers::leaky_relu(hidden, slope);
  Vector<Scalar> logits = (t.matrix("fc2.weight") * act).transpose();
  logits.array() += t.values("fc2.bias")[0];
  if (tape) {
    tape->pooled = std::move(pooled);
    tape->hidden_pre = std::move(hidden);
  }
  return logits;
}

/// Backpropagates d(loss)/d(logits). Parameter gradients are accumulated
/// into `grads`; modulation and input gradients are returned per sample.
template <typename Scalar>
DiscriminatorGrads<Scalar> discriminator_backward(const DiscriminatorTape<Scalar>& tape,
                                                  const Vector<Scalar>& grad_logits,
                                                  std::span<const DiscriminatorModulation<Scalar>> mods,
                                                  const DiscriminatorParams<Scalar>& p, ParameterTree<Scalar>* grads,
                                                  DiscriminatorGradRequest request = {}) {
  using namespace discriminator_detail;
  const auto& cfg = p.config;
  const auto& t = p.tree;
  const Scalar slope = static_cast<Scalar>(cfg.leaky_slope);
  const auto n = static_cast<std::size_t>(grad_logits.size());
  const bool modulate = cfg.gfm_enabled;
  ParameterTree<Scalar> scratch;
  if (!request.params || !grads) {
    scratch = t.zeros_like();
    grads = &scratch;
  }

  DiscriminatorGrads<Scalar> out;
  if (request.mods && modulate) {
    for (std::size_t s = 0; s < n; ++s) {
      DiscriminatorModulation<Scalar> m;
      for (const auto& a : mods[s].alpha) m.alpha.push_back(Vector<Scalar>::Zero(a.size()));
      m.beta = m.alpha;
      out.mods.push_back(std::move(m));
    }
  }

  const Matrix<Scalar> act = layers::leaky_relu(tape.hidden_pre, slope);
  const Matrix<Scalar> dlogit = grad_logits.transpose();
  grads->matrix("fc2.weight").noalias() += dlogit * act.transpose();
  grads->values("fc2.bias")[0] += grad_logits.sum();
  const Matrix<Scalar> dact = t.matrix("fc2.weight").transpose() * dlogit;
  const Matrix<Scalar> dhidden = layers::leaky_relu_backward(tape.hidden_pre, dact, slope);
  grads->matrix("fc1.weight").noalias() += dhidden * tape.pooled.transpose();
  grads->values("fc1.bias") += dhidden.rowwise().sum();
  const Matrix<Scalar> dpooled = t.matrix("fc1.weight").transpose() * dhidden;

  std::vector<FeatureMap<Scalar>> dx;
  {
    const auto& last = tape.pre_act[kDiscriminatorLayers];
    for (std::size_t s = 0; s < n; ++s) {
      const auto& shape = last[s];
      Matrix<Scalar> g = dpooled.col(s).replicate(1, shape.pixels()) / static_cast<Scalar>(shape.pixels());
      dx.emplace_back(shape.channels, shape.height, shape.width, std::move(g));
    }
  }

  for (int i = kDiscriminatorLayers; i >= 1; --i) {
    const auto id = std::to_string(i);
    const auto g = geometry(cfg, i);
    const auto& pre = i == 1 ? tape.first_pre : tape.pre_act[i];
    std::vector<FeatureMap<Scalar>> dpre;
    dpre.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
      dpre.emplace_back(dx[s].channels, dx[s].height, dx[s].width,
                        layers::leaky_relu_backward(pre[s].data, dx[s].data, slope));
    }
    const bool need_input = i > 1 || request.input;
    if (i == 1) {
      dx = layers::conv2d_backward<Scalar>(tape.conv_in[1], dpre, g, t.matrix("conv1.weight"),
                                           grads->matrix("conv1.weight"), &grads->values("conv1.bias"), need_input);
      break;
    }
    std::vector<FeatureMap<Scalar>> dnormed;
    if (modulate) {
      dnormed.reserve(n);
      for (std::size_t s = 0; s < n; ++s) {
        if (!out.mods.empty()) {
          out.mods[s].alpha[i - 2] += dpre[s].data.cwiseProduct(tape.bn_out[i][s].data).rowwise().sum();
          out.mods[s].beta[i - 2] += dpre[s].data.rowwise().sum();
        }
        dnormed.emplace_back(dpre[s].channels, dpre[s].height, dpre[s].width,
                             mods[s].alpha[i - 2].asDiagonal() * dpre[s].data);
      }
    } else {
      dnormed = std::move(dpre);
    }
    auto dconv = layers::batchnorm_backward<Scalar>(tape.bn[i], dnormed, t.values("bn" + id + ".weight"),
                                                    grads->values("bn" + id + ".weight"),
                                                    grads->values("bn" + id + ".bias"));
    dx = layers::conv2d_backward<Scalar>(tape.conv_in[i], dconv, g, t.matrix("conv" + id + ".weight"),
                                         grads->matrix("conv" + id + ".weight"), nullptr, true);
  }
  if (request.input) out.input = std::move(dx);
  return out;
}

/// Folds the batch statistics recorded by a train-mode forward into the
/// running statistics (exponential average, unbiased variance).
template <typename Scalar>
void update_running_stats(DiscriminatorParams<Scalar>& p, const DiscriminatorTape<Scalar>& tape) {
  if (tape.mode != NormMode::Train) return;
  const Scalar mom = static_cast<Scalar>(p.config.bn_momentum);
  for (int i = 2; i <= kDiscriminatorLayers; ++i) {
    const auto id = std::to_string(i);
    const auto& bn = tape.bn[i];
    const Scalar m = static_cast<Scalar>(bn.count);
    const Scalar unbias = bn.count > 1 ? m / (m - Scalar(1)) : Scalar(1);
    auto& rm = p.tree.values("bn" + id + ".running_mean");
    auto& rv = p.tree.values("bn" + id + ".running_var");
    rm = (Scalar(1) - mom) * rm + mom * bn.batch_mean;
    rv = (Scalar(1) - mom) * rv + mom * unbias * bn.batch_var;
  }
}

}  // namespace modrestore
