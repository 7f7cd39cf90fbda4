#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "modrestore/degradation.hpp"
#include "modrestore/modulation.hpp"
#include "modrestore/parameter_tree.hpp"

namespace modrestore {

/// z = [blur code, noise code], each in [0,1].
struct ConditionVector {
  std::array<double, 2> z{0.0, 0.0};

  double blur() const noexcept { return z[0]; }
  double noise() const noexcept { return z[1]; }
  void validate() const;
  bool operator==(const ConditionVector&) const = default;

  template <typename Scalar>
  Eigen::Matrix<Scalar, 2, 1> as_vector() const {
    return {static_cast<Scalar>(z[0]), static_cast<Scalar>(z[1])};
  }
};

/// z = [r / 4, sigma / 50].
ConditionVector encode_condition(const DegradationSpec& spec);
/// (4 z[0], 50 z[1]).
DegradationSpec decode_condition(const ConditionVector& z);

enum class ConditionTarget { Generator, Discriminator };

/// Per-site affine maps from z to modulation parameters. Generator nets hold
/// `<site>.w.{weight,bias}`; discriminator nets hold `<site>.alpha.*` and
/// `<site>.beta.*`. Weights are [channels, 2].
template <typename Scalar>
struct ConditionNetParams {
  ConditionTarget target = ConditionTarget::Generator;
  SiteManifest sites;
  ParameterTree<Scalar> tree;

  template <typename Other>
  ConditionNetParams<Other> cast() const {
    return {target, sites, tree.template cast<Other>()};
  }
};

/// Weights start small and random; generator biases start at 1 (vanilla
/// residual behavior), discriminator alpha biases at 1 and beta biases at 0.
template <typename Scalar>
ConditionNetParams<Scalar> build_condition_net(ConditionTarget target, const SiteManifest& sites, std::uint64_t seed,
                                               double weight_std = 0.01) {
  std::mt19937_64 rng(seed);
  ConditionNetParams<Scalar> p{target, sites, {}};
  auto affine = [&](const std::string& name, int channels, Scalar bias) {
    fill_normal(p.tree.add(name + ".weight", {channels, 2}).values, weight_std, rng);
    p.tree.add(name + ".bias", {channels}).values.setConstant(bias);
  };
  for (const auto& s : sites) {
    if (target == ConditionTarget::Generator) {
      affine(s.id + ".w", s.channels, Scalar(1));
    } else {
      affine(s.id + ".alpha", s.channels, Scalar(1));
      affine(s.id + ".beta", s.channels, Scalar(0));
    }
  }
  return p;
}

namespace condition_detail {

template <typename Scalar>
void check_target(const ConditionNetParams<Scalar>& p, ConditionTarget expected) {
  if (p.target != expected) throw ConfigError("condition network targets the wrong base network");
}

template <typename Scalar>
Vector<Scalar> affine(const ParameterTree<Scalar>& tree, const std::string& name, const Eigen::Matrix<Scalar, 2, 1>& z) {
  Vector<Scalar> out = tree.values(name + ".bias");
  out.noalias() += tree.matrix(name + ".weight") * z;
  return out;
}

template <typename Scalar>
void affine_backward(ParameterTree<Scalar>& grads, const std::string& name, const Eigen::Matrix<Scalar, 2, 1>& z,
                     const Vector<Scalar>& grad_out) {
  grads.matrix(name + ".weight").noalias() += grad_out * z.transpose();
  grads.values(name + ".bias") += grad_out;
}

}  // namespace condition_detail

/// w_i = W_i z + b_i for every generator site.
template <typename Scalar>
GeneratorModulation<Scalar> condition_forward_g(const ConditionVector& z, const ConditionNetParams<Scalar>& p) {
  condition_detail::check_target(p, ConditionTarget::Generator);
  const auto zv = z.template as_vector<Scalar>();
  GeneratorModulation<Scalar> out;
  for (const auto& s : p.sites) out.weights.push_back(condition_detail::affine(p.tree, s.id + ".w", zv));
  return out;
}

/// alpha_i = A_i z + a_i, beta_i = B_i z + b_i for every discriminator site.
template <typename Scalar>
DiscriminatorModulation<Scalar> condition_forward_d(const ConditionVector& z, const ConditionNetParams<Scalar>& p) {
  condition_detail::check_target(p, ConditionTarget::Discriminator);
  const auto zv = z.template as_vector<Scalar>();
  DiscriminatorModulation<Scalar> out;
  for (const auto& s : p.sites) {
    out.alpha.push_back(condition_detail::affine(p.tree, s.id + ".alpha", zv));
    out.beta.push_back(condition_detail::affine(p.tree, s.id + ".beta", zv));
  }
  return out;
}

template <typename Scalar>
void condition_backward_g(const ConditionVector& z, const ConditionNetParams<Scalar>& p,
                          const GeneratorModulation<Scalar>& grad_mods, ParameterTree<Scalar>& grads) {
  check_modulation(grad_mods, p.sites);
  const auto zv = z.template as_vector<Scalar>();
  for (std::size_t i = 0; i < p.sites.size(); ++i) {
    condition_detail::affine_backward(grads, p.sites[i].id + ".w", zv, grad_mods.weights[i]);
  }
}

template <typename Scalar>
void condition_backward_d(const ConditionVector& z, const ConditionNetParams<Scalar>& p,
                          const DiscriminatorModulation<Scalar>& grad_mods, ParameterTree<Scalar>& grads) {
  check_modulation(grad_mods, p.sites);
  const auto zv = z.template as_vector<Scalar>();
  for (std::size_t i = 0; i < p.sites.size(); ++i) {
    condition_detail::affine_backward(grads, p.sites[i].id + ".alpha", zv, grad_mods.alpha[i]);
    condition_detail::affine_backward(grads, p.sites[i].id + ".beta", zv, grad_mods.beta[i]);
  }
}

}  // namespace modrestore
