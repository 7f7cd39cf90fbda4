#pragma once

#include <string>
#include <vector>

#include "modrestore/tensor.hpp"

namespace modrestore {

enum class SiteKind {
  ResidualBlock,  // x + w * f(x)
  ScaleFusion,    // x_m + w * up(lower scale)
  FeatureAffine,  // alpha * x + beta, after batch norm
};

const char* to_string(SiteKind kind) noexcept;
SiteKind site_kind_from_string(const std::string& s);

/// One place in a base network where condition-derived parameters act.
/// Sites are listed in forward-pass encounter order.
struct ModulationSite {
  std::string id;
  int channels = 0;
  SiteKind kind = SiteKind::ResidualBlock;

  bool operator==(const ModulationSite&) const = default;
};

using SiteManifest = std::vector<ModulationSite>;

/// Per-site channel weights w_i for the generator.
template <typename Scalar>
struct GeneratorModulation {
  std::vector<Vector<Scalar>> weights;

  static GeneratorModulation constant(const SiteManifest& sites, Scalar value) {
    GeneratorModulation m;
    for (const auto& s : sites) m.weights.push_back(Vector<Scalar>::Constant(s.channels, value));
    return m;
  }

  std::size_t size() const noexcept { return weights.size(); }
  bool operator==(const GeneratorModulation&) const = default;
};

/// Per-site (alpha_i, beta_i) pairs for the discriminator.
template <typename Scalar>
struct DiscriminatorModulation {
  std::vector<Vector<Scalar>> alpha;
  std::vector<Vector<Scalar>> beta;

  static DiscriminatorModulation identity(const SiteManifest& sites) {
    DiscriminatorModulation m;
    for (const auto& s : sites) {
      m.alpha.push_back(Vector<Scalar>::Ones(s.channels));
      m.beta.push_back(Vector<Scalar>::Zero(s.channels));
    }
    return m;
  }

  std::size_t size() const noexcept { return alpha.size(); }
  bool operator==(const DiscriminatorModulation&) const = default;
};

template <typename Scalar>
void check_modulation(const GeneratorModulation<Scalar>& mods, const SiteManifest& sites) {
  if (mods.weights.size() != sites.size()) {
    throw ConfigError("generator modulation has " + std::to_string(mods.weights.size()) + " sites, network declares " +
                      std::to_string(sites.size()));
  }
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (mods.weights[i].size() != sites[i].channels) {
      throw ShapeError("modulation weight for site '" + sites[i].id + "' has wrong length");
    }
  }
}

template <typename Scalar>
void check_modulation(const DiscriminatorModulation<Scalar>& mods, const SiteManifest& sites) {
  if (mods.alpha.size() != sites.size() || mods.beta.size() != sites.size()) {
    throw ConfigError("discriminator modulation has " + std::to_string(mods.alpha.size()) +
                      " sites, network declares " + std::to_string(sites.size()));
  }
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (mods.alpha[i].size() != sites[i].channels || mods.beta[i].size() != sites[i].channels) {
      throw ShapeError("modulation affine for site '" + sites[i].id + "' has wrong length");
    }
  }
}

/// Global feature modulation: alpha * x + beta per channel, broadcast over space.
template <typename Scalar>
FeatureMap<Scalar> gfm(const FeatureMap<Scalar>& x, const Vector<Scalar>& alpha, const Vector<Scalar>& beta) {
  if (alpha.size() != x.channels || beta.size() != x.channels) {
    throw ShapeError("gfm: alpha/beta length must equal the channel count");
  }
  Matrix<Scalar> y = alpha.asDiagonal() * x.data;
  y.colwise() += beta;
  return FeatureMap<Scalar>(x.channels, x.height, x.width, std::move(y));
}

/// Modulated scale fusion: x_m + w * y, with y the upscaled lower-scale output.
template <typename Scalar>
FeatureMap<Scalar> msf_fuse(const FeatureMap<Scalar>& x_m, const FeatureMap<Scalar>& y, const Vector<Scalar>& w) {
  require_same_shape(x_m, y, "msf_fuse");
  if (w.size() != x_m.channels) throw ShapeError("msf_fuse: weight length must equal the channel count");
  Matrix<Scalar> out = x_m.data;
  out.noalias() += w.asDiagonal() * y.data;
  return FeatureMap<Scalar>(x_m.channels, x_m.height, x_m.width, std::move(out));
}

}  // namespace modrestore
