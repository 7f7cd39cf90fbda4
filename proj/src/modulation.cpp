#include "modrestore/modulation.hpp"

namespace modrestore {

const char* to_string(SiteKind kind) noexcept {
  switch (kind) {
    case SiteKind::ResidualBlock:
      return "residual";
    case SiteKind::ScaleFusion:
      return "fusion";
    case SiteKind::FeatureAffine:
      return "affine";
  }
  return "unknown";
}

SiteKind site_kind_from_string(const std::string& s) {
  if (s == "residual") return SiteKind::ResidualBlock;
  if (s == "fusion") return SiteKind::ScaleFusion;
  if (s == "affine") return SiteKind::FeatureAffine;
  throw ConfigError("unknown modulation site kind '" + s + "'");
}

}  // namespace modrestore
