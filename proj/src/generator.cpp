#include "modrestore/generator.hpp"

namespace modrestore {

void GeneratorConfig::validate() const {
  if (num_scales < 1 || num_scales > 3) throw ConfigError("generator num_scales must be 1, 2 or 3");
  if (blocks_per_side < 1) throw ConfigError("generator blocks_per_side must be positive");
  if (static_cast<int>(channels.size()) != num_scales) {
    throw ConfigError("generator needs one channel width per scale");
  }
  for (int c : channels) {
    if (c < 1) throw ConfigError("generator channel widths must be positive");
  }
  if (image_channels != 1 && image_channels != 3) throw ConfigError("generator image_channels must be 1 or 3");
}

SiteManifest generator_sites(const GeneratorConfig& cfg) {
  using generator_detail::block_prefix;
  using generator_detail::scale_prefix;
  cfg.validate();
  SiteManifest sites;
  auto blocks = [&](int m, const char* side) {
    for (int b = 0; b < cfg.blocks_per_side; ++b) {
      sites.push_back({block_prefix(m, side, b), cfg.channels[m - 1], SiteKind::ResidualBlock});
    }
  };
  for (int m = 1; m <= cfg.num_scales; ++m) blocks(m, "left");
  blocks(cfg.num_scales, "right");
  for (int m = cfg.num_scales - 1; m >= 1; --m) {
    sites.push_back({scale_prefix(m) + ".fuse", cfg.channels[m - 1], SiteKind::ScaleFusion});
    blocks(m, "right");
  }
  return sites;
}

}  // namespace modrestore
