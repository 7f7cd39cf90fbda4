#include "modrestore/discriminator.hpp"

namespace modrestore {

std::vector<ConvStage> default_discriminator_plan() {
  return {{64, 1}, {64, 2}, {128, 1}, {128, 2}, {256, 1}, {256, 2}, {512, 1}, {512, 2}, {512, 1}, {512, 2}};
}

void DiscriminatorConfig::validate() const {
  if (static_cast<int>(plan.size()) != kDiscriminatorLayers) {
    throw ConfigError("discriminator plan must have exactly 10 convolution layers");
  }
  for (const auto& st : plan) {
    if (st.out_channels < 1) throw ConfigError("discriminator channel counts must be positive");
    if (st.stride != 1 && st.stride != 2) throw ConfigError("discriminator strides must be 1 or 2");
  }
  if (plan.back().out_channels != kDiscriminatorFinalChannels) {
    throw ConfigError("discriminator final convolution must have 512 channels");
  }
  if (image_channels != 1 && image_channels != 3) throw ConfigError("discriminator image_channels must be 1 or 3");
  if (patch_size < 1) throw ConfigError("discriminator patch_size must be positive");
  if (fc_hidden < 1) throw ConfigError("discriminator fc_hidden must be positive");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ConfigError("discriminator leaky slope must be in [0,1)");
}

SiteManifest discriminator_sites(const DiscriminatorConfig& cfg) {
  cfg.validate();
  SiteManifest sites;
  if (!cfg.gfm_enabled) return sites;
  for (int i = 2; i <= kDiscriminatorLayers; ++i) {
    sites.push_back({"conv" + std::to_string(i), cfg.plan[i - 1].out_channels, SiteKind::FeatureAffine});
  }
  return sites;
}

}  // namespace modrestore
