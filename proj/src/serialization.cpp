#include "modrestore/serialization.hpp"

namespace modrestore {

void to_json(Json& j, const GeneratorConfig& c) {
  j = Json{{"num_scales", c.num_scales},
           {"blocks_per_side", c.blocks_per_side},
           {"channels", c.channels},
           {"image_channels", c.image_channels}};
}

void from_json(const Json& j, GeneratorConfig& c) {
  c = GeneratorConfig{};
  c.num_scales = j.value("num_scales", c.num_scales);
  c.blocks_per_side = j.value("blocks_per_side", c.blocks_per_side);
  c.channels = j.value("channels", c.channels);
  c.image_channels = j.value("image_channels", c.image_channels);
}

void to_json(Json& j, const ConvStage& s) { j = Json::array({s.out_channels, s.stride}); }

void from_json(const Json& j, ConvStage& s) {
  s.out_channels = j.at(0).get<int>();
  s.stride = j.at(1).get<int>();
}

void to_json(Json& j, const DiscriminatorConfig& c) {
  j = Json{{"plan", c.plan},
           {"gfm_enabled", c.gfm_enabled},
           {"leaky_slope", c.leaky_slope},
           {"image_channels", c.image_channels},
           {"patch_size", c.patch_size},
           {"fc_hidden", c.fc_hidden},
           {"bn_momentum", c.bn_momentum},
           {"bn_eps", c.bn_eps}};
}

void from_json(const Json& j, DiscriminatorConfig& c) {
  c = DiscriminatorConfig{};
  c.plan = j.value("plan", c.plan);
  c.gfm_enabled = j.value("gfm_enabled", c.gfm_enabled);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.image_channels = j.value("image_channels", c.image_channels);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.fc_hidden = j.value("fc_hidden", c.fc_hidden);
  c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
  c.bn_eps = j.value("bn_eps", c.bn_eps);
}

void to_json(Json& j, const DegradationSpec& s) { j = Json{{"blur", s.blur_r}, {"sigma", s.noise_sigma}}; }

void from_json(const Json& j, DegradationSpec& s) {
  s.blur_r = j.at("blur").get<double>();
  s.noise_sigma = j.at("sigma").get<double>();
}

void to_json(Json& j, const ModulationSite& s) {
  j = Json{{"id", s.id}, {"channels", s.channels}, {"kind", to_string(s.kind)}};
}

void from_json(const Json& j, ModulationSite& s) {
  s.id = j.at("id").get<std::string>();
  s.channels = j.at("channels").get<int>();
  s.kind = site_kind_from_string(j.at("kind").get<std::string>());
}

void to_json(Json& j, const ConditionVector& z) { j = Json::array({z.z[0], z.z[1]}); }

void from_json(const Json& j, ConditionVector& z) {
  if (!j.is_array() || j.size() != 2) throw InvalidCondition("condition vector must be an array of two numbers");
  z.z = {j.at(0).get<double>(), j.at(1).get<double>()};
}

}  // namespace modrestore
