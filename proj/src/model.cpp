#include "modrestore/model.hpp"

namespace modrestore {

void RestorationModel::validate() const {
  generator.config.validate();
  if (condition) {
    if (condition->target != ConditionTarget::Generator) {
      throw ConfigError("restoration model needs a generator condition network");
    }
    if (condition->sites != generator.sites()) {
      throw ConfigError("condition network sites do not match the generator's site manifest");
    }
  }
}

GeneratorModulation<float> RestorationModel::modulation(const ConditionVector& z) const {
  z.validate();
  if (!condition) return GeneratorModulation<float>::constant(generator.sites(), 1.0f);
  if (condition->sites != generator.sites()) {
    throw ConfigError("condition network sites do not match the generator's site manifest");
  }
  return condition_forward_g(z, *condition);
}

Image RestorationModel::forward(const Image& img, const ConditionVector& z) const {
  return generator_forward(img, modulation(z), generator);
}

Image RestorationModel::restore(const Image& img, const ConditionVector& z) const {
  validate_image(img);
  const Image padded = pad_to_multiple(img, generator.config.spatial_multiple());
  Image out = forward(padded, z);
  if (out.height != img.height || out.width != img.width) out = crop(out, 0, 0, img.height, img.width);
  return clamp01(std::move(out));
}

void save_model_dir(const std::filesystem::path& dir, const RestorationModel& model) {
  model.validate();
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / kGeneratorFile, to_checkpoint(model.generator));
  if (model.condition) {
    save_checkpoint(dir / kConditionGFile, to_checkpoint(*model.condition));
  } else {
    std::filesystem::remove(dir / kConditionGFile);
  }
}

RestorationModel load_model_files(const std::filesystem::path& generator,
                                  const std::optional<std::filesystem::path>& condition) {
  RestorationModel m{generator_from_checkpoint(load_checkpoint(generator)), std::nullopt};
  if (condition) m.condition = condition_from_checkpoint(load_checkpoint(*condition));
  m.validate();
  return m;
}

RestorationModel load_model_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / kGeneratorFile)) {
    throw DataError("no " + std::string(kGeneratorFile) + " in " + dir.string());
  }
  std::optional<std::filesystem::path> cond;
  if (std::filesystem::exists(dir / kConditionGFile)) cond = dir / kConditionGFile;
  return load_model_files(dir / kGeneratorFile, cond);
}

}  // namespace modrestore
