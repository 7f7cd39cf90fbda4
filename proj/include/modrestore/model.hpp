#pragma once

#include <filesystem>
#include <optional>

#include "modrestore/checkpoint.hpp"
#include "modrestore/condition.hpp"
#include "modrestore/generator.hpp"

namespace modrestore {

/// The restoration path: generator plus its condition network. Baseline
/// models have no condition network and run with every w_i = 1.
struct RestorationModel {
  GeneratorParams<float> generator;
  std::optional<ConditionNetParams<float>> condition;

  bool conditional() const noexcept { return condition.has_value(); }
  void validate() const;

  GeneratorModulation<float> modulation(const ConditionVector& z) const;

  /// Forward on an image whose sides are multiples of the generator's
  /// spatial multiple; raw (unclamped) output.
  Image forward(const Image& img, const ConditionVector& z) const;

  /// Reflect-pads to the spatial multiple, runs the generator, crops back and
  /// clamps to [0,1].
  Image restore(const Image& img, const ConditionVector& z) const;
};

/// Model directories hold `generator.mrck` and, for conditional models,
/// `condition_g.mrck`.
inline constexpr const char* kGeneratorFile = "generator.mrck";
inline constexpr const char* kConditionGFile = "condition_g.mrck";
inline constexpr const char* kDiscriminatorFile = "discriminator.mrck";
inline constexpr const char* kConditionDFile = "condition_d.mrck";

void save_model_dir(const std::filesystem::path& dir, const RestorationModel& model);
RestorationModel load_model_dir(const std::filesystem::path& dir);
RestorationModel load_model_files(const std::filesystem::path& generator,
                                  const std::optional<std::filesystem::path>& condition);

}  // namespace modrestore
