#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "modrestore/condition.hpp"
#include "modrestore/degradation.hpp"
#include "modrestore/discriminator.hpp"
#include "modrestore/feature_extractor.hpp"
#include "modrestore/generator.hpp"
#include "modrestore/losses.hpp"
#include "modrestore/model.hpp"
#include "modrestore/optimizer.hpp"
#include "modrestore/serialization.hpp"

namespace modrestore {

/// Which perceptual feature extractor stage 2 uses.
struct ExtractorSpec {
  std::string kind = "random";  // identity | random | vgg19
  int width = 16;
  std::uint64_t seed = 7;
  std::string weights;  // vgg19: checkpoint holding features.<n>.weight/bias

  bool operator==(const ExtractorSpec&) const = default;
};

std::unique_ptr<FeatureExtractor> make_extractor(const ExtractorSpec& spec, int image_channels = 3);

struct TrainConfig {
  int stage = 1;
  int batch_size = 16;
  int crop_size = 64;
  /// Empty means the stage default (stage 1: halve every 200k, stage 2: milestones).
  std::optional<LrSchedule> schedule;
  LossWeights weights;
  AdamOptions adam;
  std::int64_t max_iters = 1000;
  /// Weight initialization and data sampling use separate streams.
  std::uint64_t init_seed = 1;
  std::uint64_t data_seed = 2;
  bool baseline = false;
  DegradationSpec baseline_spec;
  std::int64_t checkpoint_interval = 0;  // 0: only at the end
  std::int64_t log_interval = 1;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  ExtractorSpec extractor;

  void validate() const;
  LrSchedule effective_schedule() const { return schedule ? *schedule : (stage == 1 ? LrSchedule::stage1() : LrSchedule::stage2()); }
};

void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);
void to_json(Json& j, const LrSchedule& s);
void from_json(const Json& j, LrSchedule& s);

/// One iteration's losses; zero where the stage does not compute a term.
struct IterationLog {
  std::int64_t iteration = 0;
  double lr = 0.0;
  double mse = 0.0;
  double percep = 0.0;
  double gan_g = 0.0;
  double d_loss = 0.0;
  double total = 0.0;
};

void to_json(Json& j, const IterationLog& l);

struct TrainState {
  int stage = 1;
  std::int64_t iteration = 0;
  GeneratorParams<float> generator;
  std::optional<ConditionNetParams<float>> condition_g;
  std::optional<DiscriminatorParams<float>> discriminator;
  std::optional<ConditionNetParams<float>> condition_d;
  AdamState<float> adam_g, adam_cg, adam_d, adam_cd;
  std::mt19937_64 data_rng;
  std::vector<IterationLog> history;

  RestorationModel model() const { return {generator, condition_g}; }
};

/// Fresh stage-1 state (G and, unless baseline, C_G).
TrainState init_stage1(const TrainConfig& cfg);
/// Stage-2 state warm-started from a stage-1 generator; D and C_D are new.
TrainState init_stage2(const TrainConfig& cfg, const RestorationModel& warm);

struct Augmentation {
  int top = 0;
  int left = 0;
  bool flip = false;
  int rotation = 0;  // counter-clockwise quarter turns, 0..3
};

Augmentation sample_augmentation(const Image& img, int crop, std::mt19937_64& rng);
/// Crop, then horizontal flip, then rotation.
Image apply_augmentation(const Image& img, int crop, const Augmentation& aug);
Image crop_and_augment(const Image& img, int crop, std::mt19937_64& rng);

/// One training batch: clean patches, their degraded inputs and conditions.
struct Batch {
  std::vector<Image> clean;
  std::vector<Image> degraded;
  std::vector<DegradationSpec> specs;
  std::vector<ConditionVector> z;
};

Batch sample_batch(const TrainConfig& cfg, std::span<const Image> data, std::mt19937_64& rng);

/// One optimization step on `state`; returns its losses. Non-finite losses
/// throw TrainingDiverged before any parameter is touched.
IterationLog train_step(const TrainConfig& cfg, TrainState& state, std::span<const Image> data,
                        const FeatureExtractor* fx);

struct TrainHooks {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> telemetry;  // JSON lines, appended
  std::function<void(const IterationLog&)> on_iteration;
};

/// Runs until state.iteration == cfg.max_iters. On divergence a snapshot of
/// the pre-step state is written to <checkpoint_dir>/diverged when a
/// checkpoint directory is configured.
void run_training(const TrainConfig& cfg, TrainState& state, std::span<const Image> data,
                  const FeatureExtractor* fx, const TrainHooks& hooks = {});

TrainState train_stage1(const TrainConfig& cfg, std::span<const Image> data, const TrainHooks& hooks = {});
TrainState train_stage2(const TrainConfig& cfg, const RestorationModel& warm, std::span<const Image> data,
                        const FeatureExtractor& fx, const TrainHooks& hooks = {});

/// Checkpoint directory: model files, optimizer moments and state.json.
void save_train_state(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& dir, TrainConfig* cfg = nullptr);

/// Mean of `values[begin, end)`.
double window_mean(std::span<const double> values, std::size_t begin, std::size_t end);

}  // namespace modrestore
