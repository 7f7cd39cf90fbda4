#include "modrestore/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace modrestore {

std::unique_ptr<FeatureExtractor> make_extractor(const ExtractorSpec& spec, int image_channels) {
  if (spec.kind == "identity") return std::make_unique<IdentityExtractor>();
  if (spec.kind == "random") {
    if (spec.width <= 0) throw ConfigError("extractor width must be positive");
    return std::make_unique<ConvStackExtractor>(ConvStackExtractor::random(image_channels, spec.width, spec.seed));
  }
  if (spec.kind == "vgg19") {
    if (spec.weights.empty()) throw ConfigError("vgg19 extractor needs a weights checkpoint");
    try {
      return std::make_unique<ConvStackExtractor>(ConvStackExtractor::vgg19_54(load_checkpoint(spec.weights).tree));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("cannot load extractor weights: ") + e.what());
    }
  }
  throw ConfigError("unknown feature extractor '" + spec.kind + "'");
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("training stage must be 1 or 2");
  if (batch_size <= 0 || crop_size <= 0) throw ConfigError("batch and crop sizes must be positive");
  if (max_iters < 0) throw ConfigError("max_iters must be non-negative");
  if (checkpoint_interval < 0 || log_interval < 0) throw ConfigError("intervals must be non-negative");
  if (weights.perceptual < 0 || weights.gan < 0 || weights.mse < 0) throw ConfigError("loss weights must be >= 0");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
  const auto sched = effective_schedule();
  if (!(sched.initial > 0)) throw ConfigError("learning rate must be positive");
  generator.validate();
  if (crop_size % generator.spatial_multiple() != 0) {
    throw ConfigError("crop size must be a multiple of " + std::to_string(generator.spatial_multiple()));
  }
  if (baseline) baseline_spec.validate();
  if (stage == 2) {
    discriminator.validate();
    if (discriminator.patch_size != crop_size) throw ConfigError("discriminator patch size must equal the crop size");
    if (discriminator.image_channels != generator.image_channels) {
      throw ConfigError("generator and discriminator disagree on image channels");
    }
  }
}

void to_json(Json& j, const LrSchedule& s) {
  j = Json{{"initial", s.initial}, {"period", s.period}, {"milestones", s.milestones}};
}

void from_json(const Json& j, LrSchedule& s) {
  s = LrSchedule{};
  s.initial = j.value("initial", s.initial);
  s.period = j.value("period", s.period);
  s.milestones = j.value("milestones", s.milestones);
}

void to_json(Json& j, const TrainConfig& c) {
  j = Json{{"stage", c.stage},
           {"batch_size", c.batch_size},
           {"crop_size", c.crop_size},
           {"loss_weights", {{"perceptual", c.weights.perceptual}, {"gan", c.weights.gan}, {"mse", c.weights.mse}}},
           {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
           {"max_iters", c.max_iters},
           {"init_seed", c.init_seed},
           {"data_seed", c.data_seed},
           {"baseline", c.baseline},
           {"baseline_spec", c.baseline_spec},
           {"checkpoint_interval", c.checkpoint_interval},
           {"log_interval", c.log_interval},
           {"generator", c.generator},
           {"discriminator", c.discriminator},
           {"extractor", {{"kind", c.extractor.kind}, {"width", c.extractor.width}, {"seed", c.extractor.seed},
                          {"weights", c.extractor.weights}}}};
  if (c.schedule) j["schedule"] = *c.schedule;
}

void from_json(const Json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.stage = j.value("stage", c.stage);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.crop_size = j.value("crop_size", c.crop_size);
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<LrSchedule>();
  if (j.contains("loss_weights")) {
    const auto& w = j.at("loss_weights");
    c.weights.perceptual = w.value("perceptual", c.weights.perceptual);
    c.weights.gan = w.value("gan", c.weights.gan);
    c.weights.mse = w.value("mse", c.weights.mse);
  }
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  c.max_iters = j.value("max_iters", c.max_iters);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.data_seed = j.value("data_seed", c.data_seed);
  c.baseline = j.value("baseline", c.baseline);
  if (j.contains("baseline_spec")) c.baseline_spec = j.at("baseline_spec").get<DegradationSpec>();
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  c.log_interval = j.value("log_interval", c.log_interval);
  if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
  if (j.contains("discriminator")) c.discriminator = j.at("discriminator").get<DiscriminatorConfig>();
  if (j.contains("extractor")) {
    const auto& e = j.at("extractor");
    c.extractor.kind = e.value("kind", c.extractor.kind);
    c.extractor.width = e.value("width", c.extractor.width);
    c.extractor.seed = e.value("seed", c.extractor.seed);
    c.extractor.weights = e.value("weights", c.extractor.weights);
  }
}

void to_json(Json& j, const IterationLog& l) {
  j = Json{{"iteration", l.iteration}, {"lr", l.lr},         {"mse", l.mse},      {"percep", l.percep},
           {"gan_g", l.gan_g},         {"d_loss", l.d_loss}, {"total", l.total}};
}

TrainState init_stage1(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.stage = 1;
  s.generator = build_generator<float>(cfg.generator, cfg.init_seed);
  if (!cfg.baseline) {
    s.condition_g = build_condition_net<float>(ConditionTarget::Generator, s.generator.sites(), cfg.init_seed + 1);
  }
  s.adam_g = AdamState<float>::for_tree(s.generator.tree);
  if (s.condition_g) s.adam_cg = AdamState<float>::for_tree(s.condition_g->tree);
  s.data_rng.seed(cfg.data_seed);
  return s;
}

TrainState init_stage2(const TrainConfig& cfg, const RestorationModel& warm) {
  cfg.validate();
  warm.validate();
  if (warm.generator.config != cfg.generator) throw ConfigError("warm-start generator does not match the configuration");
  if (warm.conditional() == cfg.baseline) {
    throw ConfigError(cfg.baseline ? "baseline training expects a model without a condition network"
                                   : "conditional training expects a model with a condition network");
  }
  TrainState s;
  s.stage = 2;
  s.generator = warm.generator;
  s.condition_g = warm.condition;
  auto dcfg = cfg.discriminator;
  if (cfg.baseline) dcfg.gfm_enabled = false;
  s.discriminator = build_discriminator<float>(dcfg, cfg.init_seed + 2);
  if (!cfg.baseline) {
    s.condition_d =
        build_condition_net<float>(ConditionTarget::Discriminator, s.discriminator->sites(), cfg.init_seed + 3);
  }
  s.adam_g = AdamState<float>::for_tree(s.generator.tree);
  if (s.condition_g) s.adam_cg = AdamState<float>::for_tree(s.condition_g->tree);
  s.adam_d = AdamState<float>::for_tree(s.discriminator->tree);
  if (s.condition_d) s.adam_cd = AdamState<float>::for_tree(s.condition_d->tree);
  s.data_rng.seed(cfg.data_seed);
  return s;
}

Augmentation sample_augmentation(const Image& img, int crop, std::mt19937_64& rng) {
  if (img.height < crop || img.width < crop) {
    throw DataError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                    " is smaller than the crop size " + std::to_string(crop));
  }
  Augmentation a;
  a.top = std::uniform_int_distribution<int>(0, img.height - crop)(rng);
  a.left = std::uniform_int_distribution<int>(0, img.width - crop)(rng);
  a.flip = std::bernoulli_distribution(0.5)(rng);
  a.rotation = std::uniform_int_distribution<int>(0, 3)(rng);
  return a;
}

Image apply_augmentation(const Image& img, int crop, const Augmentation& aug) {
  const Image patch = modrestore::crop(img, aug.top, aug.left, crop, crop);
  Image out(patch.channels, crop, crop);
  const int n = crop - 1;
  for (int y = 0; y < crop; ++y) {
    for (int x = 0; x < crop; ++x) {
      // Source of output pixel (y, x) after flip then k counter-clockwise turns.
      int sy = y, sx = x;
      for (int k = 0; k < aug.rotation; ++k) {
        const int ty = sx, tx = n - sy;
        sy = ty;
        sx = tx;
      }
      if (aug.flip) sx = n - sx;
      out.data.col(y * crop + x) = patch.data.col(sy * crop + sx);
    }
  }
  return out;
}

Image crop_and_augment(const Image& img, int crop, std::mt19937_64& rng) {
  return apply_augmentation(img, crop, sample_augmentation(img, crop, rng));
}

Batch sample_batch(const TrainConfig& cfg, std::span<const Image> data, std::mt19937_64& rng) {
  if (data.empty()) throw DataError("training set is empty");
  Batch b;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (int i = 0; i < cfg.batch_size; ++i) {
    const Image& src = data[pick(rng)];
    Image clean = crop_and_augment(src, cfg.crop_size, rng);
    const DegradationSpec spec = cfg.baseline ? cfg.baseline_spec : sample_degradation(rng);
    const std::uint64_t noise_seed = rng();
    b.degraded.push_back(degrade(clean, spec, noise_seed));
    b.clean.push_back(std::move(clean));
    b.specs.push_back(spec);
    b.z.push_back(encode_condition(spec));
  }
  return b;
}

namespace {

GeneratorModulation<float> g_modulation(const TrainState& s, const ConditionVector& z) {
  if (!s.condition_g) return GeneratorModulation<float>::constant(s.generator.sites(), 1.0f);
  return condition_forward_g(z, *s.condition_g);
}

std::vector<DiscriminatorModulation<float>> d_modulation(const TrainState& s, const Batch& b) {
  std::vector<DiscriminatorModulation<float>> out;
  if (!s.discriminator->config.gfm_enabled) return out;
  for (const auto& z : b.z) {
    out.push_back(s.condition_d ? condition_forward_d(z, *s.condition_d)
                                : DiscriminatorModulation<float>::identity(s.discriminator->sites()));
  }
  return out;
}

void require_finite(const TrainState& s, const IterationLog& log, double value, const char* what) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite " << what << " at stage " << s.stage << " iteration " << s.iteration << " (mse " << log.mse
        << ", percep " << log.percep << ", gan " << log.gan_g << ", d " << log.d_loss << ")";
    throw TrainingDiverged(msg.str());
  }
}

struct GeneratorGrads {
  ParameterTree<float> g;
  std::optional<ParameterTree<float>> cg;
};

GeneratorGrads zero_generator_grads(const TrainState& s) {
  GeneratorGrads gr{s.generator.tree.zeros_like(), std::nullopt};
  if (s.condition_g) gr.cg = s.condition_g->tree.zeros_like();
  return gr;
}

void backward_generator(const TrainState& s, const GeneratorTape<float>& tape, const Image& grad,
                        const GeneratorModulation<float>& mods, const ConditionVector& z, GeneratorGrads& gr) {
  if (s.condition_g) {
    GeneratorModulation<float> gm;
    generator_backward(tape, grad, mods, s.generator, gr.g, &gm);
    condition_backward_g(z, *s.condition_g, gm, *gr.cg);
  } else {
    generator_backward(tape, grad, mods, s.generator, gr.g);
  }
}

void step_generator(TrainState& s, const GeneratorGrads& gr, double lr, const AdamOptions& opt) {
  adam_step(s.generator.tree, gr.g, s.adam_g, lr, opt);
  if (s.condition_g) adam_step(s.condition_g->tree, *gr.cg, s.adam_cg, lr, opt);
}

IterationLog step_stage1(const TrainConfig& cfg, TrainState& s, const Batch& b, double lr) {
  IterationLog log{s.iteration, lr};
  auto gr = zero_generator_grads(s);
  const double elements = static_cast<double>(b.clean.size()) * static_cast<double>(b.clean.front().size());
  double mse = 0.0;
  for (std::size_t i = 0; i < b.clean.size(); ++i) {
    const auto mods = g_modulation(s, b.z[i]);
    GeneratorTape<float> tape;
    const Image pred = generator_forward(b.degraded[i], mods, s.generator, &tape);
    mse += mse_loss(pred, b.clean[i]);
    backward_generator(s, tape, mse_grad(pred, b.clean[i], elements), mods, b.z[i], gr);
  }
  log.mse = mse / static_cast<double>(b.clean.size());
  log.total = log.mse;
  require_finite(s, log, log.mse, "MSE loss");
  step_generator(s, gr, lr, cfg.adam);
  return log;
}

IterationLog step_stage2(const TrainConfig& cfg, TrainState& s, const Batch& b, double lr,
                         const FeatureExtractor& fx) {
  IterationLog log{s.iteration, lr};
  const std::size_t n = b.clean.size();
  auto& d = *s.discriminator;

  std::vector<GeneratorModulation<float>> gmods;
  std::vector<GeneratorTape<float>> gtapes(n);
  std::vector<Image> fakes;
  for (std::size_t i = 0; i < n; ++i) {
    gmods.push_back(g_modulation(s, b.z[i]));
    fakes.push_back(generator_forward(b.degraded[i], gmods[i], s.generator, &gtapes[i]));
  }

  // Discriminator (+ C_D) step on real and fake patches.
  {
    const auto dmods = d_modulation(s, b);
    auto grads_d = d.tree.zeros_like();
    std::optional<ParameterTree<float>> grads_cd;
    if (s.condition_d) grads_cd = s.condition_d->tree.zeros_like();
    double d_loss = 0.0;
    for (const bool real : {true, false}) {
      const auto& images = real ? b.clean : fakes;
      DiscriminatorTape<float> tape;
      const Vector<float> logits = discriminator_forward<float>(images, dmods, d, NormMode::Train, &tape);
      Vector<float> g;
      d_loss += bce_batch(logits, real, &g);
      const auto dg = discriminator_backward<float>(tape, g, dmods, d, &grads_d, {true, s.condition_d.has_value(), false});
      if (s.condition_d) {
        for (std::size_t i = 0; i < n; ++i) condition_backward_d(b.z[i], *s.condition_d, dg.mods[i], *grads_cd);
      }
      update_running_stats(d, tape);
    }
    log.d_loss = d_loss;
    require_finite(s, log, d_loss, "discriminator loss");
    adam_step(d.tree, grads_d, s.adam_d, lr, cfg.adam);
    if (s.condition_d) adam_step(s.condition_d->tree, *grads_cd, s.adam_cd, lr, cfg.adam);
  }

  // Generator (+ C_G) step through the updated discriminator.
  const auto dmods = d_modulation(s, b);
  DiscriminatorTape<float> tape;
  const Vector<float> logits = discriminator_forward<float>(fakes, dmods, d, NormMode::Train, &tape);
  Vector<float> g_logits;
  log.gan_g = bce_batch(logits, true, &g_logits);
  const auto dg = discriminator_backward<float>(tape, g_logits, dmods, d, nullptr, {false, false, true});
  update_running_stats(d, tape);

  auto gr = zero_generator_grads(s);
  const double elements = static_cast<double>(n) * static_cast<double>(b.clean.front().size());
  const double inv_n = 1.0 / static_cast<double>(n);
  double percep = 0.0, mse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double p = 0.0;
    Image grad = perceptual_grad(fakes[i], b.clean[i], fx, cfg.weights.perceptual * inv_n, &p);
    percep += p;
    mse += mse_loss(fakes[i], b.clean[i]);
    grad.data += static_cast<float>(cfg.weights.mse) * mse_grad(fakes[i], b.clean[i], elements).data;
    grad.data += static_cast<float>(cfg.weights.gan) * dg.input[i].data;
    backward_generator(s, gtapes[i], grad, gmods[i], b.z[i], gr);
  }
  log.percep = percep * inv_n;
  log.mse = mse * inv_n;
  log.total = total_g_loss(log.percep, log.gan_g, log.mse, cfg.weights);
  require_finite(s, log, log.total, "generator loss");
  step_generator(s, gr, lr, cfg.adam);
  return log;
}

void append_telemetry(const std::filesystem::path& path, int stage, const IterationLog& log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot open telemetry file " + path.string());
  Json j = log;
  j["stage"] = stage;
  out << j.dump() << '\n';
}

Checkpoint optimizer_checkpoint(const TrainState& s) {
  Checkpoint c;
  c.kind = "optimizer";
  auto add = [&](const std::string& prefix, const AdamState<float>& st) {
    for (const auto& [name, e] : st.m) c.tree.add(prefix + ".m." + name, e.shape).values = e.values;
    for (const auto& [name, e] : st.v) c.tree.add(prefix + ".v." + name, e.shape).values = e.values;
    c.meta[prefix + ".step"] = st.step;
  };
  add("g", s.adam_g);
  if (s.condition_g) add("cg", s.adam_cg);
  if (s.discriminator) add("d", s.adam_d);
  if (s.condition_d) add("cd", s.adam_cd);
  return c;
}

void restore_adam(const Checkpoint& c, const std::string& prefix, const ParameterTree<float>& params,
                  AdamState<float>& st) {
  st = AdamState<float>::for_tree(params);
  for (auto& [name, e] : st.m) e.values = c.tree.values(prefix + ".m." + name);
  for (auto& [name, e] : st.v) e.values = c.tree.values(prefix + ".v." + name);
  st.step = c.meta.at(prefix + ".step").get<std::int64_t>();
}

}  // namespace

IterationLog train_step(const TrainConfig& cfg, TrainState& state, std::span<const Image> data,
                        const FeatureExtractor* fx) {
  if (state.stage != cfg.stage) throw ConfigError("training state and configuration are for different stages");
  const double lr = cfg.effective_schedule().at(state.iteration);
  const Batch batch = sample_batch(cfg, data, state.data_rng);
  IterationLog log;
  if (state.stage == 1) {
    log = step_stage1(cfg, state, batch, lr);
  } else {
    if (!fx) throw ConfigError("stage 2 needs a perceptual feature extractor");
    if (!state.discriminator) throw ConfigError("stage 2 state has no discriminator");
    log = step_stage2(cfg, state, batch, lr, *fx);
  }
  ++state.iteration;
  return log;
}

void run_training(const TrainConfig& cfg, TrainState& state, std::span<const Image> data,
                  const FeatureExtractor* fx, const TrainHooks& hooks) {
  cfg.validate();
  for (const auto& img : data) {
    if (img.channels != cfg.generator.image_channels) throw DataError("training image has the wrong channel count");
  }
  while (state.iteration < cfg.max_iters) {
    IterationLog log;
    try {
      log = train_step(cfg, state, data, fx);
    } catch (const TrainingDiverged&) {
      if (hooks.checkpoint_dir) save_train_state(*hooks.checkpoint_dir / "diverged", cfg, state);
      throw;
    }
    state.history.push_back(log);
    const bool logged = cfg.log_interval > 0 && (log.iteration % cfg.log_interval == 0 || state.iteration == cfg.max_iters);
    if (logged && hooks.telemetry) append_telemetry(*hooks.telemetry, state.stage, log);
    if (hooks.on_iteration) hooks.on_iteration(log);
    if (hooks.checkpoint_dir && cfg.checkpoint_interval > 0 && state.iteration % cfg.checkpoint_interval == 0) {
      save_train_state(*hooks.checkpoint_dir, cfg, state);
    }
  }
  if (hooks.checkpoint_dir) save_train_state(*hooks.checkpoint_dir, cfg, state);
}

TrainState train_stage1(const TrainConfig& cfg, std::span<const Image> data, const TrainHooks& hooks) {
  if (cfg.stage != 1) throw ConfigError("train_stage1 needs a stage-1 configuration");
  TrainState s = init_stage1(cfg);
  run_training(cfg, s, data, nullptr, hooks);
  return s;
}

TrainState train_stage2(const TrainConfig& cfg, const RestorationModel& warm, std::span<const Image> data,
                        const FeatureExtractor& fx, const TrainHooks& hooks) {
  if (cfg.stage != 2) throw ConfigError("train_stage2 needs a stage-2 configuration");
  TrainState s = init_stage2(cfg, warm);
  run_training(cfg, s, data, &fx, hooks);
  return s;
}

void save_train_state(const std::filesystem::path& dir, const TrainConfig& cfg, const TrainState& state) {
  std::filesystem::create_directories(dir);
  save_model_dir(dir, state.model());
  if (state.discriminator) save_checkpoint(dir / kDiscriminatorFile, to_checkpoint(*state.discriminator));
  if (state.condition_d) save_checkpoint(dir / kConditionDFile, to_checkpoint(*state.condition_d));
  save_checkpoint(dir / "optimizer.mrck", optimizer_checkpoint(state));
  std::ostringstream rng;
  rng << state.data_rng;
  const Json j{{"stage", state.stage},
               {"iteration", state.iteration},
               {"data_rng", rng.str()},
               {"discriminator", state.discriminator.has_value()},
               {"condition_d", state.condition_d.has_value()},
               {"config", cfg}};
  const auto tmp = dir / "state.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, dir / "state.json");
}

TrainState load_train_state(const std::filesystem::path& dir, TrainConfig* cfg) {
  std::ifstream in(dir / "state.json");
  if (!in) throw DataError("no state.json in " + dir.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw CheckpointFormatError(std::string("malformed state.json: ") + e.what());
  }
  if (cfg) *cfg = j.at("config").get<TrainConfig>();
  TrainState s;
  const RestorationModel m = load_model_dir(dir);
  s.stage = j.at("stage").get<int>();
  s.iteration = j.at("iteration").get<std::int64_t>();
  s.generator = m.generator;
  s.condition_g = m.condition;
  if (j.at("discriminator").get<bool>()) s.discriminator = discriminator_from_checkpoint(load_checkpoint(dir / kDiscriminatorFile));
  if (j.at("condition_d").get<bool>()) s.condition_d = condition_from_checkpoint(load_checkpoint(dir / kConditionDFile));
  const Checkpoint opt = load_checkpoint(dir / "optimizer.mrck");
  restore_adam(opt, "g", s.generator.tree, s.adam_g);
  if (s.condition_g) restore_adam(opt, "cg", s.condition_g->tree, s.adam_cg);
  if (s.discriminator) restore_adam(opt, "d", s.discriminator->tree, s.adam_d);
  if (s.condition_d) restore_adam(opt, "cd", s.condition_d->tree, s.adam_cd);
  std::istringstream rng(j.at("data_rng").get<std::string>());
  rng >> s.data_rng;
  return s;
}

double window_mean(std::span<const double> values, std::size_t begin, std::size_t end) {
  end = std::min(end, values.size());
  if (begin >= end) throw DataError("empty averaging window");
  double sum = 0.0;
  for (std::size_t i = begin; i < end; ++i) sum += values[i];
  return sum / static_cast<double>(end - begin);
}

}  // namespace modrestore
