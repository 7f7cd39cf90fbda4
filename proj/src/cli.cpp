#include "modrestore/cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <random>
#include <sstream>

#include "modrestore/degradation.hpp"
#include "modrestore/evaluation.hpp"
#include "modrestore/image_io.hpp"
#include "modrestore/interpolation.hpp"
#include "modrestore/service.hpp"
#include "modrestore/training.hpp"

namespace modrestore {

namespace {

namespace fs = std::filesystem;

/// TOML through CLI11, or a JSON object with one nesting level for
/// subcommand sections. Key names accept '_' for '-', and keys that match
/// no option are rejected.
class ConfigAdapter : public CLI::ConfigTOML {
 public:
  explicit ConfigAdapter(const CLI::App* app) : app_(app) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    const std::string text{std::istreambuf_iterator<char>(input), std::istreambuf_iterator<char>()};
    const auto first = text.find_first_not_of(" \t\r\n");
    std::vector<CLI::ConfigItem> items;
    if (first != std::string::npos && text[first] == '{') {
      items = from_json(text);
    } else {
      std::istringstream in(text);
      items = CLI::ConfigTOML::from_config(in);
    }
    for (auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      check(item);
    }
    return items;
  }

 private:
  static std::string scalar(const Json& v, const std::string& key) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("config key '" + key + "' must hold a scalar or a list of scalars");
  }

  static CLI::ConfigItem item(std::vector<std::string> parents, const std::string& key, const Json& v) {
    CLI::ConfigItem out{std::move(parents), key, {}};
    if (v.is_array()) {
      for (const auto& e : v) out.inputs.push_back(scalar(e, key));
    } else {
      out.inputs.push_back(scalar(v, key));
    }
    return out;
  }

  static std::vector<CLI::ConfigItem> from_json(const std::string& text) {
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, v] : j.items()) {
      if (!v.is_object()) {
        items.push_back(item({}, key, v));
        continue;
      }
      for (const auto& [sub, sv] : v.items()) {
        if (sv.is_object()) throw CLI::ConversionError("config is flat: '" + key + "." + sub + "' nests too deep");
        items.push_back(item({key}, sub, sv));
      }
    }
    return items;
  }

  void check(const CLI::ConfigItem& item) const {
    const CLI::App* scope = app_;
    if (item.parents.size() > 1) throw CLI::ConversionError("config section '" + item.fullname() + "' nests too deep");
    if (item.parents.size() == 1) {
      scope = app_->get_subcommand_no_throw(item.parents[0]);
      if (!scope) throw CLI::ConversionError("config section '" + item.parents[0] + "' names no subcommand");
    }
    if (!scope->get_option_no_throw("--" + item.name))
      throw CLI::ConversionError("unknown config key '" + item.fullname() + "'");
  }

  const CLI::App* app_;
};

struct Global {
  std::optional<std::uint64_t> seed;
  bool dry_run = false;
};

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw ConfigError(what + " is not a directory: " + p.string());
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
}

ConditionVector make_z(const std::vector<double>& z) {
  if (z.size() != 2) throw ConfigError("--z takes two values");
  ConditionVector c{{z[0], z[1]}};
  c.validate();
  return c;
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("--alpha must lie in [0,1]");
}

std::string describe(const DegradationSpec& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "blur %.1f / sigma %g", s.blur_r, s.noise_sigma);
  return buf;
}

// degrade ------------------------------------------------------------------

struct DegradeArgs {
  std::string in, out;
  double blur = 0.0, sigma = 0.0;
};

void add_degrade(CLI::App& app, DegradeArgs& a) {
  app.add_option("--in", a.in, "Input PNG or directory of PNGs")->required();
  app.add_option("--out", a.out, "Output directory")->required();
  app.add_option("--blur", a.blur, "Gaussian blur width r in [0,4]");
  app.add_option("--sigma", a.sigma, "Noise level sigma in [0,50]");
}

int run_degrade(const DegradeArgs& a, const Global& g, std::ostream& out) {
  const DegradationSpec spec{a.blur, a.sigma};
  spec.validate();
  std::vector<fs::path> inputs;
  if (fs::is_directory(a.in)) {
    for (const auto& e : fs::directory_iterator(a.in))
      if (e.is_regular_file() && e.path().extension() == ".png") inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    require_file(a.in, "input");
    inputs.push_back(a.in);
  }
  if (inputs.empty()) throw ConfigError("no PNG files in " + a.in);
  const std::uint64_t seed = g.seed.value_or(0);
  if (g.dry_run) {
    Json files = Json::array();
    for (const auto& p : inputs) files.push_back(p.string());
    out << Json{{"command", "degrade"}, {"spec", spec}, {"seed", seed}, {"inputs", files}, {"out", a.out}}.dump(2)
        << '\n';
    return kExitOk;
  }
  std::mt19937_64 rng(seed);
  for (const auto& p : inputs) {
    const Image img = read_png(p);
    write_png(fs::path(a.out) / p.filename(), degrade(img, spec, rng()));
  }
  out << "degraded " << inputs.size() << " image(s) with " << describe(spec) << '\n';
  return kExitOk;
}

// train --------------------------------------------------------------------

struct TrainArgs {
  int stage = 0;
  std::string data, out, warm, resume, telemetry;
  bool baseline = false;
  double blur = 0.0, sigma = 0.0;
  int batch_size = 16, crop_size = 64, blocks = 2;
  std::int64_t iters = 1000, checkpoint_interval = 0, log_interval = 1;
  std::optional<double> lr;
  std::optional<std::int64_t> lr_period;
  std::vector<std::int64_t> lr_milestones;
  double perceptual_weight = 1.0, gan_weight = 0.005, mse_weight = 0.01;
  std::vector<int> channels{64, 128, 256};
  std::vector<std::string> d_plan;
  int d_fc_hidden = 128;
  std::string extractor = "random", extractor_weights;
  int extractor_width = 16;
  std::optional<std::uint64_t> init_seed, data_seed;
};

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--stage", a.stage, "1: MSE pre-training, 2: GAN fine-tuning")->check(CLI::IsMember({1, 2}));
  app.add_option("--data", a.data, "Directory of clean training PNGs")->required();
  app.add_option("--out", a.out, "Checkpoint directory")->required();
  app.add_option("--warm", a.warm, "Stage-1 model directory to start stage 2 from");
  app.add_option("--resume", a.resume, "Continue from a checkpoint directory");
  app.add_option("--telemetry", a.telemetry, "JSON-lines log (default <out>/telemetry.jsonl)");
  app.add_flag("--baseline", a.baseline, "Train a fixed-level baseline without condition networks");
  app.add_option("--blur", a.blur, "Baseline blur width");
  app.add_option("--sigma", a.sigma, "Baseline noise level");
  app.add_option("--batch-size", a.batch_size);
  app.add_option("--crop-size", a.crop_size);
  app.add_option("--iters", a.iters, "Total iterations");
  app.add_option("--checkpoint-interval", a.checkpoint_interval);
  app.add_option("--log-interval", a.log_interval);
  app.add_option("--lr", a.lr, "Initial learning rate");
  app.add_option("--lr-period", a.lr_period, "Halve the learning rate every N iterations");
  app.add_option("--lr-milestones", a.lr_milestones, "Halve the learning rate at these iterations");
  app.add_option("--perceptual-weight", a.perceptual_weight);
  app.add_option("--gan-weight", a.gan_weight);
  app.add_option("--mse-weight", a.mse_weight);
  app.add_option("--channels", a.channels, "Generator channels per scale");
  app.add_option("--blocks", a.blocks, "Residual blocks per side and scale");
  app.add_option("--d-plan", a.d_plan, "Discriminator conv plan as width:stride entries");
  app.add_option("--d-fc-hidden", a.d_fc_hidden);
  app.add_option("--extractor", a.extractor, "Perceptual features: identity, random or vgg19")
      ->check(CLI::IsMember({"identity", "random", "vgg19"}));
  app.add_option("--extractor-width", a.extractor_width);
  app.add_option("--extractor-weights", a.extractor_weights, "vgg19 weights checkpoint");
  app.add_option("--init-seed", a.init_seed);
  app.add_option("--data-seed", a.data_seed);
}

std::vector<ConvStage> parse_plan(const std::vector<std::string>& entries) {
  std::vector<ConvStage> plan;
  for (const auto& e : entries) {
    const auto colon = e.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(e);
      std::size_t u1 = 0, u2 = 0;
      const std::string w = e.substr(0, colon), s = e.substr(colon + 1);
      ConvStage st{std::stoi(w, &u1), std::stoi(s, &u2)};
      if (u1 != w.size() || u2 != s.size()) throw std::invalid_argument(e);
      plan.push_back(st);
    } catch (const std::exception&) {
      throw ConfigError("--d-plan entries look like 64:2, got '" + e + "'");
    }
  }
  return plan;
}

TrainConfig build_train_config(const TrainArgs& a, const Global& g, const CLI::App& app) {
  TrainConfig cfg;
  if (!a.resume.empty()) {
    require_dir(a.resume, "--resume");
    (void)load_train_state(a.resume, &cfg);
    if (app.count("--iters")) cfg.max_iters = a.iters;
    if (app.count("--stage") && a.stage != cfg.stage) throw ConfigError("--stage disagrees with the resumed checkpoint");
    return cfg;
  }
  if (a.stage == 0) throw ConfigError("--stage is required unless resuming");
  cfg.stage = a.stage;
  cfg.batch_size = a.batch_size;
  cfg.crop_size = a.crop_size;
  cfg.max_iters = a.iters;
  cfg.checkpoint_interval = a.checkpoint_interval;
  cfg.log_interval = a.log_interval;
  cfg.weights = {a.perceptual_weight, a.gan_weight, a.mse_weight};
  if (a.lr || a.lr_period || !a.lr_milestones.empty()) {
    LrSchedule s = cfg.effective_schedule();
    if (a.lr) s.initial = *a.lr;
    if (a.lr_period) {
      s.period = *a.lr_period;
      s.milestones.clear();
    }
    if (!a.lr_milestones.empty()) {
      s.milestones = a.lr_milestones;
      s.period = 0;
    }
    cfg.schedule = s;
  }
  const std::uint64_t seed = g.seed.value_or(1);
  cfg.init_seed = a.init_seed.value_or(seed);
  cfg.data_seed = a.data_seed.value_or(seed + 1);
  cfg.baseline = a.baseline;
  if (!a.baseline && (app.count("--blur") || app.count("--sigma")))
    throw ConfigError("--blur/--sigma only apply to --baseline training");
  cfg.baseline_spec = {a.blur, a.sigma};
  cfg.generator.channels = a.channels;
  cfg.generator.num_scales = static_cast<int>(a.channels.size());
  cfg.generator.blocks_per_side = a.blocks;
  if (!a.d_plan.empty()) cfg.discriminator.plan = parse_plan(a.d_plan);
  cfg.discriminator.fc_hidden = a.d_fc_hidden;
  cfg.discriminator.patch_size = a.crop_size;
  cfg.extractor.kind = a.extractor;
  cfg.extractor.width = a.extractor_width;
  cfg.extractor.weights = a.extractor_weights;
  cfg.extractor.seed = cfg.init_seed + 7;
  cfg.validate();
  return cfg;
}

int run_train(const TrainArgs& a, const Global& g, const CLI::App& app, std::ostream& out) {
  const TrainConfig cfg = build_train_config(a, g, app);
  require_dir(a.data, "--data");
  if (cfg.stage == 2 && a.resume.empty()) {
    if (a.warm.empty()) throw ConfigError("stage 2 needs --warm <stage-1 model directory>");
    require_dir(a.warm, "--warm");
  }
  if (cfg.stage == 1 && !a.warm.empty()) throw ConfigError("--warm only applies to stage 2");
  const fs::path telemetry = a.telemetry.empty() ? fs::path(a.out) / "telemetry.jsonl" : fs::path(a.telemetry);
  if (g.dry_run) {
    out << Json{{"command", "train"}, {"config", cfg},       {"data", a.data},          {"out", a.out},
                {"warm", a.warm},     {"resume", a.resume}, {"telemetry", telemetry.string()}}
               .dump(2)
        << '\n';
    return kExitOk;
  }
  std::vector<Image> data;
  for (auto& img : load_png_dir(a.data)) data.push_back(std::move(img.image));
  if (data.empty()) throw DataError("no PNG files in " + a.data);

  TrainHooks hooks;
  hooks.checkpoint_dir = a.out;
  hooks.telemetry = telemetry;
  TrainState state;
  std::unique_ptr<FeatureExtractor> fx;
  if (cfg.stage == 2) fx = make_extractor(cfg.extractor, cfg.generator.image_channels);
  if (!a.resume.empty()) {
    state = load_train_state(a.resume);
  } else if (cfg.stage == 1) {
    state = init_stage1(cfg);
  } else {
    state = init_stage2(cfg, load_model_dir(a.warm));
  }
  run_training(cfg, state, data, fx.get(), hooks);
  const IterationLog last = state.history.empty() ? IterationLog{} : state.history.back();
  out << "stage " << cfg.stage << " finished at iteration " << state.iteration << " (mse " << last.mse << ", total "
      << last.total << "); checkpoint in " << a.out << '\n';
  return kExitOk;
}

// restore ------------------------------------------------------------------

struct RestoreArgs {
  std::string in, out, bundle, gan, mse, model;
  std::vector<double> z{0.0, 0.0};
  double alpha = 0.0;
};

void add_restore(CLI::App& app, RestoreArgs& a) {
  app.add_option("--in", a.in, "Degraded PNG")->required();
  app.add_option("--out", a.out, "Output PNG (default <in>_restored.png)");
  app.add_option("--z", a.z, "Condition vector: blur code, noise code")->expected(2);
  app.add_option("--alpha", a.alpha, "GAN (0) to MSE (1) blend");
  app.add_option("--bundle", a.bundle, "Bundle directory holding gan/ and mse/");
  app.add_option("--gan", a.gan, "GAN model directory");
  app.add_option("--mse", a.mse, "MSE model directory");
  app.add_option("--model", a.model, "Single model directory (no blending)");
}

int run_restore(const RestoreArgs& a, const Global& g, std::ostream& out) {
  const ConditionVector z = make_z(a.z);
  check_alpha(a.alpha);
  require_file(a.in, "--in");
  const int sources = !a.bundle.empty() + (!a.gan.empty() || !a.mse.empty()) + !a.model.empty();
  if (sources != 1) throw ConfigError("give exactly one of --bundle, --gan/--mse or --model");
  if ((!a.gan.empty()) != (!a.mse.empty())) throw ConfigError("--gan and --mse go together");
  fs::path out_path = a.out;
  if (out_path.empty()) {
    const fs::path in(a.in);
    out_path = in.parent_path() / (in.stem().string() + "_restored.png");
  }
  const DegradationSpec decoded = decode_condition(z);
  if (g.dry_run) {
    out << Json{{"command", "restore"},
                {"in", a.in},
                {"out", out_path.string()},
                {"z", {z.z[0], z.z[1]}},
                {"decoded", decoded},
                {"alpha", a.alpha},
                {"bundle", a.bundle},
                {"gan", a.gan},
                {"mse", a.mse},
                {"model", a.model}}
               .dump(2)
        << '\n';
    return kExitOk;
  }
  const Image img = read_png(a.in);
  Image restored;
  if (!a.model.empty()) {
    restored = load_model_dir(a.model).restore(img, z);
  } else {
    const fs::path gan = a.bundle.empty() ? fs::path(a.gan) : fs::path(a.bundle) / "gan";
    const fs::path mse = a.bundle.empty() ? fs::path(a.mse) : fs::path(a.bundle) / "mse";
    const auto g_model = load_model_dir(gan), m_model = load_model_dir(mse);
    check_bundle_manifests(g_model, m_model);
    restored = blend_restore(img, z, a.alpha, g_model, m_model);
  }
  write_png(out_path, restored);
  out << "restored " << a.in << " -> " << out_path.string() << " (" << describe(decoded) << ", alpha " << a.alpha
      << ")\n";
  return kExitOk;
}

// interpolate --------------------------------------------------------------

struct InterpolateArgs {
  std::string gan, mse, out;
  double alpha = 0.0;
};

void add_interpolate(CLI::App& app, InterpolateArgs& a) {
  app.add_option("--gan", a.gan, "GAN model directory")->required();
  app.add_option("--mse", a.mse, "MSE model directory")->required();
  app.add_option("--alpha", a.alpha, "0 = GAN, 1 = MSE")->required();
  app.add_option("--out", a.out, "Output model directory")->required();
}

int run_interpolate(const InterpolateArgs& a, const Global& g, std::ostream& out) {
  check_alpha(a.alpha);
  require_dir(a.gan, "--gan");
  require_dir(a.mse, "--mse");
  if (g.dry_run) {
    out << Json{{"command", "interpolate"}, {"gan", a.gan}, {"mse", a.mse}, {"alpha", a.alpha}, {"out", a.out}}.dump(2)
        << '\n';
    return kExitOk;
  }
  save_model_dir(a.out, interpolate_models(load_model_dir(a.gan), load_model_dir(a.mse), a.alpha));
  out << "wrote alpha " << a.alpha << " model to " << a.out << '\n';
  return kExitOk;
}

// evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string ckpt, cond, baseline, data, grid, metrics = "psnr", out, json;
  std::vector<std::string> reference;
  bool grayscale = false;
  int threads = 0;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  app.add_option("--ckpt", a.ckpt, "Generator checkpoint or model directory")->required();
  app.add_option("--cond", a.cond, "Condition network checkpoint");
  app.add_option("--baseline", a.baseline, "Baseline model directory, or one subdirectory per grid point");
  app.add_option("--data", a.data, "Directory of clean test PNGs")->required();
  app.add_option("--grid", a.grid, "Grid JSON (default: the published table columns)");
  app.add_option("--metrics", a.metrics, "psnr[,plugin:<path>[:lower|:higher]]");
  app.add_option("--out", a.out, "CSV report")->required();
  app.add_option("--json", a.json, "JSON report (default: next to the CSV)");
  app.add_option("--reference", a.reference, "Published table(s) to compare against");
  app.add_flag("--grayscale", a.grayscale, "Score on luminance");
  app.add_option("--threads", a.threads);
}

int run_evaluate(const EvaluateArgs& a, const Global& g, std::ostream& out, std::ostream& err) {
  const auto metrics = parse_metrics(a.metrics);
  const EvalGrid grid = a.grid.empty() ? EvalGrid::defaults() : load_grid(a.grid);
  grid.validate();
  require_dir(a.data, "--data");
  if (fs::is_directory(a.ckpt)) {
    if (!a.cond.empty()) throw ConfigError("--cond is only used with a generator checkpoint file");
  } else {
    require_file(a.ckpt, "--ckpt");
    if (!a.cond.empty()) require_file(a.cond, "--cond");
  }
  for (const auto& r : a.reference) (void)published_table(r);
  if (a.threads < 0) throw ConfigError("--threads must be >= 0");
  const fs::path json_path = a.json.empty() ? fs::path(a.out).replace_extension(".json") : fs::path(a.json);
  const EvalOptions opts{a.grayscale, a.threads, g.seed.value_or(0)};
  if (g.dry_run) {
    Json names = Json::array();
    for (const auto& m : metrics) names.push_back(m.name);
    out << Json{{"command", "evaluate"}, {"ckpt", a.ckpt},  {"cond", a.cond},           {"baseline", a.baseline},
                {"data", a.data},        {"grid", grid},    {"metrics", names},         {"out", a.out},
                {"json", json_path.string()}, {"reference", a.reference}, {"seed", opts.seed}}
               .dump(2)
        << '\n';
    return kExitOk;
  }
  const RestorationModel model = fs::is_directory(a.ckpt)
                                     ? load_model_dir(a.ckpt)
                                     : load_model_files(a.ckpt, a.cond.empty() ? std::nullopt
                                                                               : std::optional<fs::path>(a.cond));
  const BaselineSet baselines = a.baseline.empty() ? BaselineSet{} : load_baselines(a.baseline);
  const auto images = load_png_dir(a.data);
  const auto report = evaluate_grid(model, baselines, images, grid, metrics, opts);
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  for (const auto& [path, text] : {std::pair{fs::path(a.out), report.to_csv()},
                                   std::pair{json_path, report.to_json().dump(2) + "\n"}}) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
  }
  for (const auto& r : a.reference) out << table_compare(report, published_table(r)).to_text();
  out << "evaluated " << images.size() << " image(s) x " << grid.specs.size() << " grid point(s); report in " << a.out
      << '\n';
  return kExitOk;
}

// serve --------------------------------------------------------------------

struct ServeArgs {
  int port = 8080;
  std::string host, bundles, static_dir;
  double max_megapixels = 4.0;
};

void add_serve(CLI::App& app, ServeArgs& a) {
  app.add_option("--port", a.port, "Listen port (env MODRESTORE_PORT)");
  app.add_option("--host", a.host, "Listen address (env MODRESTORE_HOST)");
  app.add_option("--bundles", a.bundles, "Directory of model bundles (env MODRESTORE_BUNDLES)");
  app.add_option("--static", a.static_dir, "Web UI assets served at / (env MODRESTORE_STATIC)");
  app.add_option("--max-megapixels", a.max_megapixels, "Largest accepted image");
}

int run_serve(const ServeArgs& a, const Global& g, const CLI::App& app, std::ostream& out) {
  ServiceConfig cfg = ServiceConfig::from_env();
  if (app.count("--port")) cfg.port = a.port;
  if (app.count("--host")) cfg.host = a.host;
  if (app.count("--bundles")) cfg.bundles_dir = a.bundles;
  if (app.count("--static")) cfg.static_dir = a.static_dir;
  if (app.count("--max-megapixels")) cfg.max_megapixels = a.max_megapixels;
  cfg.validate();
  if (g.dry_run) {
    out << Json{{"command", "serve"},
                {"host", cfg.host},
                {"port", cfg.port},
                {"bundles", cfg.bundles_dir ? cfg.bundles_dir->string() : ""},
                {"static", cfg.static_dir ? cfg.static_dir->string() : ""},
                {"max_megapixels", cfg.max_megapixels}}
               .dump(2)
        << '\n';
    return kExitOk;
  }
  RestorationService svc(cfg);
  svc.listen();
  return kExitOk;
}

int classify(const std::exception& e, std::ostream& err) {
  err << "error: " << e.what() << '\n';
  if (dynamic_cast<const TrainingDiverged*>(&e)) return kExitInternal;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidDegradation*>(&e) ||
      dynamic_cast<const InvalidCondition*>(&e) || dynamic_cast<const DataError*>(&e) ||
      dynamic_cast<const ShapeError*>(&e) || dynamic_cast<const CheckpointIncompatible*>(&e) ||
      dynamic_cast<const CheckpointFormatError*>(&e)) {
    return kExitUser;
  }
  return kExitInternal;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Controllable image restoration: degrade, train, restore, interpolate, evaluate, serve", "modrestore");
  app.fallthrough();
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML or JSON config; [<subcommand>] sections, flags win");
  app.config_formatter(std::make_shared<ConfigAdapter>(&app));

  Global g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every stochastic step");
  app.add_flag("--dry-run", g.dry_run, "Validate and print the resolved plan without doing work");

  DegradeArgs degrade_args;
  TrainArgs train_args;
  RestoreArgs restore_args;
  InterpolateArgs interp_args;
  EvaluateArgs eval_args;
  ServeArgs serve_args;
  auto* degrade_cmd = app.add_subcommand("degrade", "Apply blur and noise to clean images");
  auto* train_cmd = app.add_subcommand("train", "Stage 1 / stage 2 training");
  auto* restore_cmd = app.add_subcommand("restore", "Restore one image");
  auto* interp_cmd = app.add_subcommand("interpolate", "Blend GAN and MSE parameters");
  auto* eval_cmd = app.add_subcommand("evaluate", "Grid evaluation with optional baselines");
  auto* serve_cmd = app.add_subcommand("serve", "Start the HTTP service");
  add_degrade(*degrade_cmd, degrade_args);
  add_train(*train_cmd, train_args);
  add_restore(*restore_cmd, restore_args);
  add_interpolate(*interp_cmd, interp_args);
  add_evaluate(*eval_cmd, eval_args);
  add_serve(*serve_cmd, serve_args);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUser;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (degrade_cmd->parsed()) return run_degrade(degrade_args, g, out);
    if (train_cmd->parsed()) return run_train(train_args, g, *train_cmd, out);
    if (restore_cmd->parsed()) return run_restore(restore_args, g, out);
    if (interp_cmd->parsed()) return run_interpolate(interp_args, g, out);
    if (eval_cmd->parsed()) return run_evaluate(eval_args, g, out, err);
    if (serve_cmd->parsed()) return run_serve(serve_args, g, *serve_cmd, out);
  } catch (const std::exception& e) {
    return classify(e, err);
  }
  return kExitInternal;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace modrestore
