#include "modrestore/service.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>

#include "modrestore/condition.hpp"
#include "modrestore/image_io.hpp"

#include <httplib.h>

namespace modrestore {

namespace {

constexpr int kServicePadMultiple = 4;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

}  // namespace

ServiceConfig ServiceConfig::from_env(ServiceConfig base) {
  if (auto v = env("MODRESTORE_HOST")) base.host = *v;
  if (auto v = env("MODRESTORE_PORT")) {
    try {
      std::size_t used = 0;
      base.port = std::stoi(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("MODRESTORE_PORT is not an integer: " + *v);
    }
  }
  if (auto v = env("MODRESTORE_BUNDLES")) base.bundles_dir = *v;
  if (auto v = env("MODRESTORE_STATIC")) base.static_dir = *v;
  if (auto v = env("MODRESTORE_MAX_MEGAPIXELS")) {
    try {
      base.max_megapixels = std::stod(*v);
    } catch (const std::exception&) {
      throw ConfigError("MODRESTORE_MAX_MEGAPIXELS is not a number: " + *v);
    }
  }
  return base;
}

void ServiceConfig::validate() const {
  if (port < 0 || port > 65535) throw ConfigError("port must lie in [0,65535]");
  if (!(max_megapixels > 0.0)) throw ConfigError("max megapixels must be positive");
  if (cache_capacity == 0) throw ConfigError("interpolation cache capacity must be positive");
  if (bundles_dir && !std::filesystem::is_directory(*bundles_dir))
    throw ConfigError("bundle directory not found: " + bundles_dir->string());
  if (static_dir && !std::filesystem::is_directory(*static_dir))
    throw ConfigError("static directory not found: " + static_dir->string());
}

void check_bundle_manifests(const RestorationModel& gan, const RestorationModel& mse) {
  std::vector<std::string> keys;
  if (!(gan.generator.config == mse.generator.config)) keys.push_back("generator.config");
  for (const auto& k : gan.generator.tree.manifest_diff(mse.generator.tree)) keys.push_back("generator." + k);
  if (gan.conditional() != mse.conditional()) {
    keys.push_back("condition");
  } else if (gan.condition) {
    for (const auto& k : gan.condition->tree.manifest_diff(mse.condition->tree)) keys.push_back("condition." + k);
  }
  if (!keys.empty()) throw CheckpointIncompatible("GAN and MSE manifests differ", keys);
}

ModelBundle load_bundle(const std::filesystem::path& dir, std::string id) {
  if (!std::filesystem::is_directory(dir)) throw DataError("bundle directory not found: " + dir.string());
  ModelBundle b;
  b.id = id.empty() ? std::filesystem::absolute(dir).lexically_normal().filename().string() : std::move(id);
  if (b.id.empty()) b.id = std::filesystem::absolute(dir).lexically_normal().parent_path().filename().string();
  b.gan = load_model_dir(dir / "gan");
  b.mse = load_model_dir(dir / "mse");
  check_bundle_manifests(b.gan, b.mse);
  if (std::filesystem::exists(dir / "bundle.json")) {
    std::ifstream in(dir / "bundle.json");
    try {
      b.config = Json::parse(in);
    } catch (const Json::exception& e) {
      throw DataError("invalid bundle.json in " + dir.string() + ": " + e.what());
    }
  }
  b.source = dir;
  b.loaded_at = utc_now();
  return b;
}

Json bundle_descriptor(const ModelBundle& b) {
  return Json{{"id", b.id},
              {"conditional", b.gan.conditional()},
              {"generator", b.gan.generator.config},
              {"sites", b.gan.generator.sites().size()},
              {"config", b.config},
              {"source", b.source.string()},
              {"loaded_at", b.loaded_at}};
}

std::shared_ptr<const ModelBundle> BundleRegistry::add(ModelBundle bundle) {
  if (bundle.id.empty()) throw ConfigError("bundle id must not be empty");
  check_bundle_manifests(bundle.gan, bundle.mse);
  std::unique_lock lock(mu_);
  bundle.instance = next_instance_++;
  auto ptr = std::make_shared<const ModelBundle>(std::move(bundle));
  bundles_[ptr->id] = ptr;
  return ptr;
}

std::shared_ptr<const ModelBundle> BundleRegistry::get(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = bundles_.find(id);
  return it == bundles_.end() ? nullptr : it->second;
}

std::vector<std::shared_ptr<const ModelBundle>> BundleRegistry::list() const {
  std::shared_lock lock(mu_);
  std::vector<std::shared_ptr<const ModelBundle>> out;
  for (const auto& [id, b] : bundles_) out.push_back(b);
  return out;
}

std::size_t BundleRegistry::size() const {
  std::shared_lock lock(mu_);
  return bundles_.size();
}

std::vector<std::string> BundleRegistry::load_root(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<std::string> errors;
  for (const auto& d : dirs) {
    try {
      add(load_bundle(d));
    } catch (const std::exception& e) {
      errors.push_back(d.filename().string() + ": " + e.what());
    }
  }
  return errors;
}

Json RestoreResult::metadata() const {
  return Json{{"model", model},
              {"width", width},
              {"height", height},
              {"alpha", alpha},
              {"z", {z.z[0], z.z[1]}},
              {"blur", decoded.blur_r},
              {"sigma", decoded.noise_sigma},
              {"timing_ms",
               {{"decode", timing.decode_ms}, {"pad", timing.pad_ms}, {"infer", timing.infer_ms}, {"encode", timing.encode_ms}}}};
}

RestorationService::RestorationService(ServiceConfig cfg) : cfg_(std::move(cfg)), cache_(cfg_.cache_capacity) {
  cfg_.validate();
}

std::shared_ptr<const ModelBundle> RestorationService::resolve(const std::string& id) const {
  if (id.empty()) {
    auto all = registry_.list();
    if (all.size() == 1) return all.front();
    if (all.empty()) throw ServiceError(404, "UNKNOWN_MODEL", "no model bundles are loaded");
    Json ids = Json::array();
    for (const auto& b : all) ids.push_back(b->id);
    throw ServiceError(400, "MODEL_REQUIRED", "several bundles are loaded; name one", {{"models", ids}});
  }
  auto b = registry_.get(id);
  if (!b) throw ServiceError(404, "UNKNOWN_MODEL", "unknown model '" + id + "'");
  return b;
}

RestoreResult RestorationService::restore(const RestoreRequest& req) {
  try {
    req.z.validate();
  } catch (const InvalidCondition& e) {
    throw ServiceError(400, "INVALID_Z", e.what());
  }
  if (!(req.alpha >= 0.0 && req.alpha <= 1.0))
    throw ServiceError(400, "INVALID_ALPHA", "alpha must lie in [0,1]");
  const auto bundle = resolve(req.model);

  RestoreResult res;
  res.model = bundle->id;
  res.z = req.z;
  res.decoded = decode_condition(req.z);
  res.alpha = quantize_alpha(req.alpha) / 100.0;

  auto t0 = std::chrono::steady_clock::now();
  Image img;
  try {
    img = decode_png(req.image);
  } catch (const ImageDecodeError& e) {
    throw ServiceError(400, "IMAGE_DECODE", e.what());
  }
  const double megapixels = static_cast<double>(img.height) * img.width / 1e6;
  if (megapixels > cfg_.max_megapixels) {
    throw ServiceError(413, "PAYLOAD_TOO_LARGE", "image exceeds the megapixel limit",
                       {{"megapixels", megapixels}, {"limit", cfg_.max_megapixels}});
  }
  res.width = img.width;
  res.height = img.height;
  res.timing.decode_ms = ms_since(t0);

  try {
    t0 = std::chrono::steady_clock::now();
    const auto key = std::to_string(bundle->instance) + ":" + bundle->id;
    const auto blended = cache_.get(key + "/gan", bundle->gan, key + "/mse", bundle->mse, res.alpha);
    const int multiple = std::max(kServicePadMultiple, blended->generator.config.spatial_multiple());
    const Image padded = pad_to_multiple(img, multiple);
    res.timing.pad_ms = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    Image out = blended->forward(padded, req.z);
    out = clamp01(crop(out, 0, 0, img.height, img.width));
    res.timing.infer_ms = ms_since(t0);

    t0 = std::chrono::steady_clock::now();
    res.png = encode_png(out);
    res.timing.encode_ms = ms_since(t0);
  } catch (const ServiceError&) {
    throw;
  } catch (const std::exception& e) {
    throw ServiceError(500, "INFERENCE_FAILED", "restoration failed", {{"what", e.what()}});
  }
  ++served_;
  return res;
}

namespace {

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                const Json& detail = nullptr) {
  Json body{{"error", {{"code", code}, {"message", message}}}};
  if (!detail.is_null()) body["error"]["detail"] = detail;
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.code(), e.what(), e.detail());
    } catch (const std::exception& e) {
      send_error(res, 500, "INTERNAL", e.what());
    }
  };
}

std::string form_field(const httplib::Request& req, const std::string& key) {
  if (req.has_file(key)) return req.get_file_value(key).content;
  if (req.has_param(key)) return req.get_param_value(key);
  return {};
}

ConditionVector parse_z(const std::string& text) {
  if (text.empty()) throw ServiceError(400, "INVALID_Z", "missing z");
  Json j;
  try {
    j = Json::parse(text.find('[') == std::string::npos ? "[" + text + "]" : text);
  } catch (const Json::exception&) {
    throw ServiceError(400, "INVALID_Z", "z must be two numbers, got '" + text + "'");
  }
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ServiceError(400, "INVALID_Z", "z must be two numbers, got '" + text + "'");
  return ConditionVector{{j[0].get<double>(), j[1].get<double>()}};
}

double parse_alpha(const std::string& text) {
  if (text.empty()) return 0.0;
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception&) {
    throw ServiceError(400, "INVALID_ALPHA", "alpha must be a number, got '" + text + "'");
  }
  if (!j.is_number()) throw ServiceError(400, "INVALID_ALPHA", "alpha must be a number, got '" + text + "'");
  return j.get<double>();
}

std::string fmt(double v, const char* f = "%g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Json parse_json_body(const httplib::Request& req) {
  try {
    return Json::parse(req.body);
  } catch (const Json::exception&) {
    throw ServiceError(400, "INVALID_REQUEST", "request body must be JSON");
  }
}

}  // namespace

void RestorationService::mount(httplib::Server& server) {
  const std::size_t max_bytes = static_cast<std::size_t>(cfg_.max_megapixels * 1e6 * 4.0) + (1u << 20);
  server.set_payload_max_length(max_bytes);
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Expose-Headers",
                               "X-Model, X-Alpha, X-Z, X-Decoded-Blur, X-Decoded-Sigma, X-Restore-Metadata, "
                               "Server-Timing"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server.Get("/v1/health", guarded([this](const httplib::Request&, httplib::Response& res) {
               res.set_content(Json{{"status", "ok"},
                                    {"models", registry_.size()},
                                    {"requests", served_.load()},
                                    {"cache_entries", cache_.size()}}
                                   .dump(),
                               "application/json");
             }));

  server.Get("/v1/models", guarded([this](const httplib::Request&, httplib::Response& res) {
               Json out = Json::array();
               for (const auto& b : registry_.list()) out.push_back(bundle_descriptor(*b));
               res.set_content(out.dump(), "application/json");
             }));

  server.Get(R"(/v1/models/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
               res.set_content(bundle_descriptor(*resolve(req.matches[1])).dump(), "application/json");
             }));

  server.Post("/v1/models", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const Json body = parse_json_body(req);
                if (!body.is_object() || !body.contains("path") || !body["path"].is_string())
                  throw ServiceError(400, "INVALID_REQUEST", "body needs a string 'path'");
                const std::string id = body.value("id", std::string());
                ModelBundle bundle;
                try {
                  bundle = load_bundle(body["path"].get<std::string>(), id);
                } catch (const CheckpointIncompatible& e) {
                  throw ServiceError(422, "MANIFEST_MISMATCH", e.what(), {{"keys", e.keys()}});
                } catch (const CheckpointFormatError& e) {
                  throw ServiceError(422, "BAD_CHECKPOINT", e.what());
                } catch (const Error& e) {
                  throw ServiceError(400, "INVALID_BUNDLE", e.what());
                }
                const auto b = registry_.add(std::move(bundle));
                res.status = 201;
                res.set_content(bundle_descriptor(*b).dump(), "application/json");
              }));

  server.Post("/v1/restore", guarded([this](const httplib::Request& req, httplib::Response& res) {
                if (!req.is_multipart_form_data() || !req.has_file("image"))
                  throw ServiceError(400, "INVALID_REQUEST", "expected multipart/form-data with an 'image' part");
                RestoreRequest r;
                r.image = req.get_file_value("image").content;
                r.z = parse_z(form_field(req, "z"));
                r.alpha = parse_alpha(form_field(req, "alpha"));
                r.model = form_field(req, "model");
                const auto out = restore(r);
                res.set_header("X-Model", out.model);
                res.set_header("X-Alpha", fmt(out.alpha, "%.2f"));
                res.set_header("X-Z", fmt(out.z.z[0]) + "," + fmt(out.z.z[1]));
                res.set_header("X-Decoded-Blur", fmt(out.decoded.blur_r));
                res.set_header("X-Decoded-Sigma", fmt(out.decoded.noise_sigma));
                res.set_header("X-Restore-Metadata", out.metadata().dump());
                res.set_header("Server-Timing", "decode;dur=" + fmt(out.timing.decode_ms, "%.3f") +
                                                    ", pad;dur=" + fmt(out.timing.pad_ms, "%.3f") +
                                                    ", infer;dur=" + fmt(out.timing.infer_ms, "%.3f") +
                                                    ", encode;dur=" + fmt(out.timing.encode_ms, "%.3f"));
                res.set_content(out.png, "image/png");
              }));

  server.Post("/v1/interpolate", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const Json body = parse_json_body(req);
                if (!body.is_object() || !body.contains("alpha") || !body["alpha"].is_number())
                  throw ServiceError(400, "INVALID_ALPHA", "body needs a numeric 'alpha'");
                const double alpha = body["alpha"].get<double>();
                if (!(alpha >= 0.0 && alpha <= 1.0)) throw ServiceError(400, "INVALID_ALPHA", "alpha must lie in [0,1]");
                const auto b = resolve(body.value("model", std::string()));
                const double q = quantize_alpha(alpha) / 100.0;
                const auto key = std::to_string(b->instance) + ":" + b->id;
                cache_.get(key + "/gan", b->gan, key + "/mse", b->mse, q);
                res.set_content(Json{{"model", b->id}, {"alpha", q}, {"cache_entries", cache_.size()}}.dump(),
                                "application/json");
              }));

  if (cfg_.static_dir) server.set_mount_point("/", cfg_.static_dir->string());
}

void RestorationService::listen() {
  if (cfg_.bundles_dir) {
    for (const auto& err : registry_.load_root(*cfg_.bundles_dir)) std::cerr << "skipping bundle " << err << '\n';
  }
  httplib::Server server;
  mount(server);
  std::cerr << "serving " << registry_.size() << " bundle(s) on " << cfg_.host << ':' << cfg_.port << '\n';
  if (!server.listen(cfg_.host, cfg_.port)) throw Error("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port));
}

}  // namespace modrestore
