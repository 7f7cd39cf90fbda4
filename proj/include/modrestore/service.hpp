#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "modrestore/interpolation.hpp"
#include "modrestore/model.hpp"
#include "modrestore/serialization.hpp"

namespace httplib {
class Server;
}

namespace modrestore {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> bundles_dir;
  std::optional<std::filesystem::path> static_dir;  // web UI assets, served at /
  double max_megapixels = 4.0;
  std::size_t cache_capacity = 256;

  /// Overrides from MODRESTORE_HOST, MODRESTORE_PORT, MODRESTORE_BUNDLES,
  /// MODRESTORE_STATIC and MODRESTORE_MAX_MEGAPIXELS.
  static ServiceConfig from_env(ServiceConfig base);
  static ServiceConfig from_env() { return from_env(ServiceConfig()); }
  void validate() const;
};

/// A GAN/MSE pair with identical manifests, read-only once registered.
struct ModelBundle {
  std::string id;
  RestorationModel gan;
  RestorationModel mse;
  Json config = Json::object();  // bundle.json, echoed in descriptors
  std::filesystem::path source;
  std::string loaded_at;  // UTC, ISO 8601
  std::uint64_t instance = 0;
};

/// `<dir>/gan` and `<dir>/mse` model directories plus an optional
/// `<dir>/bundle.json`. Mismatched manifests throw CheckpointIncompatible
/// listing the differing keys.
ModelBundle load_bundle(const std::filesystem::path& dir, std::string id = {});
void check_bundle_manifests(const RestorationModel& gan, const RestorationModel& mse);
Json bundle_descriptor(const ModelBundle& b);

/// Single writer, many readers. Bundles are handed out as shared pointers
/// to const and never change after registration.
class BundleRegistry {
 public:
  std::shared_ptr<const ModelBundle> add(ModelBundle bundle);
  std::shared_ptr<const ModelBundle> get(const std::string& id) const;
  std::vector<std::shared_ptr<const ModelBundle>> list() const;  // sorted by id
  std::size_t size() const;

  /// Loads every bundle directory under `root`; returns one message per
  /// directory that failed.
  std::vector<std::string> load_root(const std::filesystem::path& root);

 private:
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<const ModelBundle>> bundles_;
  std::uint64_t next_instance_ = 1;
};

/// Error surfaced to clients as {"error": {"code", "message", "detail"}}.
class ServiceError : public Error {
 public:
  ServiceError(int status, std::string code, const std::string& message, Json detail = nullptr)
      : Error(message), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const Json& detail() const noexcept { return detail_; }

 private:
  int status_;
  std::string code_;
  Json detail_;
};

struct RestoreRequest {
  std::string image;  // PNG bytes
  ConditionVector z;
  double alpha = 0.0;
  std::string model;  // empty: the only registered bundle
};

struct RestoreTiming {
  double decode_ms = 0.0;
  double pad_ms = 0.0;
  double infer_ms = 0.0;
  double encode_ms = 0.0;
};

struct RestoreResult {
  std::string png;
  std::string model;
  int width = 0;
  int height = 0;
  double alpha = 0.0;  // after quantization to 0.01
  ConditionVector z;
  DegradationSpec decoded;
  RestoreTiming timing;

  Json metadata() const;
};

class RestorationService {
 public:
  explicit RestorationService(ServiceConfig cfg = {});

  BundleRegistry& registry() noexcept { return registry_; }
  const ServiceConfig& config() const noexcept { return cfg_; }
  const InterpolationCache& cache() const noexcept { return cache_; }

  /// decode -> pad to a multiple of 4 -> blend at the quantized alpha ->
  /// crop -> clamp -> encode. Throws ServiceError.
  RestoreResult restore(const RestoreRequest& req);

  std::uint64_t requests_served() const noexcept { return served_.load(); }

  /// Registers the /v1 routes (and static assets when configured).
  void mount(httplib::Server& server);
  /// Loads configured bundles and serves until stopped.
  void listen();

 private:
  std::shared_ptr<const ModelBundle> resolve(const std::string& id) const;

  ServiceConfig cfg_;
  BundleRegistry registry_;
  InterpolationCache cache_;
  std::atomic<std::uint64_t> served_{0};
};

}  // namespace modrestore
