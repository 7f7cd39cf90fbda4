#pragma once

#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>

#include "modrestore/model.hpp"
#include "modrestore/parameter_tree.hpp"

namespace modrestore {

/// (1 - alpha) * gan + alpha * mse for every entry, buffers included,
/// evaluated as gan + alpha * (mse - gan) so identical inputs come back
/// unchanged. alpha = 0 and alpha = 1 return exact copies of the endpoints.
template <typename Scalar>
ParameterTree<Scalar> interpolate_params(const ParameterTree<Scalar>& gan, const ParameterTree<Scalar>& mse,
                                         double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("interpolation alpha must lie in [0,1]");
  const auto diff = gan.manifest_diff(mse);
  if (!diff.empty()) {
    std::string keys;
    for (const auto& k : diff) keys += (keys.empty() ? "" : ", ") + k;
    throw CheckpointIncompatible("parameter manifests differ: " + keys, diff);
  }
  if (alpha == 0.0) return gan;
  if (alpha == 1.0) return mse;
  ParameterTree<Scalar> out = gan.zeros_like();
  const auto a = static_cast<Scalar>(alpha);
  for (auto& [name, e] : out) {
    const auto& g = gan.values(name);
    e.values = g + a * (mse.values(name) - g);
  }
  return out;
}

/// Interpolates generator and condition network jointly.
RestorationModel interpolate_models(const RestorationModel& gan, const RestorationModel& mse, double alpha);

/// alpha snapped to the 0.01 grid; returns the grid index 0..100.
int quantize_alpha(double alpha);

/// Interpolated models keyed by (gan id, mse id, quantized alpha). Entries
/// are immutable; concurrent requests for the same key share one build.
class InterpolationCache {
 public:
  explicit InterpolationCache(std::size_t capacity = 256) : capacity_(capacity) {}

  std::shared_ptr<const RestorationModel> get(const std::string& gan_id, const RestorationModel& gan,
                                              const std::string& mse_id, const RestorationModel& mse, double alpha);

  std::size_t size() const;
  std::uint64_t builds() const;
  void clear();

 private:
  using Key = std::tuple<std::string, std::string, int>;
  mutable std::mutex mu_;
  std::map<Key, std::shared_future<std::shared_ptr<const RestorationModel>>> entries_;
  std::size_t capacity_;
  std::uint64_t builds_ = 0;
};

/// Restores `img` with the GAN/MSE blend at `alpha` (0 = GAN, 1 = MSE).
/// With a cache, alpha is quantized to 0.01 and the blend is reused.
Image blend_restore(const Image& img, const ConditionVector& z, double alpha, const RestorationModel& gan,
                    const RestorationModel& mse, InterpolationCache* cache = nullptr, const std::string& gan_id = "gan",
                    const std::string& mse_id = "mse");

}  // namespace modrestore
