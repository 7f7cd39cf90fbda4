#include "modrestore/interpolation.hpp"

#include <cmath>

namespace modrestore {

RestorationModel interpolate_models(const RestorationModel& gan, const RestorationModel& mse, double alpha) {
  if (!(gan.generator.config == mse.generator.config)) {
    throw CheckpointIncompatible("generator configs differ", {"config"});
  }
  if (gan.conditional() != mse.conditional()) {
    throw CheckpointIncompatible("only one model has a condition network", {"condition"});
  }
  RestorationModel out{{gan.generator.config, interpolate_params(gan.generator.tree, mse.generator.tree, alpha)},
                       std::nullopt};
  if (gan.condition) {
    if (gan.condition->sites != mse.condition->sites) {
      throw CheckpointIncompatible("condition network site manifests differ", {"sites"});
    }
    out.condition = ConditionNetParams<float>{gan.condition->target, gan.condition->sites,
                                              interpolate_params(gan.condition->tree, mse.condition->tree, alpha)};
  }
  return out;
}

int quantize_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("interpolation alpha must lie in [0,1]");
  return static_cast<int>(std::lround(alpha * 100.0));
}

std::shared_ptr<const RestorationModel> InterpolationCache::get(const std::string& gan_id, const RestorationModel& gan,
                                                                const std::string& mse_id, const RestorationModel& mse,
                                                                double alpha) {
  const int q = quantize_alpha(alpha);
  const Key key{gan_id, mse_id, q};
  std::promise<std::shared_ptr<const RestorationModel>> promise;
  std::shared_future<std::shared_ptr<const RestorationModel>> future;
  bool builder = false;
  {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it != entries_.end()) {
      future = it->second;
    } else {
      if (entries_.size() >= capacity_) entries_.clear();
      future = promise.get_future().share();
      entries_.emplace(key, future);
      ++builds_;
      builder = true;
    }
  }
  if (builder) {
    try {
      promise.set_value(std::make_shared<const RestorationModel>(interpolate_models(gan, mse, q / 100.0)));
    } catch (...) {
      promise.set_exception(std::current_exception());
      std::lock_guard lock(mu_);
      entries_.erase(key);
    }
  }
  return future.get();
}

std::size_t InterpolationCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

std::uint64_t InterpolationCache::builds() const {
  std::lock_guard lock(mu_);
  return builds_;
}

void InterpolationCache::clear() {
  std::lock_guard lock(mu_);
  entries_.clear();
}

Image blend_restore(const Image& img, const ConditionVector& z, double alpha, const RestorationModel& gan,
                    const RestorationModel& mse, InterpolationCache* cache, const std::string& gan_id,
                    const std::string& mse_id) {
  z.validate();
  if (cache) return cache->get(gan_id, gan, mse_id, mse, alpha)->restore(img, z);
  return interpolate_models(gan, mse, alpha).restore(img, z);
}

}  // namespace modrestore
