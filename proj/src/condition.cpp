#include "modrestore/condition.hpp"

#include <cmath>

namespace modrestore {

void ConditionVector::validate() const {
  for (double v : z) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw InvalidCondition("condition vector components must lie in [0,1], got " + std::to_string(v));
    }
  }
}

ConditionVector encode_condition(const DegradationSpec& spec) {
  spec.validate();
  return {{spec.blur_r / kMaxBlurWidth, spec.noise_sigma / kMaxNoiseSigma}};
}

DegradationSpec decode_condition(const ConditionVector& z) {
  z.validate();
  return {kMaxBlurWidth * z.z[0], kMaxNoiseSigma * z.z[1]};
}

}  // namespace modrestore
