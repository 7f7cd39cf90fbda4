#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "modrestore/tensor.hpp"

namespace modrestore {

/// Generator objective weights for the adversarial stage.
struct LossWeights {
  double perceptual = 1.0;
  double gan = 0.005;
  double mse = 0.01;
};

/// percep + 0.005 gan + 0.01 mse with the default weights.
inline double total_g_loss(double percep, double gan, double mse, const LossWeights& w = {}) {
  return w.perceptual * percep + w.gan * gan + w.mse * mse;
}

/// Mean of squared differences over every element.
template <typename Scalar>
double mse_loss(const FeatureMap<Scalar>& pred, const FeatureMap<Scalar>& target) {
  require_same_shape(pred, target, "mse_loss");
  return static_cast<double>((pred.data - target.data).squaredNorm()) / static_cast<double>(pred.size());
}

/// d(mse)/d(pred), with the mean taken over `element_count` elements
/// (pass the whole batch's count when averaging over a batch).
template <typename Scalar>
FeatureMap<Scalar> mse_grad(const FeatureMap<Scalar>& pred, const FeatureMap<Scalar>& target,
                            double element_count) {
  require_same_shape(pred, target, "mse_grad");
  return FeatureMap<Scalar>(pred.channels, pred.height, pred.width,
                            (pred.data - target.data) * static_cast<Scalar>(2.0 / element_count));
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Binary cross-entropy of sigmoid(logit) against a 0/1 label.
inline double bce_with_logit(double logit, bool label) { return label ? softplus(-logit) : softplus(logit); }
inline double bce_with_logit_grad(double logit, bool label) { return sigmoid(logit) - (label ? 1.0 : 0.0); }

struct GanLosses {
  double d_loss = 0.0;
  double g_loss = 0.0;
};

/// d = BCE(real, 1) + BCE(fake, 0); g = BCE(fake, 1) (non-saturating).
inline GanLosses gan_losses(double logit_real, double logit_fake) {
  return {bce_with_logit(logit_real, true) + bce_with_logit(logit_fake, false), bce_with_logit(logit_fake, true)};
}

/// Batch mean of BCE against a constant label, with its gradient per logit.
template <typename Scalar>
double bce_batch(const Vector<Scalar>& logits, bool label, Vector<Scalar>* grad) {
  const auto n = static_cast<double>(logits.size());
  double loss = 0.0;
  if (grad) grad->resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double l = static_cast<double>(logits[i]);
    loss += bce_with_logit(l, label);
    if (grad) (*grad)[i] = static_cast<Scalar>(bce_with_logit_grad(l, label) / n);
  }
  return loss / n;
}

}  // namespace modrestore
