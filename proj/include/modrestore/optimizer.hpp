#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "modrestore/parameter_tree.hpp"

namespace modrestore {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one parameter tree.
template <typename Scalar>
struct AdamState {
  ParameterTree<Scalar> m;
  ParameterTree<Scalar> v;
  std::int64_t step = 0;

  static AdamState for_tree(const ParameterTree<Scalar>& params) { return {params.zeros_like(), params.zeros_like(), 0}; }
};

/// One bias-corrected Adam update of every trainable entry; buffers are skipped.
template <typename Scalar>
void adam_step(ParameterTree<Scalar>& params, const ParameterTree<Scalar>& grads, AdamState<Scalar>& state,
               double lr, const AdamOptions& opt = {}) {
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(opt.beta1);
  const auto b2 = static_cast<Scalar>(opt.beta2);
  for (auto& [name, entry] : params) {
    if (entry.kind != ParamKind::Parameter) continue;
    const auto& g = grads.values(name);
    auto& m = state.m.values(name);
    auto& v = state.v.values(name);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    const auto m_hat = m.array() / static_cast<Scalar>(c1);
    const auto v_hat = v.array() / static_cast<Scalar>(c2);
    entry.values.array() -= static_cast<Scalar>(lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(opt.eps));
  }
}

/// Step-decay learning-rate schedule.
struct LrSchedule {
  double initial = 5e-4;
  /// Halve every `period` iterations when > 0, otherwise at each milestone.
  std::int64_t period = 0;
  std::vector<std::int64_t> milestones;

  double at(std::int64_t iteration) const;

  /// 5e-4 halved every 200k iterations.
  static LrSchedule stage1();
  /// 5e-4 halved at 50k, 100k, 200k, 300k and 400k.
  static LrSchedule stage2();
};

/// Schedule for training stage 1 or 2 at `iteration`.
double lr_at(int stage, std::int64_t iteration);

}  // namespace modrestore
