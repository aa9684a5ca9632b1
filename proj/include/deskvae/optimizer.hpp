// Copyright 2026 The deskvae Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "deskvae/autodiff.hpp"
#include "deskvae/error.hpp"

namespace deskvae {

enum class OptimizerKind { kAdamax, kAdam };

/// Moment buffers for Adamax. The plain-Adam baseline keeps its squared
/// second moment in `infinity_norm`.
struct AdamaxState {
  OptimizerKind kind = OptimizerKind::kAdamax;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> infinity_norm;

  friend bool operator==(const AdamaxState&, const AdamaxState&) = default;
};

struct UpdateResult {
  bool applied = false;
  /// Largest |delta| over all parameter entries (0 when rejected).
  double max_abs_update = 0.0;
};

namespace detail {

inline bool all_finite(const std::vector<const Tensor*>& grads) {
  for (const Tensor* g : grads) {
    if (!g) continue;
    for (double v : g->values())
      if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace detail

/// One optimizer update. grads[i] may be null (treated as zero). Non-finite
/// gradients reject the update and leave everything untouched.
inline UpdateResult optimizer_step(AdamaxState& state, const std::vector<Tensor*>& params,
                                   const std::vector<const Tensor*>& grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: params/grads count mismatch");
  if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  UpdateResult result;
  if (!detail::all_finite(grads)) return result;
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.infinity_norm.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size())
    throw ShapeError("optimizer: state does not match parameter list");
  const std::int64_t t = state.step + 1;
  const double b1 = state.beta1, b2 = state.beta2, eps = state.epsilon;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& u = state.infinity_norm[i];
    require_same_shape(m.shape(), p.shape(), "optimizer state");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i] ? (*grads[i])[j] : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      double delta;
      if (state.kind == OptimizerKind::kAdamax) {
        u[j] = std::max(b2 * u[j], std::abs(g));
        delta = lr * m[j] / (bias1 * (u[j] + eps));
      } else {
        u[j] = b2 * u[j] + (1.0 - b2) * g * g;
        delta = lr * (m[j] / bias1) / (std::sqrt(u[j] / bias2) + eps);
      }
      p[j] -= delta;
      result.max_abs_update = std::max(result.max_abs_update, std::abs(delta));
    }
  }
  state.step = t;
  result.applied = true;
  return result;
}

/// Adamax: m <- b1 m + (1-b1) g; u <- max(b2 u, |g|);
/// p <- p - lr m / ((1 - b1^t)(u + eps)).
inline UpdateResult adamax_step(AdamaxState& state, const std::vector<Var>& params, double lr) {
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  for (const auto& p : params) {
    values.push_back(&p->value);
    grads.push_back(p->grad.empty() ? nullptr : &p->grad);
  }
  return optimizer_step(state, values, grads, lr);
}

inline double global_grad_norm(const std::vector<Var>& params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p->grad.values()) sq += g * g;
  return std::sqrt(sq);
}

/// Cosine decay from base_lr at step 0 to floor_lr at total_steps, flat after.
inline double cosine_lr(std::int64_t step, double base_lr, std::int64_t total_steps, double floor_lr) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step < 0) throw ConfigError("cosine_lr: step must be non-negative");
  const double progress = static_cast<double>(std::min(step, total_steps)) / static_cast<double>(total_steps);
  return floor_lr + 0.5 * (base_lr - floor_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Skips updates whose global gradient norm exceeds the threshold (loss in
/// nats/dim). Non-finite norms are always skipped.
struct SkipGuard {
  double threshold = std::numeric_limits<double>::infinity();
  std::int64_t skipped_count = 0;

  friend bool operator==(const SkipGuard&, const SkipGuard&) = default;
};

enum class GuardOutcome { kApplied, kSkipped };

template <typename ApplyFn>
GuardOutcome guarded_apply(SkipGuard& guard, double grad_norm, ApplyFn&& apply) {
  if (!(grad_norm <= guard.threshold)) {
    ++guard.skipped_count;
    return GuardOutcome::kSkipped;
  }
  apply();
  return GuardOutcome::kApplied;
}

}  // namespace deskvae
