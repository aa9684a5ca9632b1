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

#include <optional>

#include "deskvae/autodiff.hpp"
#include "deskvae/distributions.hpp"

namespace deskvae {

// Differentiable counterparts of the distribution primitives. The value paths
// call the same functions as the plain-tensor API; the backward passes use the
// closed-form partials.

/// Per-element KL(q || p) where each Gaussian is (mean, raw scale, transform).
inline Var gaussian_kl(const Var& q_mean, const Var& q_raw, const Var& p_mean, const Var& p_raw,
                       const ScaleTransform& tf) {
  const Shape s = q_mean->shape();
  require_same_shape(s, q_raw->shape(), "gaussian_kl");
  require_same_shape(s, p_mean->shape(), "gaussian_kl");
  require_same_shape(s, p_raw->shape(), "gaussian_kl");
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = gaussian_kl_with_grad(q_mean->value[i], q_raw->value[i], p_mean->value[i],
                                   p_raw->value[i], tf, tf)
                 .kl;
  return make_result(std::move(out), {q_mean, q_raw, p_mean, p_raw}, [tf](Node& self) {
    auto& ps = self.parents;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const GaussianKlGrad g = gaussian_kl_with_grad(ps[0]->value[i], ps[1]->value[i],
                                                     ps[2]->value[i], ps[3]->value[i], tf, tf);
      const double up = self.grad[i];
      const double partials[4] = {g.d_q_mean, g.d_q_raw, g.d_p_mean, g.d_p_raw};
      for (int j = 0; j < 4; ++j)
        if (ps[j]->requires_grad) ps[j]->grad_buffer()[i] += up * partials[j];
    }
  });
}

/// Reparameterized draw mean + t * sigma(raw) * eps. `temperature` is either a
/// scalar tensor or one value per sample element (broadcast over the batch).
inline Var gaussian_sample(const Var& mean, const Var& raw, const Tensor& eps,
                           const Tensor& temperature, const ScaleTransform& tf) {
  const Shape s = mean->shape();
  require_same_shape(s, raw->shape(), "gaussian_sample");
  require_same_shape(s, eps.shape(), "gaussian_sample");
  const std::size_t per = temperature.size() == 1 ? 0 : s.sample_size();
  if (per && temperature.size() != per) throw ShapeError("gaussian_sample: temperature shape");
  auto temp_at = [&temperature, per](std::size_t i) { return per ? temperature[i % per] : temperature[0]; };
  for (double t : temperature.values()) require_temperature(t);
  Tensor out(s);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = mean->value[i] + temp_at(i) * tf.sigma(raw->value[i]) * eps[i];
  return make_result(std::move(out), {mean, raw}, [eps, temperature, per, tf](Node& self) {
    Node& m = *self.parents[0];
    Node& r = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double t = per ? temperature[i % per] : temperature[0];
      if (m.requires_grad) m.grad_buffer()[i] += self.grad[i];
      if (r.requires_grad) r.grad_buffer()[i] += self.grad[i] * t * eps[i] * tf.dsigma(r.value[i]);
    }
  });
}

/// Per-pixel log-likelihood [N,1,H,W] of targets under the head output.
inline Var mol_log_prob(const Var& head, const MoLConfig& cfg, const ImageBatch& targets) {
  MoLParams params{cfg, head->value};
  Tensor out = mol_log_prob(params, targets);
  return make_result(std::move(out), {head}, [cfg, targets](Node& self) {
    Node& h = *self.parents[0];
    const Tensor g = mol_log_prob_backward(MoLParams{cfg, h.value}, targets, self.grad);
    Tensor& dst = h.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

inline Var bernoulli_log_prob(const Var& logits, const ImageBatch& targets) {
  Tensor out = bernoulli_log_prob(BernoulliParams{logits->value}, targets);
  return make_result(std::move(out), {logits}, [targets](Node& self) {
    Node& l = *self.parents[0];
    const Tensor g = bernoulli_log_prob_backward(BernoulliParams{l.value}, targets, self.grad);
    Tensor& dst = l.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

}  // namespace deskvae
