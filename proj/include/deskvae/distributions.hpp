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

#include "deskvae/error.hpp"
#include "deskvae/rng.hpp"
#include "deskvae/tensor.hpp"

namespace deskvae {

// ----------------------------------------------------------------------------
// Scalar helpers.

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline void require_positive_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw ConfigError("smoothing beta must be a finite positive number");
}

/// (1/beta) * log(1 + exp(beta * y)).
inline double smoothed_softplus(double y, double beta) {
  require_positive_beta(beta);
  return softplus(beta * y) / beta;
}

/// Derivative of smoothed_softplus in y; always in (0, 1).
inline double smoothed_softplus_grad(double y, double beta) {
  require_positive_beta(beta);
  return sigmoid(beta * y);
}

/// log(smoothed_softplus(y, beta)) without underflow for very negative beta*y.
inline double log_smoothed_softplus(double y, double beta) {
  const double by = beta * y;
  if (by < -30.0) return by + std::log1p(-0.5 * std::exp(by)) - std::log(beta);
  return std::log(softplus(by)) - std::log(beta);
}

inline Tensor smoothed_softplus(const Tensor& y, double beta) {
  require_positive_beta(beta);
  Tensor out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = softplus(beta * y[i]) / beta;
  return out;
}

// ----------------------------------------------------------------------------
// Diagonal Gaussians.

/// Maps an unconstrained activation to a standard deviation: either the
/// smoothed softplus or the plain exponential (log-sigma) parameterization.
struct ScaleTransform {
  enum class Kind { kSmoothedSoftplus, kExponential };

  Kind kind = Kind::kSmoothedSoftplus;
  double beta = std::numbers::ln2;

  static ScaleTransform smoothed(double beta) {
    require_positive_beta(beta);
    return ScaleTransform{Kind::kSmoothedSoftplus, beta};
  }
  static ScaleTransform exponential() { return ScaleTransform{Kind::kExponential, 1.0}; }

  double sigma(double y) const {
    return kind == Kind::kSmoothedSoftplus ? softplus(beta * y) / beta : std::exp(y);
  }
  double dsigma(double y) const {
    return kind == Kind::kSmoothedSoftplus ? sigmoid(beta * y) : std::exp(y);
  }
  double log_sigma(double y) const {
    return kind == Kind::kSmoothedSoftplus ? log_smoothed_softplus(y, beta) : y;
  }

  friend bool operator==(const ScaleTransform&, const ScaleTransform&) = default;
};

struct SmoothedGaussian {
  Tensor raw_mean;
  Tensor raw_scale;
  ScaleTransform transform;

  const Tensor& mu() const { return raw_mean; }
  Tensor sigma() const {
    Tensor out(raw_scale.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = transform.sigma(raw_scale[i]);
    return out;
  }
};

struct GaussianKlGrad {
  double kl;
  double d_q_mean;
  double d_q_raw;
  double d_p_mean;
  double d_p_raw;
};

/// KL(N(qm, qs^2) || N(pm, ps^2)) in nats.
inline double gaussian_kl(double q_mean, double q_sigma, double p_mean, double p_sigma) {
  const double r = q_sigma / p_sigma;
  const double d = (q_mean - p_mean) / p_sigma;
  return 0.5 * (r - 1.0) * (r + 1.0) - std::log(r) + 0.5 * d * d;
}

/// KL and its partials with respect to the raw (pre-transform) parameters.
inline GaussianKlGrad gaussian_kl_with_grad(double q_mean, double q_raw, double p_mean,
                                            double p_raw, const ScaleTransform& q_tf,
                                            const ScaleTransform& p_tf) {
  const double qs = q_tf.sigma(q_raw);
  const double ps = p_tf.sigma(p_raw);
  const double diff = q_mean - p_mean;
  const double ps2 = ps * ps;
  const double r = qs / ps;
  const double log_r = q_tf.log_sigma(q_raw) - p_tf.log_sigma(p_raw);
  GaussianKlGrad g{};
  g.kl = 0.5 * (r - 1.0) * (r + 1.0) - log_r + 0.5 * diff * diff / ps2;
  g.d_q_mean = diff / ps2;
  g.d_p_mean = -g.d_q_mean;
  const double d_qs = -1.0 / qs + qs / ps2;
  const double d_ps = 1.0 / ps - (qs * qs + diff * diff) / (ps2 * ps);
  g.d_q_raw = d_qs * q_tf.dsigma(q_raw);
  g.d_p_raw = d_ps * p_tf.dsigma(p_raw);
  return g;
}

inline Tensor gaussian_kl(const SmoothedGaussian& q, const SmoothedGaussian& p) {
  require_same_shape(q.raw_mean.shape(), p.raw_mean.shape(), "gaussian_kl");
  require_same_shape(q.raw_scale.shape(), p.raw_scale.shape(), "gaussian_kl");
  require_same_shape(q.raw_mean.shape(), q.raw_scale.shape(), "gaussian_kl");
  Tensor out(q.raw_mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = gaussian_kl_with_grad(q.raw_mean[i], q.raw_scale[i], p.raw_mean[i], p.raw_scale[i],
                                   q.transform, p.transform)
                 .kl;
  return out;
}

inline void require_temperature(double t) {
  if (!(t >= 0.0) || !std::isfinite(t))
    throw ConfigError("temperature must be a finite non-negative number");
}

/// mu + temperature * sigma * eps, with eps drawn from rng.
inline Tensor gaussian_sample(const SmoothedGaussian& dist, double temperature, Rng& rng) {
  require_temperature(temperature);
  require_same_shape(dist.raw_mean.shape(), dist.raw_scale.shape(), "gaussian_sample");
  Tensor out(dist.raw_mean.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps = rng.normal();
    out[i] = dist.raw_mean[i] + temperature * dist.transform.sigma(dist.raw_scale[i]) * eps;
  }
  return out;
}

// ----------------------------------------------------------------------------
// Discretized mixture of logistics.
//
// Parameter channels per pixel, in order:
//   [K logits | K*C means | K*C raw log-scales | K*C(C-1)/2 channel coefficients]
// Targets live on a (2^bits)-level grid mapped onto [-1, 1]; each bin spans
// 2/(2^bits - 1) with edges half a bin around the level.

struct MoLConfig {
  int mixtures = 10;
  int channels = 3;
  int num_bits = 8;
  bool bounded = true;
  double log_scale_floor = -7.0;
  /// Inverse scale computed as smoothed_softplus(-raw, beta) when set;
  /// otherwise the raw activation is the log-scale itself.
  bool smoothed = true;
  double beta = std::numbers::ln2;

  int coeffs_per_mixture() const { return channels * (channels - 1) / 2; }
  int param_channels() const { return mixtures * (1 + 2 * channels + coeffs_per_mixture()); }
  int max_level() const { return (1 << num_bits) - 1; }
  double half_bin() const { return 1.0 / max_level(); }

  void validate() const {
    if (mixtures < 1) throw ConfigError("mixture of logistics needs at least one component");
    if (channels < 1 || channels > 3) throw ConfigError("mixture of logistics supports 1-3 channels");
    if (num_bits < 2 || num_bits > 8)
      throw ConfigError("mixture of logistics needs 2..8 bits, got " + std::to_string(num_bits));
    if (smoothed) require_positive_beta(beta);
  }

  friend bool operator==(const MoLConfig&, const MoLConfig&) = default;
};

struct EffectiveLogScale {
  double value;
  double derivative;  // d value / d raw
};

inline EffectiveLogScale mol_log_scale(const MoLConfig& cfg, double raw) {
  EffectiveLogScale s{};
  if (cfg.smoothed) {
    s.value = -log_smoothed_softplus(-raw, cfg.beta);
    // d/dr [-log f(-r)] = f'(-r) / f(-r), computed in log space.
    s.derivative = std::exp(-softplus(cfg.beta * raw) - log_smoothed_softplus(-raw, cfg.beta));
  } else {
    s.value = raw;
    s.derivative = 1.0;
  }
  if (cfg.bounded && s.value < cfg.log_scale_floor) {
    s.value = cfg.log_scale_floor;
    s.derivative = 0.0;
  }
  return s;
}

struct MoLParams {
  MoLConfig config;
  Tensor raw;  // [N, param_channels, H, W]

  void validate() const {
    config.validate();
    if (raw.shape().c != config.param_channels())
      throw ShapeError("mixture of logistics expects " + std::to_string(config.param_channels()) +
                       " parameter channels, got " + std::to_string(raw.shape().c));
  }

  int logit_channel(int k) const { return k; }
  int mean_channel(int k, int c) const { return config.mixtures + k * config.channels + c; }
  int scale_channel(int k, int c) const {
    return config.mixtures * (1 + config.channels) + k * config.channels + c;
  }
  /// Coefficient applied to channel j when predicting channel c (j < c).
  int coeff_channel(int k, int c, int j) const {
    return config.mixtures * (1 + 2 * config.channels) + k * config.coeffs_per_mixture() +
           c * (c - 1) / 2 + j;
  }
};

namespace detail {

inline double log_sum_exp(const double* v, int n) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

inline constexpr double kMinBinProbability = 1e-12;

struct BinLogProb {
  double value;
  double d_upper;  // d/d(upper edge argument)
  double d_lower;  // d/d(lower edge argument)
};

/// log of the logistic mass between lower = inv*(c-hb) and upper = inv*(c+hb),
/// with open tails on the extreme levels.
inline BinLogProb bin_log_prob(double upper, double lower, int level, int max_level) {
  static const double kLogFloor = std::log(kMinBinProbability);
  BinLogProb r{};
  if (level == 0) {
    r.value = -softplus(-upper);
    r.d_upper = sigmoid(-upper);
  } else if (level == max_level) {
    r.value = -softplus(lower);
    r.d_lower = -sigmoid(lower);
  } else {
    const double width = upper - lower;
    r.value = -softplus(-upper) + std::log(-std::expm1(-width)) - softplus(lower);
    const double inv_em1 = 1.0 / std::expm1(width);
    r.d_upper = sigmoid(-upper) + inv_em1;
    r.d_lower = -sigmoid(lower) - inv_em1;
  }
  if (!(r.value >= kLogFloor)) r = BinLogProb{kLogFloor, 0.0, 0.0};
  return r;
}

inline double level_to_unit(int level, int max_level) {
  return 2.0 * level / max_level - 1.0;
}

inline int unit_to_level(double x, int max_level) {
  const double clamped = std::clamp(x, -1.0, 1.0);
  return std::clamp(static_cast<int>(std::lround((clamped + 1.0) * 0.5 * max_level)), 0, max_level);
}

/// Per-pixel log-likelihood, optionally accumulating upstream * gradient into
/// grad (same layout as params.raw).
inline double mol_pixel(const MoLParams& params, const ImageBatch& targets, int n, int y, int x,
                        Tensor* grad, double upstream) {
  const MoLConfig& cfg = params.config;
  const int K = cfg.mixtures, C = cfg.channels, L = cfg.max_level();
  const double hb = cfg.half_bin();
  const Tensor& raw = params.raw;
  double xs[3];
  int levels[3];
  for (int c = 0; c < C; ++c) {
    levels[c] = targets.at(n, c, y, x);
    xs[c] = level_to_unit(levels[c], L);
  }
  std::vector<double> log_weight(K), comp(K);
  for (int k = 0; k < K; ++k) log_weight[k] = raw.at(n, params.logit_channel(k), y, x);
  const double logit_lse = log_sum_exp(log_weight.data(), K);
  // Per-component, per-channel partials for the gradient pass.
  struct Partial {
    double d_mean, d_raw;
  };
  std::vector<Partial> partial(grad ? K * C : 0);
  for (int k = 0; k < K; ++k) {
    double s = log_weight[k] - logit_lse;
    for (int c = 0; c < C; ++c) {
      double mean = raw.at(n, params.mean_channel(k, c), y, x);
      for (int j = 0; j < c; ++j) mean += std::tanh(raw.at(n, params.coeff_channel(k, c, j), y, x)) * xs[j];
      const EffectiveLogScale ls = mol_log_scale(cfg, raw.at(n, params.scale_channel(k, c), y, x));
      const double inv = std::exp(-ls.value);
      const double centered = xs[c] - mean;
      const double upper = inv * (centered + hb);
      const double lower = inv * (centered - hb);
      const BinLogProb b = bin_log_prob(upper, lower, levels[c], L);
      s += b.value;
      if (grad) {
        partial[k * C + c].d_mean = -(b.d_upper + b.d_lower) * inv;
        partial[k * C + c].d_raw = -(b.d_upper * upper + b.d_lower * lower) * ls.derivative;
      }
    }
    comp[k] = s;
  }
  const double total = log_sum_exp(comp.data(), K);
  if (grad) {
    for (int k = 0; k < K; ++k) {
      const double resp = std::exp(comp[k] - total);
      const double prior = std::exp(log_weight[k] - logit_lse);
      grad->at(n, params.logit_channel(k), y, x) += upstream * (resp - prior);
      for (int c = 0; c < C; ++c) {
        const Partial& p = partial[k * C + c];
        grad->at(n, params.mean_channel(k, c), y, x) += upstream * resp * p.d_mean;
        grad->at(n, params.scale_channel(k, c), y, x) += upstream * resp * p.d_raw;
        for (int j = 0; j < c; ++j) {
          const double t = std::tanh(raw.at(n, params.coeff_channel(k, c, j), y, x));
          grad->at(n, params.coeff_channel(k, c, j), y, x) +=
              upstream * resp * p.d_mean * xs[j] * (1.0 - t * t);
        }
      }
    }
  }
  return total;
}

inline void check_mol_targets(const MoLParams& params, const ImageBatch& targets) {
  params.validate();
  const Shape ps = params.raw.shape();
  const Shape ts = targets.shape;
  if (ts.n != ps.n || ts.h != ps.h || ts.w != ps.w || ts.c != params.config.channels)
    throw ShapeError("mixture of logistics targets " + ts.str() + " do not match parameters " +
                     ps.str());
  if (targets.num_bits != params.config.num_bits)
    throw ConfigError("target bit depth " + std::to_string(targets.num_bits) +
                      " does not match the " + std::to_string(params.config.num_bits) +
                      "-bit output head");
  const int L = params.config.max_level();
  for (auto v : targets.pixels)
    if (v > L) throw DataError("target level " + std::to_string(v) + " outside [0, " + std::to_string(L) + "]");
}

}  // namespace detail

/// Log-likelihood per pixel (joint over channels), shape [N,1,H,W], nats.
inline Tensor mol_log_prob(const MoLParams& params, const ImageBatch& targets) {
  detail::check_mol_targets(params, targets);
  const Shape s = params.raw.shape();
  Tensor out(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) out.at(n, 0, y, x) = detail::mol_pixel(params, targets, n, y, x, nullptr, 0.0);
  return out;
}

/// Vector-Jacobian product: grad of sum(upstream * log_prob) w.r.t. params.raw.
inline Tensor mol_log_prob_backward(const MoLParams& params, const ImageBatch& targets,
                                    const Tensor& upstream) {
  detail::check_mol_targets(params, targets);
  const Shape s = params.raw.shape();
  require_same_shape(upstream.shape(), Shape{s.n, 1, s.h, s.w}, "mol_log_prob_backward");
  Tensor grad(s);
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x)
        detail::mol_pixel(params, targets, n, y, x, &grad, upstream.at(n, 0, y, x));
  return grad;
}

/// Mixture weights per pixel after softmax, shape [N,K,H,W].
inline Tensor mol_mixture_weights(const MoLParams& params) {
  params.validate();
  const Shape s = params.raw.shape();
  const int K = params.config.mixtures;
  Tensor out(Shape{s.n, K, s.h, s.w});
  std::vector<double> v(K);
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        for (int k = 0; k < K; ++k) v[k] = params.raw.at(n, k, y, x);
        const double lse = detail::log_sum_exp(v.data(), K);
        for (int k = 0; k < K; ++k) out.at(n, k, y, x) = std::exp(v[k] - lse);
      }
  return out;
}

namespace detail {

template <typename PickComponent, typename Offset>
ImageBatch mol_decode(const MoLParams& params, PickComponent&& pick, Offset&& offset) {
  params.validate();
  const MoLConfig& cfg = params.config;
  const Shape s = params.raw.shape();
  const int C = cfg.channels, L = cfg.max_level();
  ImageBatch out(Shape{s.n, C, s.h, s.w}, cfg.num_bits);
  for (int n = 0; n < s.n; ++n)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        const int k = pick(n, y, x);
        double xs[3];
        for (int c = 0; c < C; ++c) {
          double mean = params.raw.at(n, params.mean_channel(k, c), y, x);
          for (int j = 0; j < c; ++j)
            mean += std::tanh(params.raw.at(n, params.coeff_channel(k, c, j), y, x)) * xs[j];
          const double ls = mol_log_scale(cfg, params.raw.at(n, params.scale_channel(k, c), y, x)).value;
          const int level = unit_to_level(mean + offset(ls), L);
          out.at(n, c, y, x) = static_cast<std::uint8_t>(level);
          xs[c] = level_to_unit(level, L);
        }
      }
  return out;
}

}  // namespace detail

/// Draws one image per batch element: Gumbel-argmax over the mixture, then a
/// logistic inverse-CDF draw per channel, conditioning later channels on the
/// already discretized earlier ones.
inline ImageBatch mol_sample(const MoLParams& params, Rng& rng) {
  const int K = params.config.mixtures;
  auto pick = [&](int n, int y, int x) {
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      const double g = -std::log(-std::log(rng.uniform()));
      const double score = params.raw.at(n, k, y, x) + g;
      if (score > best_score) {
        best_score = score;
        best = k;
      }
    }
    return best;
  };
  auto offset = [&](double log_scale) {
    const double u = rng.uniform();
    return std::exp(log_scale) * (std::log(u) - std::log1p(-u));
  };
  return detail::mol_decode(params, pick, offset);
}

/// Deterministic decode: most probable component, its location per channel.
inline ImageBatch mol_mode(const MoLParams& params) {
  const int K = params.config.mixtures;
  auto pick = [&](int n, int y, int x) {
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (params.raw.at(n, k, y, x) > params.raw.at(n, best, y, x)) best = k;
    return best;
  };
  return detail::mol_decode(params, pick, [](double) { return 0.0; });
}

// ----------------------------------------------------------------------------
// Bernoulli.

struct BernoulliParams {
  Tensor logits;  // [N, C, H, W]
};

inline void check_binary_targets(const BernoulliParams& params, const ImageBatch& targets) {
  require_same_shape(params.logits.shape(), targets.shape, "bernoulli_log_prob");
  if (targets.num_bits != 1)
    throw ConfigError("Bernoulli head expects 1-bit targets, got " + std::to_string(targets.num_bits));
  for (auto v : targets.pixels)
    if (v > 1) throw DataError("Bernoulli target must be 0 or 1");
}

/// Elementwise log-likelihood, same shape as logits.
inline Tensor bernoulli_log_prob(const BernoulliParams& params, const ImageBatch& targets) {
  check_binary_targets(params, targets);
  Tensor out(params.logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double l = params.logits[i];
    out[i] = targets.pixels[i] ? -softplus(-l) : -softplus(l);
  }
  return out;
}

inline Tensor bernoulli_log_prob_backward(const BernoulliParams& params, const ImageBatch& targets,
                                          const Tensor& upstream) {
  check_binary_targets(params, targets);
  require_same_shape(upstream.shape(), params.logits.shape(), "bernoulli_log_prob_backward");
  Tensor grad(params.logits.shape());
  for (std::size_t i = 0; i < grad.size(); ++i)
    grad[i] = upstream[i] * (static_cast<double>(targets.pixels[i]) - sigmoid(params.logits[i]));
  return grad;
}

inline ImageBatch bernoulli_sample(const BernoulliParams& params, Rng& rng) {
  ImageBatch out(params.logits.shape(), 1);
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = rng.uniform() < sigmoid(params.logits[i]) ? 1 : 0;
  return out;
}

inline ImageBatch bernoulli_mode(const BernoulliParams& params) {
  ImageBatch out(params.logits.shape(), 1);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = params.logits[i] > 0.0 ? 1 : 0;
  return out;
}

}  // namespace deskvae
