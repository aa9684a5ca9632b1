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

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

#include "deskvae/autodiff.hpp"
#include "deskvae/distribution_ops.hpp"
#include "deskvae/model_config.hpp"
#include "deskvae/network.hpp"

namespace deskvae {

/// Per-step ELBO decomposition. All loss terms are nats per image dimension
/// (H*W*C of the image), KLs at lower resolutions included.
struct MetricsRecord {
  std::int64_t step = 0;
  double negative_elbo_nats_per_dim = 0.0;
  double reconstruction_nats_per_dim = 0.0;
  std::vector<double> kl_per_resolution_nats_per_dim;
  double total_kl_nats_per_dim = 0.0;
  double bits_per_dim = 0.0;
  double gradient_norm = 0.0;
  double learning_rate = 0.0;
  bool skipped = false;
  std::optional<double> ssim;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

inline double nats_to_bits(double nats) { return nats / std::numbers::ln2; }

struct ElboTerms {
  /// Differentiable objective: batch mean of (reconstruction + kl_weight * KL)
  /// per dimension.
  Var loss;
  MetricsRecord record;
  /// Per-element KL in nats, one [N,z,r,r] per layer.
  std::vector<Tensor> kl_per_layer;
  std::vector<double> per_sample_negative_elbo;
  std::vector<double> per_sample_reconstruction;
};

/// Single-sample hierarchical ELBO from one forward pass.
inline ElboTerms hierarchical_elbo(const LatentHierarchy& hierarchy, const Var& output,
                                   const ModelConfig& config, const ImageBatch& targets,
                                   double kl_weight = 1.0) {
  if (targets.num_bits != config.target_bits())
    throw ConfigError("unit mismatch: " + std::to_string(targets.num_bits) +
                      "-bit targets with a " + std::to_string(config.target_bits()) + "-bit output head");
  const int batch = targets.shape.n;
  const double dims = static_cast<double>(targets.shape.sample_size());
  const double norm = 1.0 / (batch * dims);

  const bool bernoulli = config.output_head.kind == OutputHeadConfig::Kind::kBernoulli;
  const Var log_prob = bernoulli ? bernoulli_log_prob(output, targets)
                                 : mol_log_prob(output, config.mol_config(), targets);

  ElboTerms terms;
  terms.per_sample_reconstruction.assign(batch, 0.0);
  std::vector<double> per_sample_kl(batch, 0.0);
  const std::size_t lp_per = log_prob->shape().sample_size();
  for (int n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < lp_per; ++i)
      terms.per_sample_reconstruction[n] -= log_prob->value[n * lp_per + i];

  Var objective = scale(sum_all(log_prob), -norm);
  std::vector<double> kl_res(config.resolutions.size(), 0.0);
  for (const auto& e : hierarchy.entries) {
    if (!e.has_posterior()) throw ShapeError("hierarchical_elbo: entry without posterior");
    const Var kl = gaussian_kl(e.q_mean, e.q_raw, e.p_mean, e.p_raw, hierarchy.transform);
    const std::size_t per = kl->value.shape().sample_size();
    double layer_total = 0.0;
    for (int n = 0; n < batch; ++n) {
      double s = 0.0;
      for (std::size_t i = 0; i < per; ++i) s += kl->value[n * per + i];
      per_sample_kl[n] += s;
      layer_total += s;
    }
    terms.kl_per_layer.push_back(kl->value);
    kl_res[e.resolution_index] += layer_total * norm;
    objective = add(objective, scale(sum_all(kl), kl_weight * norm));
  }
  terms.loss = objective;

  MetricsRecord& rec = terms.record;
  double recon = 0.0, nelbo = 0.0;
  terms.per_sample_negative_elbo.resize(batch);
  for (int n = 0; n < batch; ++n) {
    recon += terms.per_sample_reconstruction[n];
    terms.per_sample_negative_elbo[n] = (terms.per_sample_reconstruction[n] + per_sample_kl[n]) / dims;
    nelbo += terms.per_sample_reconstruction[n] + per_sample_kl[n];
    terms.per_sample_reconstruction[n] /= dims;
  }
  rec.reconstruction_nats_per_dim = recon * norm;
  rec.negative_elbo_nats_per_dim = nelbo * norm;
  rec.kl_per_resolution_nats_per_dim = kl_res;
  rec.total_kl_nats_per_dim = 0.0;
  for (double v : kl_res) rec.total_kl_nats_per_dim += v;
  rec.bits_per_dim = nats_to_bits(rec.negative_elbo_nats_per_dim);
  return terms;
}

/// Validation KL minus training KL (nats/dim); positive values flag overfitting.
inline double kl_gap(const MetricsRecord& train, const MetricsRecord& valid) {
  return valid.total_kl_nats_per_dim - train.total_kl_nats_per_dim;
}

// ----------------------------------------------------------------------------
// SSIM with an 11x11 Gaussian window (sigma 1.5). Windows are truncated at the
// image border and renormalized, so images smaller than the window still work.

struct SsimComponents {
  double ssim = 0.0;
  double luminance = 0.0;
  double contrast_structure = 0.0;
};

inline SsimComponents ssim_components(const Tensor& a, const Tensor& b, double data_range) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (!(data_range > 0.0)) throw ConfigError("ssim: data range must be positive");
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double kernel[2 * kRadius + 1];
  for (int i = -kRadius; i <= kRadius; ++i) kernel[i + kRadius] = std::exp(-(i * i) / (2 * kSigma * kSigma));

  const Shape s = a.shape();
  SsimComponents total;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          double wsum = 0.0, ma = 0.0, mb = 0.0;
          for (int dy = -kRadius; dy <= kRadius; ++dy)
            for (int dx = -kRadius; dx <= kRadius; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= s.h || xx < 0 || xx >= s.w) continue;
              const double w = kernel[dy + kRadius] * kernel[dx + kRadius];
              wsum += w;
              ma += w * a.at(n, c, yy, xx);
              mb += w * b.at(n, c, yy, xx);
            }
          ma /= wsum;
          mb /= wsum;
          double va = 0.0, vb = 0.0, cov = 0.0;
          for (int dy = -kRadius; dy <= kRadius; ++dy)
            for (int dx = -kRadius; dx <= kRadius; ++dx) {
              const int yy = y + dy, xx = x + dx;
              if (yy < 0 || yy >= s.h || xx < 0 || xx >= s.w) continue;
              const double w = kernel[dy + kRadius] * kernel[dx + kRadius] / wsum;
              const double da = a.at(n, c, yy, xx) - ma, db = b.at(n, c, yy, xx) - mb;
              va += w * da * da;
              vb += w * db * db;
              cov += w * da * db;
            }
          const double lum = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
          const double cs = (2 * cov + c2) / (va + vb + c2);
          total.luminance += lum;
          total.contrast_structure += cs;
          total.ssim += lum * cs;
        }
  const double count = static_cast<double>(s.size());
  total.ssim /= count;
  total.luminance /= count;
  total.contrast_structure /= count;
  return total;
}

inline double ssim(const Tensor& a, const Tensor& b, double data_range) {
  return ssim_components(a, b, data_range).ssim;
}

inline double ssim(const ImageBatch& a, const ImageBatch& b) {
  if (!(a.shape == b.shape) || a.num_bits != b.num_bits)
    throw ShapeError("ssim: images differ in shape or bit depth");
  auto to_tensor = [](const ImageBatch& img) {
    Tensor t(img.shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = img.pixels[i];
    return t;
  };
  return ssim(to_tensor(a), to_tensor(b), a.max_level());
}

}  // namespace deskvae
