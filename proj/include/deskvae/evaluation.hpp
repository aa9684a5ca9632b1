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
#include <vector>

#include "deskvae/data.hpp"
#include "deskvae/network.hpp"
#include "deskvae/objective.hpp"

namespace deskvae {

struct EvalOptions {
  int batch_size = 64;
  /// Posterior samples per image; the ELBO terms are averaged over them.
  int samples = 1;
  std::uint64_t seed = 0;
  const LatentMask* mask = nullptr;
  double pruned_temperature = 1.0;
};

struct Evaluation {
  MetricsRecord record;  // dataset means, nats/dim (bits_per_dim filled)
  int dataset_size = 0;
  int dims_per_image = 0;
  /// Std. deviation over posterior draws of the dataset-mean reconstruction
  /// (nats/dim); zero with a single draw.
  double reconstruction_draw_std = 0.0;

  double nats_per_image() const { return record.negative_elbo_nats_per_dim * dims_per_image; }
};

inline void require_compatible(const Model& model, const Dataset& data) {
  if (data.empty()) throw DataError("evaluation dataset is empty");
  if (data.num_bits() != model.config().target_bits())
    throw ConfigError("bit-depth mismatch: " + std::to_string(data.num_bits()) + "-bit data with a " +
                      std::to_string(model.config().target_bits()) + "-bit model");
}

/// Visits every (draw, batch) pass in a fixed order with its own seed, so two
/// evaluations with equal options see the same noise.
template <typename Fn>
void for_each_eval_pass(const Model& model, const Dataset& data, const EvalOptions& opt, Fn&& fn) {
  if (opt.batch_size < 1) throw ConfigError("evaluation batch_size must be >= 1");
  if (opt.samples < 1) throw ConfigError("evaluation samples must be >= 1");
  NoGradGuard no_grad;
  const int n = data.size();
  for (int s = 0; s < opt.samples; ++s)
    for (int begin = 0, b = 0; begin < n; begin += opt.batch_size, ++b) {
      const ImageBatch x = data.range(begin, std::min(n, begin + opt.batch_size));
      Rng rng(derive_seed(opt.seed, {streams::kEval, static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(b)}));
      const ForwardPass pass = model.infer(x, rng, InferOptions{opt.mask, opt.pruned_temperature});
      fn(s, begin, x, hierarchical_elbo(pass.hierarchy, pass.output, model.config(), x));
    }
}

inline Evaluation evaluate(const Model& model, const Dataset& data, const EvalOptions& opt = {}) {
  require_compatible(model, data);
  const int n = data.size();
  const std::size_t n_res = model.config().resolutions.size();
  std::vector<double> recon_per_draw(opt.samples, 0.0);
  double nelbo = 0.0, recon = 0.0;
  std::vector<double> kl_res(n_res, 0.0);
  for_each_eval_pass(model, data, opt, [&](int s, int, const ImageBatch& x, const ElboTerms& t) {
    const double w = static_cast<double>(x.shape.n);  // batch means back to sums
    nelbo += t.record.negative_elbo_nats_per_dim * w;
    recon += t.record.reconstruction_nats_per_dim * w;
    recon_per_draw[s] += t.record.reconstruction_nats_per_dim * w / n;
    for (std::size_t r = 0; r < n_res; ++r) kl_res[r] += t.record.kl_per_resolution_nats_per_dim[r] * w;
  });
  const double denom = static_cast<double>(n) * opt.samples;
  Evaluation ev;
  ev.dataset_size = n;
  ev.dims_per_image = static_cast<int>(data.image_shape().sample_size());
  MetricsRecord& rec = ev.record;
  rec.negative_elbo_nats_per_dim = nelbo / denom;
  rec.reconstruction_nats_per_dim = recon / denom;
  rec.kl_per_resolution_nats_per_dim = kl_res;
  for (auto& v : rec.kl_per_resolution_nats_per_dim) {
    v /= denom;
    rec.total_kl_nats_per_dim += v;
  }
  rec.bits_per_dim = nats_to_bits(rec.negative_elbo_nats_per_dim);
  if (opt.samples > 1) {
    double mean = 0.0, var = 0.0;
    for (double v : recon_per_draw) mean += v / opt.samples;
    for (double v : recon_per_draw) var += (v - mean) * (v - mean) / (opt.samples - 1);
    ev.reconstruction_draw_std = std::sqrt(var);
  }
  return ev;
}

/// SSIM between each image and its mode reconstruction.
inline double reconstruction_ssim(const Model& model, const Dataset& data, const EvalOptions& opt = {}) {
  require_compatible(model, data);
  double total = 0.0;
  int count = 0;
  NoGradGuard no_grad;
  for (int begin = 0, b = 0; begin < data.size(); begin += opt.batch_size, ++b) {
    const ImageBatch x = data.range(begin, std::min(data.size(), begin + opt.batch_size));
    Rng rng(derive_seed(opt.seed, {streams::kEval, 0xC0FFEEULL, static_cast<std::uint64_t>(b)}));
    const auto r = model.reconstruct(x, rng, opt.mask, opt.pruned_temperature);
    total += ssim(x, r.image) * x.shape.n;
    count += x.shape.n;
  }
  return total / count;
}

}  // namespace deskvae
