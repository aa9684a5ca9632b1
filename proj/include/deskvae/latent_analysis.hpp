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
#include <numeric>
#include <vector>

#include "deskvae/evaluation.hpp"

namespace deskvae {

/// Kahan-Babuska (Neumaier) running sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) comp_ += (sum_ - t) + v;
    else comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Mean KL per latent dimension in nats; layer-major, then
/// channel, row, column, matching LatentLayout.
struct LatentKLStats {
  LatentLayout layout;
  std::vector<double> mean_kl;
  int dataset_size = 0;

  std::size_t total_dims() const { return mean_kl.size(); }
  /// Values of one layer as a [1, z, r, r] tensor.
  Tensor layer_tensor(std::size_t layer) const {
    const auto& l = layout.layers.at(layer);
    Tensor t(Shape{1, l.channels, l.resolution, l.resolution});
    std::size_t offset = 0;
    for (std::size_t i = 0; i < layer; ++i) offset += layout.layers[i].dims();
    std::copy_n(mean_kl.begin() + offset, t.size(), t.data());
    return t;
  }
};

/// Streaming per-dimension mean over one posterior draw per image.
inline LatentKLStats accumulate_kl_stats(const Model& model, const Dataset& data, int batch_size = 64,
                                         std::uint64_t seed = 0) {
  if (data.empty()) throw DataError("accumulate_kl_stats: empty dataset");
  require_compatible(model, data);
  LatentKLStats stats;
  stats.layout = model.latent_layout();
  stats.dataset_size = data.size();
  std::vector<CompensatedSum> sums(stats.layout.total_dims());
  EvalOptions opt;
  opt.batch_size = batch_size;
  opt.seed = seed;
  for_each_eval_pass(model, data, opt, [&](int, int, const ImageBatch& x, const ElboTerms& t) {
    std::size_t offset = 0;
    for (std::size_t l = 0; l < t.kl_per_layer.size(); ++l) {
      const Tensor& kl = t.kl_per_layer[l];
      const std::size_t per = kl.shape().sample_size();
      for (int n = 0; n < x.shape.n; ++n)
        for (std::size_t i = 0; i < per; ++i) sums[offset + i].add(kl[n * per + i]);
      offset += per;
    }
  });
  stats.mean_kl.resize(sums.size());
  for (std::size_t i = 0; i < sums.size(); ++i) stats.mean_kl[i] = std::max(0.0, sums[i].value() / data.size());
  return stats;
}

namespace detail {
inline LatentMask mask_from_flags(const LatentLayout& layout, const std::vector<bool>& keep) {
  LatentMask mask = LatentMask::filled(layout, false);
  std::size_t i = 0;
  for (auto& t : mask.keep)
    for (auto& v : t.values()) v = keep[i++] ? 1.0 : 0.0;
  return mask;
}
}  // namespace detail

/// Keeps dimensions with mean KL >= threshold.
inline LatentMask make_mask_by_threshold(const LatentKLStats& stats, double threshold) {
  std::vector<bool> keep(stats.total_dims());
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = stats.mean_kl[i] >= threshold;
  return detail::mask_from_flags(stats.layout, keep);
}

/// Keeps the round(q * total) dimensions with the largest mean KL; ties go to
/// the lower dimension index.
inline LatentMask make_mask_by_fraction(const LatentKLStats& stats, double kept_fraction) {
  if (!(kept_fraction >= 0.0 && kept_fraction <= 1.0))
    throw ConfigError("kept_fraction must be in [0, 1]");
  const std::size_t total = stats.total_dims();
  const auto kept = static_cast<std::size_t>(std::llround(kept_fraction * static_cast<double>(total)));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return stats.mean_kl[a] > stats.mean_kl[b]; });
  std::vector<bool> keep(total, false);
  for (std::size_t i = 0; i < kept; ++i) keep[order[i]] = true;
  return detail::mask_from_flags(stats.layout, keep);
}

inline constexpr std::size_t kBytesPerLatentValue = 4;

inline std::uint64_t encoded_size_bytes(std::size_t kept_dims, std::size_t dataset_size) {
  return static_cast<std::uint64_t>(kept_dims) * dataset_size * kBytesPerLatentValue;
}

struct PruningReport {
  double kept_fraction = 0.0;
  std::size_t kept_dims = 0;
  std::size_t total_dims = 0;
  std::uint64_t encoded_size_bytes = 0;
  double negative_elbo_bits = 0.0;
  double reconstruction_bits = 0.0;
  double kl_bits = 0.0;
  /// Single-draw noise of the reconstruction term (bits/dim).
  double reconstruction_noise_bits = 0.0;
};

/// Masked-off dimensions take the prior (and contribute zero KL).
inline PruningReport evaluate_pruned(const Model& model, const Dataset& data, const LatentMask& mask,
                                     EvalOptions opt = {}) {
  opt.mask = &mask;
  const Evaluation ev = evaluate(model, data, opt);
  PruningReport rep;
  rep.kept_dims = mask.kept();
  rep.total_dims = mask.total();
  rep.kept_fraction = rep.total_dims ? static_cast<double>(rep.kept_dims) / rep.total_dims : 0.0;
  rep.encoded_size_bytes = encoded_size_bytes(rep.kept_dims, data.size());
  rep.negative_elbo_bits = nats_to_bits(ev.record.negative_elbo_nats_per_dim);
  rep.reconstruction_bits = nats_to_bits(ev.record.reconstruction_nats_per_dim);
  rep.kl_bits = nats_to_bits(ev.record.total_kl_nats_per_dim);
  rep.reconstruction_noise_bits = nats_to_bits(ev.reconstruction_draw_std);
  return rep;
}

}  // namespace deskvae
