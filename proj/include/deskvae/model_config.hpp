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
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "deskvae/distributions.hpp"
#include "deskvae/error.hpp"

namespace deskvae {

struct OutputHeadConfig {
  enum class Kind { kMixtureOfLogistics, kBernoulli };

  Kind kind = Kind::kMixtureOfLogistics;
  int num_bits = 8;
  int mixtures = 10;
  bool bounded = true;
  double log_scale_floor = -7.0;
  /// Smoothing multiplier for the logistic inverse scale, independent of the
  /// Gaussian beta.
  double mol_beta = std::numbers::ln2;

  friend bool operator==(const OutputHeadConfig&, const OutputHeadConfig&) = default;
};

/// Declarative description of the bidirectional hierarchy. Index 0 is the
/// lowest resolution; the last entry is the image resolution.
struct ModelConfig {
  std::vector<int> resolutions;
  std::vector<int> layers_per_resolution;
  std::vector<int> widths_per_resolution;
  int latent_dims_per_layer = 8;
  double bottleneck_ratio = 0.25;
  bool gradient_smoothing = true;
  double beta_smoothing = std::numbers::ln2;
  OutputHeadConfig output_head;
  /// Consecutive top-down blocks per resolution that share one bottom-up
  /// activation. Empty means 1 everywhere (fully symmetric).
  std::vector<int> asymmetry;
  bool include_input_resolution_latents = false;
  int image_channels = 3;
  double leaky_slope = 0.1;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  int image_resolution() const { return resolutions.empty() ? 0 : resolutions.back(); }
  int total_layers() const {
    return std::accumulate(layers_per_resolution.begin(), layers_per_resolution.end(), 0);
  }
  int sharing_factor(std::size_t r) const { return asymmetry.empty() ? 1 : asymmetry[r]; }
  int bottom_up_blocks(std::size_t r) const {
    const int k = sharing_factor(r);
    return (layers_per_resolution[r] + k - 1) / k;
  }
  ScaleTransform latent_transform() const {
    return gradient_smoothing ? ScaleTransform::smoothed(beta_smoothing) : ScaleTransform::exponential();
  }
  MoLConfig mol_config() const {
    MoLConfig m;
    m.mixtures = output_head.mixtures;
    m.channels = image_channels;
    m.num_bits = output_head.num_bits;
    m.bounded = output_head.bounded;
    m.log_scale_floor = output_head.log_scale_floor;
    m.smoothed = gradient_smoothing;
    m.beta = output_head.mol_beta;
    return m;
  }
  int target_bits() const {
    return output_head.kind == OutputHeadConfig::Kind::kBernoulli ? 1 : output_head.num_bits;
  }
  int head_channels() const {
    return output_head.kind == OutputHeadConfig::Kind::kBernoulli ? image_channels
                                                                  : mol_config().param_channels();
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
    if (resolutions.empty()) fail("resolutions must not be empty");
    if (layers_per_resolution.size() != resolutions.size())
      fail("layers_per_resolution has " + std::to_string(layers_per_resolution.size()) +
           " entries for " + std::to_string(resolutions.size()) + " resolutions");
    if (widths_per_resolution.size() != resolutions.size())
      fail("widths_per_resolution has " + std::to_string(widths_per_resolution.size()) +
           " entries for " + std::to_string(resolutions.size()) + " resolutions");
    if (!asymmetry.empty() && asymmetry.size() != resolutions.size())
      fail("asymmetry must be empty or have one entry per resolution");
    for (std::size_t i = 0; i < resolutions.size(); ++i) {
      if (resolutions[i] < 1) fail("resolutions must be positive");
      if (i > 0) {
        if (resolutions[i] <= resolutions[i - 1]) fail("resolutions must be strictly increasing");
        if (resolutions[i] % resolutions[i - 1] != 0)
          fail("resolution " + std::to_string(resolutions[i - 1]) + " does not divide " +
               std::to_string(resolutions[i]));
      }
      if (layers_per_resolution[i] < 0) fail("layer counts must be non-negative");
      if (widths_per_resolution[i] < 1) fail("widths must be positive");
      if (!asymmetry.empty() && asymmetry[i] < 1) fail("asymmetry entries must be >= 1");
    }
    if (total_layers() < 1) fail("at least one stochastic layer is required");
    if (!include_input_resolution_latents && layers_per_resolution.back() != 0)
      fail("latent layers at the input resolution require include_input_resolution_latents");
    if (latent_dims_per_layer < 1) fail("latent_dims_per_layer must be positive");
    if (!(bottleneck_ratio > 0.0)) fail("bottleneck_ratio must be positive");
    if (gradient_smoothing) require_positive_beta(beta_smoothing);
    if (image_channels != 1 && image_channels != 3) fail("image_channels must be 1 or 3");
    if (output_head.kind == OutputHeadConfig::Kind::kMixtureOfLogistics) {
      mol_config().validate();
      if (gradient_smoothing) require_positive_beta(output_head.mol_beta);
    }
  }
};

// ----------------------------------------------------------------------------
// Published layer distributions, kept literal. Widths may be divided down for
// desk-scale runs without touching the layer structure.

struct Preset {
  std::string name;
  ModelConfig config;
};

namespace detail {

inline ModelConfig make_preset(std::vector<int> res, std::vector<int> widths, std::vector<int> layers,
                               int bits) {
  ModelConfig c;
  c.resolutions = std::move(res);
  if (widths.size() == 1) widths.assign(c.resolutions.size(), widths[0]);
  c.widths_per_resolution = std::move(widths);
  c.layers_per_resolution = std::move(layers);
  c.latent_dims_per_layer = 16;
  c.include_input_resolution_latents = true;
  c.output_head.num_bits = bits;
  return c;
}

}  // namespace detail

inline std::vector<Preset> presets() {
  using detail::make_preset;
  const std::vector<int> r32{1, 4, 8, 16, 32};
  const std::vector<int> r64{1, 4, 8, 16, 32, 64};
  const std::vector<int> r256{1, 4, 8, 16, 32, 64, 128, 256};
  return {
      {"cifar10-c1", make_preset(r32, {384, 384, 192, 96, 48}, {3, 4, 7, 11, 22}, 8)},
      {"cifar10-c2", make_preset(r32, {384}, {3, 4, 7, 11, 22}, 8)},
      {"cifar10-vdvae", make_preset(r32, {384}, {1, 3, 6, 11, 22}, 8)},
      {"imagenet32-c1", make_preset(r32, {512, 512, 256, 128, 64}, {6, 7, 19, 25, 16}, 8)},
      {"imagenet32-c2", make_preset(r32, {512}, {6, 7, 19, 25, 16}, 8)},
      {"imagenet32-vdvae", make_preset(r32, {512}, {2, 5, 10, 20, 41}, 8)},
      {"imagenet64-c1", make_preset(r64, {512, 512, 256, 256, 64, 64}, {6, 7, 19, 25, 16, 11}, 8)},
      {"imagenet64-c2", make_preset(r64, {512}, {6, 7, 19, 25, 16, 11}, 8)},
      {"imagenet64-vdvae", make_preset(r64, {512}, {2, 4, 8, 16, 32, 13}, 8)},
      {"ffhq256-c1", make_preset(r256, {512, 512, 512, 256, 256, 128, 128, 128}, {2, 4, 5, 10, 22, 14, 8, 1}, 5)},
      {"ffhq256-c2", make_preset(r256, {512}, {2, 4, 5, 10, 22, 14, 8, 1}, 5)},
      {"ffhq256-vdvae", make_preset(r256, {512}, {2, 4, 5, 10, 22, 14, 8, 1}, 5)},
  };
}

inline ModelConfig preset(const std::string& name) {
  for (auto& p : presets())
    if (p.name == name) return p.config;
  throw ConfigError("unknown preset '" + name + "'");
}

/// Divides every width (minimum 4 channels) and the latent size, keeping layer
/// counts and resolutions intact.
inline ModelConfig with_width_divisor(ModelConfig c, int divisor) {
  if (divisor < 1) throw ConfigError("width divisor must be >= 1");
  for (auto& w : c.widths_per_resolution) w = std::max(4, w / divisor);
  c.latent_dims_per_layer = std::max(1, c.latent_dims_per_layer / divisor);
  return c;
}

/// Keeps only resolutions <= max_resolution (the last kept one becomes the
/// image resolution).
inline ModelConfig truncated_to_resolution(ModelConfig c, int max_resolution) {
  std::size_t keep = 0;
  while (keep < c.resolutions.size() && c.resolutions[keep] <= max_resolution) ++keep;
  if (keep == 0) throw ConfigError("no resolution <= " + std::to_string(max_resolution));
  c.resolutions.resize(keep);
  c.layers_per_resolution.resize(keep);
  c.widths_per_resolution.resize(keep);
  if (!c.asymmetry.empty()) c.asymmetry.resize(keep);
  return c;
}

}  // namespace deskvae
