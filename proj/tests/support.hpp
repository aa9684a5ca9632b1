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
#include <functional>
#include <limits>
#include <vector>

#include "deskvae/deskvae.hpp"

namespace deskvae::testing {

/// |a - n| / max(|a|, |n|, floor): relative error that does not blow up on
/// gradients that are zero to rounding.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2 * h);
}

/// Max relative error between `analytic` and central differences of `f`
/// with respect to every entry of `x` (x is restored afterwards).
///
/// A central difference of a double objective carries rounding noise of a few
/// eps*|f|/h (more when the objective sums terms that cancel), so a derivative
/// smaller than that noise divided by the target tolerance cannot be resolved
/// to it. The denominator floor is that size, with 16 ulps of headroom.
inline double max_fd_error(Tensor& x, const std::function<double()>& f, const Tensor& analytic, double h = 1e-5,
                           double tolerance = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    const double noise = 16 * std::numeric_limits<double>::epsilon() * std::max({std::abs(up), std::abs(down), 1.0}) / h;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h), std::max(1e-7, noise / tolerance)));
  }
  return worst;
}

inline Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(s);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

inline ImageBatch random_levels(Shape s, int bits, Rng& rng) {
  ImageBatch b(s, bits);
  for (auto& v : b.pixels) v = static_cast<std::uint8_t>(rng.next() % (1u << bits));
  return b;
}

/// Desk-scale toy model for 8x8 images.
inline ModelConfig toy_model(int width = 32, int z = 4) {
  ModelConfig c = desk_model();
  c.widths_per_resolution.assign(c.resolutions.size(), width);
  c.latent_dims_per_layer = z;
  return c;
}

inline RunConfig toy_run(int batch = 4, std::int64_t steps = 2000) {
  RunConfig r;
  r.model = toy_model();
  r.data.resolution = 8;
  r.optimizer.batch_size = batch;
  r.optimizer.total_steps = steps;
  r.train.steps = steps;
  return r;
}

/// Tiny model for exhaustive gradient checks.
inline ModelConfig micro_model(int resolution = 2, int channels = 1) {
  ModelConfig c;
  c.resolutions = resolution == 1 ? std::vector<int>{1} : std::vector<int>{1, resolution};
  c.layers_per_resolution = resolution == 1 ? std::vector<int>{1} : std::vector<int>{1, 1};
  c.widths_per_resolution.assign(c.resolutions.size(), 4);
  c.latent_dims_per_layer = 2;
  c.include_input_resolution_latents = true;
  c.image_channels = channels;
  c.output_head.mixtures = 2;
  return c;
}

}  // namespace deskvae::testing
