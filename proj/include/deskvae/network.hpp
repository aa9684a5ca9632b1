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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deskvae/autodiff.hpp"
#include "deskvae/distribution_ops.hpp"
#include "deskvae/model_config.hpp"
#include "deskvae/rng.hpp"

namespace deskvae {

// ----------------------------------------------------------------------------
// Latent bookkeeping.

struct LatentEntry {
  Var z;
  Var q_mean, q_raw;  // null when sampled from the prior (generation)
  Var p_mean, p_raw;
  int resolution_index = 0;
  int resolution = 1;
  int layer = 0;
  /// Index into the flattened bottom-up activations, -1 without posterior.
  int chi_index = -1;
  const Node* chi = nullptr;

  bool has_posterior() const { return q_mean != nullptr; }
};

/// Ordered top-down: entry 0 is z_1 at the lowest resolution.
struct LatentHierarchy {
  std::vector<LatentEntry> entries;
  ScaleTransform transform;

  std::size_t size() const { return entries.size(); }

  SmoothedGaussian posterior(std::size_t i) const {
    const auto& e = entries.at(i);
    if (!e.has_posterior()) throw ShapeError("hierarchy entry has no posterior");
    return {e.q_mean->value, e.q_raw->value, transform};
  }
  SmoothedGaussian prior(std::size_t i) const {
    const auto& e = entries.at(i);
    return {e.p_mean->value, e.p_raw->value, transform};
  }
};

struct BottomUpActivations {
  /// per_resolution[r][b] is the b-th bottom-up block output at resolution r,
  /// in bottom-up (computation) order.
  std::vector<std::vector<Var>> per_resolution;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& r : per_resolution) n += r.size();
    return n;
  }
};

struct LatentLayout {
  struct Layer {
    int resolution_index;
    int resolution;
    int channels;
    std::size_t dims() const { return static_cast<std::size_t>(channels) * resolution * resolution; }
  };
  std::vector<Layer> layers;

  std::size_t total_dims() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.dims();
    return n;
  }
};

/// One 0/1 tensor [1, z, r, r] per latent layer; 1 keeps the posterior.
struct LatentMask {
  std::vector<Tensor> keep;

  static LatentMask filled(const LatentLayout& layout, bool value) {
    LatentMask m;
    for (const auto& l : layout.layers)
      m.keep.emplace_back(Shape{1, l.channels, l.resolution, l.resolution}, value ? 1.0 : 0.0);
    return m;
  }
  std::size_t kept() const {
    std::size_t n = 0;
    for (const auto& t : keep)
      for (double v : t.values()) n += v > 0.5;
    return n;
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& t : keep) n += t.size();
    return n;
  }
  friend bool operator==(const LatentMask&, const LatentMask&) = default;
};

/// Sampling temperature, either uniform or one value per resolution.
struct Temperature {
  std::vector<double> values{1.0};

  static Temperature uniform(double t) { return Temperature{{t}}; }
  double at(std::size_t resolution_index) const {
    return values.size() == 1 ? values[0] : values.at(resolution_index);
  }
  bool all_zero() const {
    for (double v : values)
      if (v != 0.0) return false;
    return true;
  }
};

enum class OutputDecode { kAutomatic, kSample, kMode };

struct ForwardPass {
  LatentHierarchy hierarchy;
  Var output;  // head parameters [N, head_channels, H, W]
  BottomUpActivations activations;
};

struct InferOptions {
  const LatentMask* mask = nullptr;
  /// Temperature of the prior draw used in pruned dimensions.
  double pruned_temperature = 1.0;
};

/// Maps integer levels onto [-1, 1].
inline Tensor image_to_unit(const ImageBatch& x) {
  Tensor out(x.shape);
  const double L = x.max_level();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * x.pixels[i] / L - 1.0;
  return out;
}

// ----------------------------------------------------------------------------
// Layers.

struct Conv {
  Var weight;
  Var bias;
  Var operator()(const Var& x) const { return conv2d(x, weight, bias); }
};

/// Pre-activation bottleneck: 1x1 reduce, two kxk, 1x1 expand. k is 3 above
/// 2x2 resolution and 1 otherwise.
struct BottleneckBlock {
  Conv c1, c2, c3, c4;
  bool residual = false;
  double slope = 0.1;

  Var operator()(const Var& x) const {
    Var h = c1(leaky_relu(x, slope));
    h = c2(leaky_relu(h, slope));
    h = c3(leaky_relu(h, slope));
    h = c4(leaky_relu(h, slope));
    return residual ? add(x, h) : h;
  }
};

struct BottomUpBlock {
  BottleneckBlock res;
  Conv skip_projection;
};

struct TopDownBlock {
  BottleneckBlock prior;
  BottleneckBlock posterior;
  BottleneckBlock resnet;
  Conv z_projection;
  int resolution_index = 0;
  int width = 0;
  int z_dim = 0;
  /// Position of this block's shared activation group within its resolution.
  int group = 0;
};

struct ResampleLayer {
  Conv projection;
  int factor = 1;
};

// ----------------------------------------------------------------------------

class Model {
 public:
  /// Builds and initializes a model; `seed` fixes the parameter draw.
  Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Builder b{*this, Rng(derive_seed(seed, {streams::kInit})),
              1.0 / std::sqrt(static_cast<double>(config_.total_layers()))};
    build(b);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const std::vector<Var>& parameters() const { return params_; }

  std::size_t count_parameters() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  std::map<std::string, Tensor> state() const {
    std::map<std::string, Tensor> out;
    for (const auto& p : params_) out.emplace(p->name, p->value);
    return out;
  }
  void load_state(const std::map<std::string, Tensor>& state) {
    for (auto& p : params_) {
      auto it = state.find(p->name);
      if (it == state.end()) throw ShapeError("missing parameter '" + p->name + "'");
      require_same_shape(it->second.shape(), p->value.shape(), p->name.c_str());
      p->value = it->second;
    }
  }

  Var* find_parameter(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad = Tensor();
  }

  bool has_encoder() const { return encoder_.has_value(); }
  /// Releases the bottom-up stack; generation keeps working without it.
  void drop_encoder() {
    encoder_.reset();
    std::erase_if(params_, [](const Var& p) { return p->name.rfind("bu.", 0) == 0; });
  }

  const std::vector<TopDownBlock>& top_down_blocks() const { return decoder_.blocks; }

  LatentLayout latent_layout() const {
    LatentLayout layout;
    for (const auto& b : decoder_.blocks)
      layout.layers.push_back({b.resolution_index, config_.resolutions[b.resolution_index], b.z_dim});
    return layout;
  }

  /// Bottom-up pass only.
  BottomUpActivations encode(const ImageBatch& x) const {
    if (!encoder_) throw ConfigError("model has no bottom-up encoder");
    check_input(x);
    BottomUpActivations acts;
    acts.per_resolution.resize(config_.resolutions.size());
    Var h = encoder_->input(constant(image_to_unit(x)));
    std::size_t next = encoder_->blocks.size();
    for (int r = static_cast<int>(config_.resolutions.size()) - 1; r >= 0; --r) {
      const int n_blocks = config_.bottom_up_blocks(r);
      for (int b = 0; b < n_blocks; ++b) {
        const BottomUpBlock& block = encoder_->blocks[next - n_blocks + b];
        h = block.res(h);
        acts.per_resolution[r].push_back(block.skip_projection(h));
      }
      next -= n_blocks;
      if (r > 0) {
        const ResampleLayer& pool = encoder_->pools[r - 1];
        h = avg_pool(leaky_relu(pool.projection(h), config_.leaky_slope), pool.factor);
      }
    }
    return acts;
  }

  /// Bidirectional pass: posterior samples (temperature 1) drawn top-down.
  ForwardPass infer(const ImageBatch& x, Rng& rng, const InferOptions& options = {}) const {
    ForwardPass pass;
    pass.activations = encode(x);
    if (options.mask) check_mask(*options.mask);
    pass.hierarchy.transform = config_.latent_transform();
    std::vector<int> chi_offsets;
    int offset = 0;
    for (const auto& r : pass.activations.per_resolution) {
      chi_offsets.push_back(offset);
      offset += static_cast<int>(r.size());
    }
    pass.output = decode(x.shape.n, rng, &pass.activations, chi_offsets, Temperature::uniform(1.0),
                         options, pass.hierarchy);
    return pass;
  }

  /// Unconditional samples from the prior. Automatic decoding uses the head's
  /// mode when every temperature is zero and samples it otherwise.
  ImageBatch generate(int batch, const Temperature& temperature, Rng& rng,
                      OutputDecode decode_mode = OutputDecode::kAutomatic,
                      LatentHierarchy* hierarchy_out = nullptr) const {
    if (batch < 1) throw ConfigError("generate: batch must be >= 1");
    if (temperature.values.size() != 1 && temperature.values.size() != config_.resolutions.size())
      throw ConfigError("generate: need one temperature or one per resolution");
    for (double t : temperature.values) require_temperature(t);
    NoGradGuard no_grad;
    LatentHierarchy hierarchy;
    hierarchy.transform = config_.latent_transform();
    Var out = decode(batch, rng, nullptr, {}, temperature, {}, hierarchy);
    if (decode_mode == OutputDecode::kAutomatic)
      decode_mode = temperature.all_zero() ? OutputDecode::kMode : OutputDecode::kSample;
    ImageBatch image = decode_output(out->value, decode_mode, rng);
    if (hierarchy_out) *hierarchy_out = std::move(hierarchy);
    return image;
  }

  struct Reconstruction {
    ImageBatch image;
    ForwardPass pass;
  };

  /// infer (optionally with pruned dimensions replaced by prior draws at
  /// `pruned_temperature`) followed by a mode decode of the head.
  Reconstruction reconstruct(const ImageBatch& x, Rng& rng, const LatentMask* mask = nullptr,
                             double pruned_temperature = 1.0) const {
    NoGradGuard no_grad;
    Reconstruction r;
    r.pass = infer(x, rng, InferOptions{mask, pruned_temperature});
    r.image = decode_output(r.pass.output->value, OutputDecode::kMode, rng);
    return r;
  }

  ImageBatch decode_output(const Tensor& head, OutputDecode mode, Rng& rng) const {
    const bool sample = mode == OutputDecode::kSample;
    if (config_.output_head.kind == OutputHeadConfig::Kind::kBernoulli) {
      BernoulliParams p{head};
      return sample ? bernoulli_sample(p, rng) : bernoulli_mode(p);
    }
    MoLParams p{config_.mol_config(), head};
    return sample ? mol_sample(p, rng) : mol_mode(p);
  }

 private:
  struct Encoder {
    Conv input;
    std::vector<BottomUpBlock> blocks;  // ordered lowest resolution first
    std::vector<ResampleLayer> pools;   // pools[r] maps resolution r+1 -> r
  };
  struct Decoder {
    Var initial_state;  // [1, width_0, r0, r0]
    std::vector<TopDownBlock> blocks;
    std::vector<ResampleLayer> unpools;  // unpools[r] maps resolution r -> r+1
    Conv head;
  };

  struct Builder {
    Model& model;
    Rng rng;
    double depth_scale;

    Conv conv(const std::string& name, int in, int out, int k, double multiplier = 1.0) {
      Tensor w(Shape{out, in, k, k});
      const double std_dev = multiplier / std::sqrt(static_cast<double>(in * k * k));
      for (auto& v : w.values()) v = std_dev * rng.normal();
      Conv c{parameter(std::move(w), name + ".w"), parameter(Tensor(Shape{1, out, 1, 1}), name + ".b")};
      model.params_.push_back(c.weight);
      model.params_.push_back(c.bias);
      return c;
    }

    BottleneckBlock block(const std::string& name, int in, int out, int width, int resolution,
                          bool residual) {
      const int mid = std::max(1, static_cast<int>(std::lround(width * model.config_.bottleneck_ratio)));
      const int k = resolution > 2 ? 3 : 1;
      BottleneckBlock b;
      b.residual = residual;
      b.slope = model.config_.leaky_slope;
      b.c1 = conv(name + ".c1", in, mid, 1);
      b.c2 = conv(name + ".c2", mid, mid, k);
      b.c3 = conv(name + ".c3", mid, mid, k);
      b.c4 = conv(name + ".c4", mid, out, 1, residual ? depth_scale : 1.0);
      return b;
    }
  };

  void build(Builder& b) {
    const auto& cfg = config_;
    const int n_res = static_cast<int>(cfg.resolutions.size());
    const int z = cfg.latent_dims_per_layer;

    Encoder enc;
    enc.input = b.conv("bu.input", cfg.image_channels, cfg.widths_per_resolution.back(),
                       cfg.image_resolution() > 2 ? 3 : 1);
    std::vector<std::vector<BottomUpBlock>> per_res(n_res);
    for (int r = n_res - 1; r >= 0; --r) {
      const int w = cfg.widths_per_resolution[r];
      for (int i = 0; i < cfg.bottom_up_blocks(r); ++i) {
        const std::string name = "bu.r" + std::to_string(r) + "." + std::to_string(i);
        BottomUpBlock blk;
        blk.res = b.block(name + ".res", w, w, w, cfg.resolutions[r], true);
        blk.skip_projection = b.conv(name + ".skip", w, w, 1);
        per_res[r].push_back(std::move(blk));
      }
      if (r > 0) {
        enc.pools.resize(n_res - 1);
        enc.pools[r - 1] = ResampleLayer{
            b.conv("bu.pool" + std::to_string(r), w, cfg.widths_per_resolution[r - 1], 1),
            cfg.resolutions[r] / cfg.resolutions[r - 1]};
      }
    }
    for (auto& r : per_res)
      for (auto& blk : r) enc.blocks.push_back(std::move(blk));
    encoder_ = std::move(enc);

    Decoder dec;
    dec.initial_state = parameter(
        Tensor(Shape{1, cfg.widths_per_resolution[0], cfg.resolutions[0], cfg.resolutions[0]}),
        "td.initial_state");
    params_.push_back(dec.initial_state);
    int layer = 0;
    for (int r = 0; r < n_res; ++r) {
      const int w = cfg.widths_per_resolution[r];
      const int res = cfg.resolutions[r];
      for (int j = 0; j < cfg.layers_per_resolution[r]; ++j, ++layer) {
        const std::string name = "td." + std::to_string(layer);
        TopDownBlock blk;
        blk.resolution_index = r;
        blk.width = w;
        blk.z_dim = z;
        blk.group = j / cfg.sharing_factor(r);
        blk.prior = b.block(name + ".prior", w, 2 * z + w, w, res, false);
        blk.posterior = b.block(name + ".posterior", 2 * w, 2 * z, w, res, false);
        blk.z_projection = b.conv(name + ".z_proj", z, w, 1, b.depth_scale);
        blk.resnet = b.block(name + ".resnet", w, w, w, res, true);
        dec.blocks.push_back(std::move(blk));
      }
      if (r + 1 < n_res) {
        dec.unpools.push_back(ResampleLayer{
            b.conv("td.unpool" + std::to_string(r), w, cfg.widths_per_resolution[r + 1], 1),
            cfg.resolutions[r + 1] / res});
      }
    }
    dec.head = b.conv("td.head", cfg.widths_per_resolution.back(), cfg.head_channels(), 1);
    decoder_ = std::move(dec);
  }

  void check_input(const ImageBatch& x) const {
    const int res = config_.image_resolution();
    if (x.shape.c != config_.image_channels || x.shape.h != res || x.shape.w != res || x.shape.n < 1)
      throw ShapeError("input " + x.shape.str() + " does not match model input [N," +
                       std::to_string(config_.image_channels) + "," + std::to_string(res) + "," +
                       std::to_string(res) + "]");
    if (x.num_bits != config_.target_bits())
      throw ConfigError("input bit depth " + std::to_string(x.num_bits) + " does not match model (" +
                        std::to_string(config_.target_bits()) + " bits)");
  }

  void check_mask(const LatentMask& mask) const {
    const LatentLayout layout = latent_layout();
    if (mask.keep.size() != layout.layers.size())
      throw ShapeError("pruning mask has " + std::to_string(mask.keep.size()) + " layers, model has " +
                       std::to_string(layout.layers.size()));
    for (std::size_t i = 0; i < mask.keep.size(); ++i) {
      const auto& l = layout.layers[i];
      require_same_shape(mask.keep[i].shape(), Shape{1, l.channels, l.resolution, l.resolution},
                         "pruning mask");
    }
  }

  Var decode(int batch, Rng& rng, const BottomUpActivations* acts, const std::vector<int>& chi_offsets,
             const Temperature& temperature, const InferOptions& options,
             LatentHierarchy& hierarchy) const {
    const auto& cfg = config_;
    const ScaleTransform tf = cfg.latent_transform();
    Var h = broadcast_batch(decoder_.initial_state, batch);
    std::size_t layer = 0;
    for (std::size_t r = 0; r < cfg.resolutions.size(); ++r) {
      for (int j = 0; j < cfg.layers_per_resolution[r]; ++j, ++layer) {
        const TopDownBlock& blk = decoder_.blocks[layer];
        LatentEntry e;
        e.resolution_index = static_cast<int>(r);
        e.resolution = cfg.resolutions[r];
        e.layer = static_cast<int>(layer);
        const Var prior_out = blk.prior(h);
        e.p_mean = slice_channels(prior_out, 0, blk.z_dim);
        e.p_raw = slice_channels(prior_out, blk.z_dim, blk.z_dim);
        const Var features = slice_channels(prior_out, 2 * blk.z_dim, blk.width);
        Tensor eps(e.p_mean->shape());
        for (auto& v : eps.values()) v = rng.normal();
        if (acts) {
          const auto& group = acts->per_resolution[r];
          const int index = static_cast<int>(group.size()) - 1 - blk.group;
          const Var& chi = group[index];
          e.chi = chi.get();
          e.chi_index = chi_offsets[r] + index;
          const Var post = blk.posterior(concat_channels({chi, h}));
          e.q_mean = slice_channels(post, 0, blk.z_dim);
          e.q_raw = slice_channels(post, blk.z_dim, blk.z_dim);
          Tensor temp(Shape{}, 1.0);
          if (options.mask) {
            const Tensor& keep = options.mask->keep[layer];
            e.q_mean = select(keep, e.q_mean, e.p_mean);
            e.q_raw = select(keep, e.q_raw, e.p_raw);
            temp = Tensor(keep.shape());
            for (std::size_t i = 0; i < temp.size(); ++i)
              temp[i] = keep[i] > 0.5 ? 1.0 : options.pruned_temperature;
          }
          e.z = gaussian_sample(e.q_mean, e.q_raw, eps, temp, tf);
        } else {
          e.z = gaussian_sample(e.p_mean, e.p_raw, eps, Tensor(Shape{}, temperature.at(r)), tf);
        }
        h = add(h, features);
        h = add(h, blk.z_projection(e.z));
        h = blk.resnet(h);
        hierarchy.entries.push_back(std::move(e));
      }
      if (r + 1 < cfg.resolutions.size()) {
        const ResampleLayer& up = decoder_.unpools[r];
        h = upsample_nearest(up.projection(h), up.factor);
      }
    }
    return decoder_.head(leaky_relu(h, cfg.leaky_slope));
  }

  ModelConfig config_;
  std::vector<Var> params_;
  std::optional<Encoder> encoder_;
  Decoder decoder_;
};

}  // namespace deskvae
