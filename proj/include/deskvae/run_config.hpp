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

#include <cctype>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "deskvae/data.hpp"
#include "deskvae/error.hpp"
#include "deskvae/model_config.hpp"
#include "deskvae/optimizer.hpp"

extern char** environ;

namespace deskvae {

using nlohmann::json;

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::kAdamax;
  double base_lr = 2e-3;
  double floor_lr = 1e-4;
  /// Length of the cosine schedule.
  std::int64_t total_steps = 2000;
  int batch_size = 16;
  /// +inf disables skipping (serialized as null).
  double skip_threshold = std::numeric_limits<double>::infinity();
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const OptimizerSettings&, const OptimizerSettings&) = default;
};

struct TrainSettings {
  std::int64_t steps = 2000;
  std::int64_t checkpoint_every = 500;
  std::int64_t log_every = 1;
  /// Consecutive non-finite losses before the run is declared diverged.
  int divergence_patience = 10;
  /// Linear KL weight ramp from 0 to 1; 0 disables it.
  std::int64_t kl_warmup_steps = 0;
  int eval_batch_size = 64;
  int eval_samples = 1;

  friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

/// Small three-resolution model matching the default 8x8 RGB dataset.
inline ModelConfig desk_model() {
  ModelConfig c;
  c.resolutions = {1, 4, 8};
  c.layers_per_resolution = {1, 2, 2};
  c.widths_per_resolution = {32, 32, 32};
  c.latent_dims_per_layer = 4;
  c.include_input_resolution_latents = true;
  return c;
}

struct RunConfig {
  ModelConfig model = desk_model();
  DatasetSpec data;
  OptimizerSettings optimizer;
  TrainSettings train;
  std::string output_dir = "run";
  std::uint64_t seed = 0;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  void validate() const {
    model.validate();
    data.validate();
    if (model.image_resolution() != data.resolution)
      throw ConfigError("model image resolution " + std::to_string(model.image_resolution()) +
                        " does not match data resolution " + std::to_string(data.resolution));
    if (model.image_channels != data.channels) throw ConfigError("model and data channel counts differ");
    if (model.target_bits() != data.num_bits)
      throw ConfigError("output head expects " + std::to_string(model.target_bits()) + "-bit targets, data is " +
                        std::to_string(data.num_bits) + "-bit");
    if (!(optimizer.base_lr > 0.0) || !(optimizer.floor_lr >= 0.0)) throw ConfigError("optimizer: bad learning rates");
    if (optimizer.total_steps < 1) throw ConfigError("optimizer: total_steps must be >= 1");
    if (optimizer.batch_size < 1) throw ConfigError("optimizer: batch_size must be >= 1");
    if (!(optimizer.skip_threshold > 0.0)) throw ConfigError("optimizer: skip_threshold must be positive");
    if (train.steps < 0 || train.checkpoint_every < 0 || train.log_every < 1 || train.kl_warmup_steps < 0)
      throw ConfigError("train: step counts must be non-negative (log_every >= 1)");
    if (train.divergence_patience < 1) throw ConfigError("train: divergence_patience must be >= 1");
    if (train.eval_batch_size < 1 || train.eval_samples < 1) throw ConfigError("train: eval settings must be >= 1");
  }
};

namespace detail {

/// Reads members of one JSON object and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }
  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline std::string head_kind_name(OutputHeadConfig::Kind k) {
  return k == OutputHeadConfig::Kind::kBernoulli ? "bernoulli" : "mixture-of-logistics";
}
inline OutputHeadConfig::Kind parse_head_kind(const std::string& s) {
  if (s == "bernoulli") return OutputHeadConfig::Kind::kBernoulli;
  if (s == "mixture-of-logistics") return OutputHeadConfig::Kind::kMixtureOfLogistics;
  throw ConfigError("model.output_head.kind: unknown head '" + s + "'");
}
inline std::string source_name(DatasetSpec::Source s) {
  switch (s) {
    case DatasetSpec::Source::kSynthetic: return "synthetic";
    case DatasetSpec::Source::kDirectory: return "directory";
    case DatasetSpec::Source::kArrayFile: return "array";
  }
  return "synthetic";
}
inline DatasetSpec::Source parse_source(const std::string& s) {
  if (s == "synthetic") return DatasetSpec::Source::kSynthetic;
  if (s == "directory") return DatasetSpec::Source::kDirectory;
  if (s == "array") return DatasetSpec::Source::kArrayFile;
  throw ConfigError("data.source: unknown source '" + s + "'");
}

}  // namespace detail

// ----------------------------------------------------------------------------
// JSON mapping.

inline json to_json(const ModelConfig& m) {
  const auto& h = m.output_head;
  return json{{"resolutions", m.resolutions},
              {"layers_per_resolution", m.layers_per_resolution},
              {"widths_per_resolution", m.widths_per_resolution},
              {"latent_dims_per_layer", m.latent_dims_per_layer},
              {"bottleneck_ratio", m.bottleneck_ratio},
              {"gradient_smoothing", m.gradient_smoothing},
              {"beta_smoothing", m.beta_smoothing},
              {"asymmetry", m.asymmetry},
              {"include_input_resolution_latents", m.include_input_resolution_latents},
              {"image_channels", m.image_channels},
              {"leaky_slope", m.leaky_slope},
              {"output_head",
               {{"kind", detail::head_kind_name(h.kind)},
                {"num_bits", h.num_bits},
                {"mixtures", h.mixtures},
                {"bounded", h.bounded},
                {"log_scale_floor", h.log_scale_floor},
                {"mol_beta", h.mol_beta}}}};
}

/// Accepts either explicit fields or {"preset": name, "width_divisor": d}
/// followed by field overrides.
inline ModelConfig model_from_json(const json& j) {
  detail::StrictObject o(j, "model");
  ModelConfig m = desk_model();
  std::string preset_name;
  int divisor = 1;
  o.get("preset", preset_name);
  o.get("width_divisor", divisor);
  if (!preset_name.empty()) m = with_width_divisor(preset(preset_name), divisor);
  else if (divisor != 1) throw ConfigError("model.width_divisor requires model.preset");
  o.get("resolutions", m.resolutions);
  o.get("layers_per_resolution", m.layers_per_resolution);
  o.get("widths_per_resolution", m.widths_per_resolution);
  o.get("latent_dims_per_layer", m.latent_dims_per_layer);
  o.get("bottleneck_ratio", m.bottleneck_ratio);
  o.get("gradient_smoothing", m.gradient_smoothing);
  o.get("beta_smoothing", m.beta_smoothing);
  o.get("asymmetry", m.asymmetry);
  o.get("include_input_resolution_latents", m.include_input_resolution_latents);
  o.get("image_channels", m.image_channels);
  o.get("leaky_slope", m.leaky_slope);
  if (const json* h = o.child("output_head")) {
    detail::StrictObject ho(*h, "model.output_head");
    std::string kind = detail::head_kind_name(m.output_head.kind);
    ho.get("kind", kind);
    m.output_head.kind = detail::parse_head_kind(kind);
    ho.get("num_bits", m.output_head.num_bits);
    ho.get("mixtures", m.output_head.mixtures);
    ho.get("bounded", m.output_head.bounded);
    ho.get("log_scale_floor", m.output_head.log_scale_floor);
    ho.get("mol_beta", m.output_head.mol_beta);
    ho.finish();
  }
  o.finish();
  return m;
}

inline json to_json(const DatasetSpec& d) {
  return json{{"source", detail::source_name(d.source)},
              {"path", d.path},
              {"generator", d.generator},
              {"count", d.count},
              {"generator_seed", d.generator_seed},
              {"resolution", d.resolution},
              {"channels", d.channels},
              {"num_bits", d.num_bits},
              {"binarize", d.binarize},
              {"valid_fraction", d.valid_fraction},
              {"shuffle_seed", d.shuffle_seed}};
}

inline DatasetSpec data_from_json(const json& j) {
  detail::StrictObject o(j, "data");
  DatasetSpec d;
  std::string source = detail::source_name(d.source);
  o.get("source", source);
  d.source = detail::parse_source(source);
  o.get("path", d.path);
  o.get("generator", d.generator);
  o.get("count", d.count);
  o.get("generator_seed", d.generator_seed);
  o.get("resolution", d.resolution);
  o.get("channels", d.channels);
  o.get("num_bits", d.num_bits);
  o.get("binarize", d.binarize);
  o.get("valid_fraction", d.valid_fraction);
  o.get("shuffle_seed", d.shuffle_seed);
  o.finish();
  return d;
}

inline json to_json(const OptimizerSettings& s) {
  json j{{"kind", s.kind == OptimizerKind::kAdam ? "adam" : "adamax"},
         {"base_lr", s.base_lr},
         {"floor_lr", s.floor_lr},
         {"total_steps", s.total_steps},
         {"batch_size", s.batch_size},
         {"skip_threshold", nullptr},
         {"beta1", s.beta1},
         {"beta2", s.beta2},
         {"epsilon", s.epsilon}};
  if (std::isfinite(s.skip_threshold)) j["skip_threshold"] = s.skip_threshold;
  return j;
}

inline OptimizerSettings optimizer_from_json(const json& j) {
  detail::StrictObject o(j, "optimizer");
  OptimizerSettings s;
  std::string kind = "adamax";
  o.get("kind", kind);
  if (kind == "adamax") s.kind = OptimizerKind::kAdamax;
  else if (kind == "adam") s.kind = OptimizerKind::kAdam;
  else throw ConfigError("optimizer.kind: unknown optimizer '" + kind + "'");
  o.get("base_lr", s.base_lr);
  o.get("floor_lr", s.floor_lr);
  o.get("total_steps", s.total_steps);
  o.get("batch_size", s.batch_size);
  if (const json* t = o.child("skip_threshold")) {
    if (t->is_null()) s.skip_threshold = std::numeric_limits<double>::infinity();
    else if (t->is_number()) s.skip_threshold = t->get<double>();
    else throw ConfigError("optimizer.skip_threshold: expected a number or null");
  }
  o.get("beta1", s.beta1);
  o.get("beta2", s.beta2);
  o.get("epsilon", s.epsilon);
  o.finish();
  return s;
}

inline json to_json(const TrainSettings& t) {
  return json{{"steps", t.steps},
              {"checkpoint_every", t.checkpoint_every},
              {"log_every", t.log_every},
              {"divergence_patience", t.divergence_patience},
              {"kl_warmup_steps", t.kl_warmup_steps},
              {"eval_batch_size", t.eval_batch_size},
              {"eval_samples", t.eval_samples}};
}

inline TrainSettings train_from_json(const json& j) {
  detail::StrictObject o(j, "train");
  TrainSettings t;
  o.get("steps", t.steps);
  o.get("checkpoint_every", t.checkpoint_every);
  o.get("log_every", t.log_every);
  o.get("divergence_patience", t.divergence_patience);
  o.get("kl_warmup_steps", t.kl_warmup_steps);
  o.get("eval_batch_size", t.eval_batch_size);
  o.get("eval_samples", t.eval_samples);
  o.finish();
  return t;
}

inline json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)},       {"data", to_json(c.data)},
              {"optimizer", to_json(c.optimizer)}, {"train", to_json(c.train)},
              {"output_dir", c.output_dir},       {"seed", c.seed}};
}

inline RunConfig run_config_from_json(const json& j) {
  detail::StrictObject o(j, "config");
  RunConfig c;
  if (const json* m = o.child("model")) c.model = model_from_json(*m);
  if (const json* d = o.child("data")) c.data = data_from_json(*d);
  if (const json* p = o.child("optimizer")) c.optimizer = optimizer_from_json(*p);
  if (const json* t = o.child("train")) c.train = train_from_json(*t);
  o.get("output_dir", c.output_dir);
  o.get("seed", c.seed);
  o.finish();
  c.validate();
  return c;
}

// ----------------------------------------------------------------------------
// Environment overrides: DESKVAE_<SECTION>__<KEY>[__<SUBKEY>]=<value>. Path
// segments are lowercased; the value is parsed as JSON when possible and used
// as a plain string otherwise.

inline constexpr const char* kEnvPrefix = "DESKVAE_";

inline void apply_env_overrides(json& config, const std::vector<std::pair<std::string, std::string>>& env) {
  const std::string prefix = kEnvPrefix;
  for (const auto& [name, raw] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    std::string path = name.substr(prefix.size());
    std::vector<std::string> keys;
    for (std::size_t pos = 0;;) {
      const std::size_t next = path.find("__", pos);
      std::string key = path.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
      for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      if (key.empty()) throw ConfigError("malformed override variable '" + name + "'");
      keys.push_back(key);
      if (next == std::string::npos) break;
      pos = next + 2;
    }
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &config;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
      if (!node->is_object()) throw ConfigError("override '" + name + "' descends into a non-object");
      node = &(*node)[keys[i]];
      if (node->is_null()) *node = json::object();
    }
    if (!node->is_object()) throw ConfigError("override '" + name + "' descends into a non-object");
    (*node)[keys.back()] = value;
  }
}

inline std::vector<std::pair<std::string, std::string>> process_environment() {
  std::vector<std::pair<std::string, std::string>> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    const std::size_t eq = entry.find('=');
    if (eq != std::string::npos) out.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
  }
  return out;
}

inline RunConfig parse_run_config(const std::string& text,
                                  const std::vector<std::pair<std::string, std::string>>& env = {}) {
  json j = json::parse(text, nullptr, false, true);
  if (j.is_discarded()) throw ConfigError("configuration is not valid JSON");
  apply_env_overrides(j, env);
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::string& path, bool use_environment = true) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), use_environment ? process_environment()
                                                    : std::vector<std::pair<std::string, std::string>>{});
}

inline std::string dump_run_config(const RunConfig& c) { return to_json(c).dump(2); }

}  // namespace deskvae
