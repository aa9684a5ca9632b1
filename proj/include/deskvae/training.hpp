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
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deskvae/checkpoint.hpp"
#include "deskvae/evaluation.hpp"
#include "deskvae/latent_analysis.hpp"
#include "deskvae/run_config.hpp"

namespace deskvae {

// ----------------------------------------------------------------------------
// Metrics CSV.

namespace detail {
inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}
}  // namespace detail

inline std::string metrics_csv_header(std::size_t num_resolutions) {
  std::string h = "step,nelbo_nats,recon_nats,kl_nats";
  for (std::size_t r = 0; r < num_resolutions; ++r) h += ",kl_r" + std::to_string(r + 1);
  return h + ",bits_per_dim,grad_norm,lr,skipped";
}

inline std::string metrics_csv_row(const MetricsRecord& r) {
  using detail::fmt;
  std::string row = std::to_string(r.step) + "," + fmt(r.negative_elbo_nats_per_dim) + "," +
                    fmt(r.reconstruction_nats_per_dim) + "," + fmt(r.total_kl_nats_per_dim);
  for (double v : r.kl_per_resolution_nats_per_dim) row += "," + fmt(v);
  return row + "," + fmt(r.bits_per_dim) + "," + fmt(r.gradient_norm) + "," + fmt(r.learning_rate) + "," +
         (r.skipped ? "1" : "0");
}

// ----------------------------------------------------------------------------
// Training.

struct StepReport {
  MetricsRecord record;
  bool finite_loss = true;
  /// Optimizer step counter after the update (unchanged when skipped).
  std::int64_t optimizer_step = 0;
  double max_abs_update = 0.0;
};

class Trainer {
 public:
  Trainer(RunConfig config, DatasetSplit data)
      : config_(std::move(config)),
        data_(std::move(data)),
        model_(config_.model, derive_seed(config_.seed, {streams::kInit})),
        sampler_(data_.train.size(), config_.optimizer.batch_size, config_.seed) {
    config_.validate();
    if (data_.train.num_bits() != config_.model.target_bits())
      throw ConfigError("training data bit depth does not match the model");
    optimizer_.kind = config_.optimizer.kind;
    optimizer_.beta1 = config_.optimizer.beta1;
    optimizer_.beta2 = config_.optimizer.beta2;
    optimizer_.epsilon = config_.optimizer.epsilon;
    guard_.threshold = config_.optimizer.skip_threshold;
  }

  const RunConfig& config() const { return config_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const DatasetSplit& data() const { return data_; }
  const AdamaxState& optimizer() const { return optimizer_; }
  const SkipGuard& guard() const { return guard_; }
  std::int64_t step() const { return step_; }
  int nan_streak() const { return nan_streak_; }

  double learning_rate(std::int64_t step) const {
    return cosine_lr(step, config_.optimizer.base_lr, config_.optimizer.total_steps, config_.optimizer.floor_lr);
  }
  double kl_weight(std::int64_t step) const {
    const auto w = config_.train.kl_warmup_steps;
    return w == 0 ? 1.0 : std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(w));
  }

  /// One guarded optimizer step on the next training batch.
  StepReport train_step() {
    const std::int64_t s = step_;
    const ImageBatch batch = data_.train.gather(sampler_.indices(s));
    Rng rng(derive_seed(config_.seed, {streams::kTrain, static_cast<std::uint64_t>(s)}));
    model_.zero_grad();
    const ForwardPass pass = model_.infer(batch, rng);
    ElboTerms terms = hierarchical_elbo(pass.hierarchy, pass.output, model_.config(), batch, kl_weight(s));
    StepReport rep;
    rep.finite_loss = std::isfinite(terms.loss->value[0]);
    double norm = std::numeric_limits<double>::quiet_NaN();
    if (rep.finite_loss) {
      backward(terms.loss);
      norm = global_grad_norm(model_.parameters());
    }
    const double lr = learning_rate(s);
    UpdateResult update;
    const GuardOutcome outcome =
        guarded_apply(guard_, norm, [&] { update = adamax_step(optimizer_, model_.parameters(), lr); });
    nan_streak_ = rep.finite_loss ? 0 : nan_streak_ + 1;
    ++step_;

    rep.record = terms.record;
    rep.record.step = s;
    rep.record.gradient_norm = norm;
    rep.record.learning_rate = lr;
    rep.record.skipped = outcome == GuardOutcome::kSkipped || !update.applied;
    rep.optimizer_step = optimizer_.step;
    rep.max_abs_update = update.max_abs_update;
    if (nan_streak_ >= config_.train.divergence_patience)
      throw DivergedError("loss was non-finite for " + std::to_string(nan_streak_) + " consecutive steps at step " +
                          std::to_string(s));
    return rep;
  }

  // Checkpoints carry everything the step function reads, so resuming at
  // step s replays exactly the batches and noise of an uninterrupted run.
  Archive to_archive() const {
    Archive a;
    a.put_text("config", dump_run_config(config_));
    for (const auto& p : model_.parameters()) a.put_tensor("param/" + p->name, p->value);
    const auto& params = model_.parameters();
    for (std::size_t i = 0; i < optimizer_.first_moment.size(); ++i) {
      a.put_tensor("optim/m/" + params[i]->name, optimizer_.first_moment[i]);
      a.put_tensor("optim/u/" + params[i]->name, optimizer_.infinity_norm[i]);
    }
    a.put_int("optim/step", optimizer_.step);
    a.put_int("train/step", step_);
    a.put_int("train/skipped", guard_.skipped_count);
    a.put_int("train/nan_streak", nan_streak_);
    return a;
  }

  void save_checkpoint(const std::string& path) const { to_archive().save(path); }

  void restore(const Archive& a) {
    if (run_config_from_json(json::parse(a.text("config"))) != config_)
      throw ConfigError("checkpoint was written by a different configuration");
    std::map<std::string, Tensor> state;
    for (const auto& p : model_.parameters()) state[p->name] = a.tensor("param/" + p->name);
    model_.load_state(state);
    optimizer_.first_moment.clear();
    optimizer_.infinity_norm.clear();
    optimizer_.step = a.integer("optim/step");
    if (optimizer_.step > 0)
      for (const auto& p : model_.parameters()) {
        optimizer_.first_moment.push_back(a.tensor("optim/m/" + p->name));
        optimizer_.infinity_norm.push_back(a.tensor("optim/u/" + p->name));
      }
    step_ = a.integer("train/step");
    guard_.skipped_count = a.integer("train/skipped");
    nan_streak_ = static_cast<int>(a.integer("train/nan_streak"));
  }

  /// Runs until `until_step`, writing periodic checkpoints and CSV rows when
  /// an output directory is configured. Returns the per-step reports.
  std::vector<StepReport> run(std::int64_t until_step, const std::string& output_dir = "",
                              const std::function<void(const StepReport&)>& on_step = {}) {
    std::vector<StepReport> reports;
    std::ofstream csv;
    const std::string ckpt = output_dir.empty() ? "" : (std::filesystem::path(output_dir) / "checkpoint.ckpt").string();
    if (!output_dir.empty()) {
      std::filesystem::create_directories(output_dir);
      const auto csv_path = std::filesystem::path(output_dir) / "metrics.csv";
      const bool fresh = step_ == 0 || !std::filesystem::exists(csv_path);
      csv.open(csv_path, fresh ? std::ios::trunc : std::ios::app);
      if (!csv) throw IoError("cannot open '" + csv_path.string() + "'");
      if (fresh) csv << metrics_csv_header(config_.model.resolutions.size()) << "\n";
    }
    while (step_ < until_step) {
      StepReport rep = train_step();
      if (csv.is_open() && rep.record.step % config_.train.log_every == 0) csv << metrics_csv_row(rep.record) << "\n";
      if (on_step) on_step(rep);
      reports.push_back(std::move(rep));
      if (!ckpt.empty() && config_.train.checkpoint_every > 0 && step_ % config_.train.checkpoint_every == 0) {
        csv.flush();
        save_checkpoint(ckpt);
      }
    }
    if (!ckpt.empty()) save_checkpoint(ckpt);
    return reports;
  }

  Evaluation evaluate_split(bool validation, std::uint64_t seed, int samples = 0) const {
    const Dataset& d = validation && !data_.valid.empty() ? data_.valid : data_.train;
    EvalOptions opt;
    opt.batch_size = config_.train.eval_batch_size;
    opt.samples = samples > 0 ? samples : config_.train.eval_samples;
    opt.seed = seed;
    return evaluate(model_, d, opt);
  }

 private:
  RunConfig config_;
  DatasetSplit data_;
  Model model_;
  BatchSampler sampler_;
  AdamaxState optimizer_;
  SkipGuard guard_;
  std::int64_t step_ = 0;
  int nan_streak_ = 0;
};

/// Rebuilds a trainer from a checkpoint, reloading the dataset its config names.
inline Trainer load_trainer(const std::string& checkpoint_path) {
  const Archive a = Archive::load(checkpoint_path);
  RunConfig cfg = run_config_from_json(json::parse(a.text("config")));
  Trainer t(cfg, load_dataset(cfg.data));
  t.restore(a);
  return t;
}

// ----------------------------------------------------------------------------
// Sample grids.

/// One row per temperature, `columns` samples per row, 8-bit for display.
inline ImageBatch sample_rows(const Model& model, const std::vector<double>& temperatures, int columns,
                              std::uint64_t seed) {
  if (temperatures.empty()) throw ConfigError("at least one temperature is required");
  if (columns < 1) throw ConfigError("sample count must be >= 1");
  std::vector<ImageBatch> rows;
  for (std::size_t i = 0; i < temperatures.size(); ++i) {
    Rng rng(derive_seed(seed, {streams::kSample, i}));
    rows.push_back(dequantize_for_display(model.generate(columns, Temperature::uniform(temperatures[i]), rng)));
  }
  Shape s = rows[0].shape;
  s.n = columns * static_cast<int>(rows.size());
  ImageBatch all(s, 8);
  const std::size_t per = rows[0].pixels.size();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].pixels.begin(), rows[i].pixels.end(), all.pixels.begin() + i * per);
  return all;
}

// ----------------------------------------------------------------------------
// Pruning sweep.

struct PruneSweepResult {
  LatentKLStats stats;
  std::vector<PruningReport> reports;
  std::vector<LatentMask> masks;
};

inline PruneSweepResult prune_sweep(const Model& model, const Dataset& stats_data, const Dataset& eval_data,
                                    const std::vector<double>& kept_fractions, EvalOptions opt) {
  if (kept_fractions.empty()) throw ConfigError("prune sweep needs at least one kept fraction");
  PruneSweepResult out;
  out.stats = accumulate_kl_stats(model, stats_data, opt.batch_size, opt.seed);
  for (double q : kept_fractions) {
    out.masks.push_back(make_mask_by_fraction(out.stats, q));
    out.reports.push_back(evaluate_pruned(model, eval_data, out.masks.back(), opt));
  }
  return out;
}

inline std::string pruning_csv(const std::vector<PruningReport>& reports) {
  using detail::fmt;
  std::string s = "kept_fraction,kept_dims,total_dims,encoded_size_bytes,nelbo_bits,recon_bits,kl_bits,recon_noise_bits\n";
  for (const auto& r : reports)
    s += fmt(r.kept_fraction) + "," + std::to_string(r.kept_dims) + "," + std::to_string(r.total_dims) + "," +
         std::to_string(r.encoded_size_bytes) + "," + fmt(r.negative_elbo_bits) + "," + fmt(r.reconstruction_bits) +
         "," + fmt(r.kl_bits) + "," + fmt(r.reconstruction_noise_bits) + "\n";
  return s;
}

/// Rows of [target | full reconstruction | pruned reconstruction], 8-bit.
inline ImageBatch reconstruction_comparison(const Model& model, const ImageBatch& targets, const LatentMask& mask,
                                            std::uint64_t seed) {
  Rng full_rng(derive_seed(seed, {streams::kEval, 1}));
  Rng pruned_rng(derive_seed(seed, {streams::kEval, 1}));
  const ImageBatch full = model.reconstruct(targets, full_rng).image;
  const ImageBatch pruned = model.reconstruct(targets, pruned_rng, &mask).image;
  Shape s = targets.shape;
  s.n *= 3;
  ImageBatch out(s, targets.num_bits);
  const std::size_t per = targets.shape.sample_size();
  for (int i = 0; i < targets.shape.n; ++i) {
    const ImageBatch* srcs[3] = {&targets, &full, &pruned};
    for (int k = 0; k < 3; ++k)
      std::copy_n(srcs[k]->pixels.begin() + i * per, per, out.pixels.begin() + (3 * i + k) * per);
  }
  return dequantize_for_display(out);
}

// ----------------------------------------------------------------------------
// Stability harness: paired runs that differ only in gradient smoothing.

struct StabilityArm {
  bool diverged = false;
  double nll_bits = 0.0;
  std::int64_t skipped = 0;
};

struct StabilityRow {
  int batch_size = 0;
  std::uint64_t seed = 0;
  StabilityArm without_smoothing;
  StabilityArm with_smoothing;
};

inline StabilityArm run_stability_arm(RunConfig cfg, const DatasetSplit& data, bool smoothing, std::int64_t steps) {
  cfg.model.gradient_smoothing = smoothing;
  StabilityArm arm;
  try {
    Trainer t(cfg, data);
    t.run(steps);
    arm.skipped = t.guard().skipped_count;
    arm.nll_bits = t.evaluate_split(true, derive_seed(cfg.seed, {streams::kEval})).record.bits_per_dim;
    if (!std::isfinite(arm.nll_bits)) arm.diverged = true;
  } catch (const DivergedError&) {
    arm.diverged = true;
  }
  return arm;
}

inline std::vector<StabilityRow> stability_experiment(const RunConfig& base, const std::vector<int>& batch_sizes,
                                                      const std::vector<std::uint64_t>& seeds, std::int64_t steps) {
  const DatasetSplit data = load_dataset(base.data);
  std::vector<StabilityRow> rows;
  for (int b : batch_sizes)
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.optimizer.batch_size = b;
      cfg.seed = seed;
      StabilityRow row;
      row.batch_size = b;
      row.seed = seed;
      row.without_smoothing = run_stability_arm(cfg, data, false, steps);
      row.with_smoothing = run_stability_arm(cfg, data, true, steps);
      rows.push_back(row);
    }
  return rows;
}

inline std::string stability_csv(const std::vector<StabilityRow>& rows) {
  auto nll = [](const StabilityArm& a) { return a.diverged ? std::string("diverged") : detail::fmt(a.nll_bits); };
  std::string s = "batch_size,seed,nll_bits_without,skipped_without,nll_bits_with,skipped_with\n";
  for (const auto& r : rows)
    s += std::to_string(r.batch_size) + "," + std::to_string(r.seed) + "," + nll(r.without_smoothing) + "," +
         std::to_string(r.without_smoothing.skipped) + "," + nll(r.with_smoothing) + "," +
         std::to_string(r.with_smoothing.skipped) + "\n";
  return s;
}

}  // namespace deskvae
