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

// deskvae command line: train, evaluate, sample, prune, stability.

#include <CLI11.hpp>

#include <sys/resource.h>

#include <chrono>
#include <filesystem>
#include <iostream>

#include "deskvae/deskvae.hpp"

namespace fs = std::filesystem;
using namespace deskvae;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> steps;
  std::vector<double> temperatures{1.0};
  std::vector<double> sweep{0.025, 0.03, 0.04, 0.05, 0.07, 1.0};
  std::vector<int> batch_sizes{4};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int samples = 0;
  int columns = 8;
  int compare = 8;
  bool train_split = false;
};

void print_record(const std::string& label, const MetricsRecord& r) {
  std::cout << label << " nelbo_nats_per_dim=" << detail::fmt(r.negative_elbo_nats_per_dim)
            << " bits_per_dim=" << detail::fmt(r.bits_per_dim)
            << " recon_nats_per_dim=" << detail::fmt(r.reconstruction_nats_per_dim)
            << " kl_nats_per_dim=" << detail::fmt(r.total_kl_nats_per_dim) << "\n";
}

// Wall clock since start and peak resident set, for the run log only.
struct RunCost {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  std::string summary() const {
    rusage usage{};
    getrusage(RUSAGE_SELF, &usage);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return "wall_seconds=" + detail::fmt(secs) + " peak_rss_mb=" + detail::fmt(usage.ru_maxrss / 1024.0);
  }
};

void write_grid(const ImageBatch& images, int columns, const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  write_png(path, tile_grid(images, columns));
  std::cout << "wrote " << path << "\n";
}

std::string require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag + " is required");
  return value;
}

int cmd_train(const Options& o) {
  const RunCost cost;
  Trainer trainer = [&] {
    if (!o.checkpoint.empty()) return load_trainer(o.checkpoint);
    RunConfig cfg = load_run_config(require(o.config, "--config"));
    if (o.seed) cfg.seed = *o.seed;
    if (!o.out.empty()) cfg.output_dir = o.out;
    cfg.validate();
    return Trainer(cfg, load_dataset(cfg.data));
  }();
  const RunConfig& cfg = trainer.config();
  const std::string dir = o.out.empty() ? cfg.output_dir : o.out;
  const std::int64_t until = o.steps ? *o.steps : cfg.train.steps;
  fs::create_directories(dir);
  std::ofstream(fs::path(dir) / "config.json") << dump_run_config(cfg) << "\n";
  std::cout << "training " << trainer.model().count_parameters() << " parameters from step " << trainer.step()
            << " to " << until << "\n";
  trainer.run(until, dir, [&](const StepReport& r) {
    if (cfg.train.log_every > 0 && r.record.step % (cfg.train.log_every * 100) == 0)
      std::cout << "step " << r.record.step << " bits_per_dim=" << detail::fmt(r.record.bits_per_dim)
                << (r.record.skipped ? " skipped" : "") << "\n";
  });
  std::cout << "skipped_updates=" << trainer.guard().skipped_count << "\n";
  print_record("valid", trainer.evaluate_split(true, derive_seed(cfg.seed, {streams::kEval})).record);
  std::cout << "wrote " << (fs::path(dir) / "checkpoint.ckpt").string() << "\n";
  std::cout << cost.summary() << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  const Trainer t = load_trainer(require(o.checkpoint, "--checkpoint"));
  const std::uint64_t seed = o.seed.value_or(0);
  const Evaluation valid = t.evaluate_split(!o.train_split, seed, o.samples);
  const Evaluation train = t.evaluate_split(false, seed, o.samples);
  print_record(o.train_split ? "train" : "valid", valid.record);
  for (std::size_t r = 0; r < valid.record.kl_per_resolution_nats_per_dim.size(); ++r)
    std::cout << "kl_r" << r + 1 << "_nats_per_dim=" << detail::fmt(valid.record.kl_per_resolution_nats_per_dim[r])
              << " (resolution " << t.config().model.resolutions[r] << ")\n";
  if (t.config().model.target_bits() == 1) std::cout << "nelbo_nats_per_image=" << detail::fmt(valid.nats_per_image()) << "\n";
  std::cout << "reconstruction_noise_nats_per_dim=" << detail::fmt(valid.reconstruction_draw_std) << "\n";
  const Dataset& d = !o.train_split && !t.data().valid.empty() ? t.data().valid : t.data().train;
  EvalOptions opt;
  opt.seed = seed;
  std::cout << "ssim=" << detail::fmt(reconstruction_ssim(t.model(), d, opt)) << "\n";
  std::cout << "kl_gap_nats_per_dim=" << detail::fmt(kl_gap(train.record, valid.record)) << "\n";
  return 0;
}

int cmd_sample(const Options& o) {
  const Trainer t = load_trainer(require(o.checkpoint, "--checkpoint"));
  const ImageBatch grid = sample_rows(t.model(), o.temperatures, o.columns, o.seed.value_or(0));
  write_grid(grid, o.columns, o.out.empty() ? "samples.png" : o.out);
  return 0;
}

int cmd_prune(const Options& o) {
  const Trainer t = load_trainer(require(o.checkpoint, "--checkpoint"));
  if (t.step() == 0) std::cerr << "warning: checkpoint has not been trained; KL statistics reflect initialization\n";
  const Dataset& eval_data = t.data().valid.empty() ? t.data().train : t.data().valid;
  EvalOptions opt;
  opt.batch_size = t.config().train.eval_batch_size;
  opt.samples = o.samples > 0 ? o.samples : t.config().train.eval_samples;
  opt.seed = o.seed.value_or(0);
  const PruneSweepResult r = prune_sweep(t.model(), t.data().train, eval_data, o.sweep, opt);
  const fs::path dir = o.out.empty() ? fs::path("prune") : fs::path(o.out);
  fs::create_directories(dir);
  const std::string csv = pruning_csv(r.reports);
  std::ofstream(dir / "pruning.csv") << csv;
  std::cout << csv;
  const int n = std::min(o.compare, eval_data.size());
  write_grid(reconstruction_comparison(t.model(), eval_data.range(0, n), r.masks.front(), opt.seed), 3,
             (dir / "reconstructions.png").string());
  return 0;
}

int cmd_stability(const Options& o) {
  const RunCost cost;
  RunConfig cfg = load_run_config(require(o.config, "--config"));
  const std::int64_t steps = o.steps ? *o.steps : cfg.train.steps;
  cfg.optimizer.total_steps = steps;
  const std::string csv = stability_csv(stability_experiment(cfg, o.batch_sizes, o.seeds, steps));
  if (!o.out.empty()) {
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    std::ofstream(o.out) << csv;
  }
  std::cout << csv << cost.summary() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deskvae: train and analyze small hierarchical VAEs"};
  app.require_subcommand(1);
  Options o;
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "evaluation / sampling / run seed"); };
  auto add_steps = [&](CLI::App* c, const char* help) {
    c->add_option("--steps", o.steps, help)->check(CLI::NonNegativeNumber);
  };

  CLI::App* train = app.add_subcommand("train", "train a model from a config, or resume a checkpoint");
  train->add_option("--config", o.config, "run configuration (JSON)");
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");
  train->add_option("--out", o.out, "output directory");
  add_seed(train);
  add_steps(train, "train until this global step");

  CLI::App* evaluate = app.add_subcommand("evaluate", "report the negative ELBO of a checkpoint");
  evaluate->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  evaluate->add_option("--samples", o.samples, "posterior draws per image")->check(CLI::PositiveNumber);
  evaluate->add_flag("--train-split", o.train_split, "evaluate the training split");
  add_seed(evaluate);

  CLI::App* sample = app.add_subcommand("sample", "draw a grid of prior samples");
  sample->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  sample->add_option("--temperature", o.temperatures, "one grid row per temperature")->delimiter(',');
  sample->add_option("--columns", o.columns, "samples per row")->check(CLI::PositiveNumber);
  sample->add_option("--out", o.out, "PNG path");
  add_seed(sample);

  CLI::App* prune = app.add_subcommand("prune", "KL-ranked latent pruning sweep");
  prune->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  prune->add_option("--sweep", o.sweep, "kept fractions in [0,1]")->delimiter(',');
  prune->add_option("--samples", o.samples, "posterior draws per image")->check(CLI::PositiveNumber);
  prune->add_option("--compare", o.compare, "images in the reconstruction figure")->check(CLI::PositiveNumber);
  prune->add_option("--out", o.out, "output directory");
  add_seed(prune);

  CLI::App* stability = app.add_subcommand("stability", "paired runs with and without gradient smoothing");
  stability->add_option("--config", o.config, "base run configuration (JSON)");
  stability->add_option("--batch-sizes", o.batch_sizes, "batch sizes")->delimiter(',');
  stability->add_option("--seeds", o.seeds, "seeds")->delimiter(',');
  stability->add_option("--out", o.out, "CSV path");
  add_steps(stability, "steps per arm");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (train->parsed()) return cmd_train(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (sample->parsed()) return cmd_sample(o);
    if (prune->parsed()) return cmd_prune(o);
    if (stability->parsed()) return cmd_stability(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
