#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "training/adamw.hpp"
#include "training/model.hpp"
#include "training/tasks.hpp"

namespace training {

struct TrainConfig {
  TaskSpec task;
  ModelConfig model;
  OptimHparams opt;
  std::size_t max_steps = 20000;
  std::size_t batch_size = 8;
  std::size_t eval_every = 250;
  std::size_t eval_samples = 64;
  double target_accuracy = 0.0;  // early stop once reached; 0 disables
  std::uint64_t seed = 42;
  std::size_t threads = 1;  // batch-parallel workers
  double divergence_factor = 10.0;
  std::size_t divergence_patience = 100;
};

struct MetricRow {
  std::size_t step;
  std::string split;  // "train" or "eval"
  double loss;
  double accuracy;
};

struct TrainResult {
  std::vector<MetricRow> history;  // append-only
  std::size_t steps_run = 0;
  double final_eval_loss = 0.0;
  double final_eval_accuracy = 0.0;
  bool reached_target = false;
  bool diverged = false;
};

using MetricCallback = std::function<void(const MetricRow&)>;

// A reproducible run: identical (config, seed, threads) produce an identical
// metric history. Data, dropout and init derive from disjoint seed streams.
// Divergence (train loss above divergence_factor x initial for
// divergence_patience consecutive steps) stops the run with history intact.
TrainResult train(Model& model, const TrainConfig& cfg,
                  const MetricCallback& on_metric = {});

// Deterministic evaluation (dropout off) over a fixed sample set.
MetricRow evaluate(Model& model, const TrainConfig& cfg, std::size_t step);

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricRow>& history);

struct GradCheckReport {
  double max_norm_rel_err = 0.0;  // normwise, per parameter tensor (the gate)
  std::string worst_param;
  double max_elem_rel_err = 0.0;  // elementwise diagnostic
  std::string worst_elem;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t params_checked = 0;
};

// Central-difference check of every parameter against the tape gradients, in
// deterministic mode. The caller prepares the parameter point (e.g. via
// randomize_parameters so zero-initialized projections do not hide paths).
GradCheckReport grad_check(Model& model, const Sample& sample, double eps = 1e-5);

}  // namespace training
