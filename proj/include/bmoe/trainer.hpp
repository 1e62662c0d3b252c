// SPDX-License-Identifier: Apache-2.0
//
// Training loop for every MultiTaskModel. One step:
//   1. forward the batch, per-task MSE losses L_i
//   2. with balancing enabled, anchor-layer norms G_i of w_i L_i (one reverse
//      pass per task) feed gradnorm::balance_step
//   3. one reverse pass of sum_i w_i L_i (weights before the update) and an
//      optimizer step on all model parameters

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bmoe/data.hpp"
#include "bmoe/error.hpp"
#include "bmoe/gradnorm.hpp"
#include "bmoe/metrics.hpp"
#include "bmoe/model.hpp"
#include "bmoe/rng.hpp"

namespace bmoe {

enum class OptimizerKind { adam, sgd };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct TrainConfig {
  int epochs = 200;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double weight_decay = 0.001;
  int lr_decay_epoch = 100;
  double lr_decay_factor = 0.1;
  double alpha = 0.3;
  // Task-weight step size; the learning rate when unset.
  std::optional<double> lambda;
  // Empty means all ones.
  std::vector<double> initial_task_weights;
  std::uint64_t seed = 0;
  bool gradnorm_enabled = true;
  OptimizerKind optimizer = OptimizerKind::adam;
  bool shuffle = false;
  // Record per-task anchor gradient norms even when balancing is off.
  bool track_grad_norms = false;
  // Keep one TraceRow per task per balancing step.
  bool trace = false;

  double balance_step_size() const { return lambda.value_or(learning_rate); }
  /// Throws ConfigError.
  void validate(std::size_t num_tasks) const;
};

/// Learning rate for a zero-based epoch index: the base rate before
/// lr_decay_epoch, base * lr_decay_factor from then on.
double learning_rate_at(const TrainConfig& cfg, int epoch);

/// Adam with decoupled weight decay, or plain SGD with the same decay term.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(std::span<const ad::Parameter> params, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  OptimizerKind kind_;
  double weight_decay_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct TraceRow {
  std::size_t step = 0;
  std::size_t task = 0;
  double loss = 0.0;
  double loss_ratio = 0.0;
  double ritr = 0.0;
  double grad_norm = 0.0;
  double weight = 0.0;  // weight applied during this step
};

struct StepResult {
  std::vector<double> losses;
  std::vector<double> weights_used;
  double total_loss = 0.0;
  std::vector<double> grad_norms;  // empty unless computed
  std::optional<gradnorm::BalanceSnapshot> balance;
};

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double total_loss = 0.0;            // mean weighted loss over batches
  std::vector<double> train_loss;     // mean per-task loss over batches
  std::vector<double> weights;        // task weights at the end of the epoch
  std::vector<double> grad_norms;     // mean per-task anchor norm, empty if untracked
  std::vector<TaskMetrics> val;       // denormalized validation metrics
  double seconds = 0.0;
};

struct TrainReport {
  ModelKind kind = ModelKind::bmoe;
  std::vector<std::string> task_names;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::vector<TaskMetrics> best_val;
  std::vector<TaskMetrics> test;
  std::vector<double> initial_losses;
  std::vector<double> final_weights;
  std::size_t steps = 0;
  std::size_t balance_steps = 0;
  std::vector<TraceRow> trace;
  double train_seconds = 0.0;
  double infer_seconds = 0.0;
};

class Trainer {
 public:
  /// Models without an anchor layer (single_task_mlp) always train with the
  /// static task weights; gradnorm and norm tracking are switched off for them.
  Trainer(MultiTaskModel& model, TrainConfig cfg);

  /// One optimization step on a normalized batch (x: B x F, y: B x N).
  StepResult train_step(const Matrix& x, const Matrix& y, double learning_rate);

  /// Full run over a normalized split. The model ends holding the parameters
  /// of the best validation epoch (lowest mean task RMSE).
  TrainReport fit(const SplitDataset& split);

  const gradnorm::TaskWeights& task_weights() const noexcept { return weights_; }
  std::size_t balance_steps() const noexcept { return balance_steps_; }
  std::size_t step_count() const noexcept { return steps_; }
  const std::vector<TraceRow>& trace() const noexcept { return trace_; }
  const TrainConfig& config() const noexcept { return cfg_; }

 private:
  std::vector<double> anchor_grad_norms(std::span<const ad::Var> losses, std::span<const double> weights);

  MultiTaskModel& model_;
  TrainConfig cfg_;
  Optimizer optimizer_;
  gradnorm::TaskWeights weights_;
  Rng rng_;
  std::size_t steps_ = 0;
  std::size_t balance_steps_ = 0;
  std::vector<TraceRow> trace_;
};

/// Eval-mode predictions mapped back to original target units.
Matrix predict_denormalized(const MultiTaskModel& model, const Dataset& normalized, const Normalizer& stats);

/// Metrics per task on denormalized targets; r2 is NaN for a constant column.
std::vector<TaskMetrics> evaluate(const MultiTaskModel& model, const Dataset& normalized, const Normalizer& stats);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<TaskMetrics> test;
  double train_seconds = 0.0;
  double infer_seconds = 0.0;
};

struct MultiSeedReport {
  std::vector<SeedResult> runs;
  std::vector<TaskMetrics> mean;
  std::vector<TaskMetrics> stddev;  // sample std, 0 for a single run
};

/// Mean and sample standard deviation of each metric across runs.
MultiSeedReport aggregate_runs(std::vector<SeedResult> runs);

class PartialResultsError : public Error {
 public:
  PartialResultsError(std::vector<std::uint64_t> failed, std::string detail, MultiSeedReport partial);
  const std::vector<std::uint64_t>& failed_seeds() const noexcept { return failed_; }
  const MultiSeedReport& partial() const noexcept { return partial_; }

 private:
  std::vector<std::uint64_t> failed_;
  MultiSeedReport partial_;
};

/// Trains and tests one model per seed cfg.seed + k, k < n_seeds, using up to
/// `jobs` threads. Throws PartialResultsError if any seed fails.
MultiSeedReport multi_seed_run(ModelKind kind, const MmoeConfig& model_cfg, const SplitDataset& split,
                               const TrainConfig& cfg, std::size_t n_seeds, std::size_t jobs = 1);

}  // namespace bmoe
