// SPDX-License-Identifier: Apache-2.0

#include "bmoe/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "bmoe/baselines.hpp"

namespace bmoe {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Keeps dropout and shuffling streams apart from the initialization stream.
constexpr std::uint64_t kTrainerStream = 0x6A09E667F3BCC909ULL;

double mean_rmse(const std::vector<TaskMetrics>& m) {
  double acc = 0.0;
  for (const auto& t : m) acc += t.rmse;
  return acc / static_cast<double>(m.size());
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (expected adam or sgd)");
}

void TrainConfig::validate(std::size_t num_tasks) const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (lr_decay_epoch < 0) throw ConfigError("lr_decay_epoch must be non-negative");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw ConfigError("lr_decay_factor must lie in (0, 1]");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
  if (lambda && !(*lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (!initial_task_weights.empty()) {
    if (initial_task_weights.size() != num_tasks) {
      throw ConfigError("initial_task_weights has " + std::to_string(initial_task_weights.size()) +
                        " entries for " + std::to_string(num_tasks) + " tasks");
    }
    for (double w : initial_task_weights)
      if (!(w > 0.0)) throw ConfigError("initial task weights must be positive");
  }
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  return epoch >= cfg.lr_decay_epoch ? cfg.learning_rate * cfg.lr_decay_factor : cfg.learning_rate;
}

Optimizer::Optimizer(OptimizerKind kind, double weight_decay, double beta1, double beta2, double eps)
    : kind_(kind), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::step(std::span<const ad::Parameter> params, double lr) {
  ++t_;
  if (kind_ == OptimizerKind::adam && m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.var.rows(), p.var.cols());
      v_.emplace_back(p.var.rows(), p.var.cols());
    }
  }
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Var var = params[i].var;
    auto value = var.mutable_value().data();
    const auto grad = var.grad().data();
    const double decay = 1.0 - lr * weight_decay_;
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t j = 0; j < value.size(); ++j) value[j] = value[j] * decay - lr * grad[j];
      continue;
    }
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * grad[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * grad[j] * grad[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      value[j] = value[j] * decay - lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

Trainer::Trainer(MultiTaskModel& model, TrainConfig cfg)
    : model_(model),
      cfg_(std::move(cfg)),
      optimizer_(cfg_.optimizer, cfg_.weight_decay),
      rng_(cfg_.seed ^ kTrainerStream) {
  const std::size_t n = model_.config().num_tasks;
  cfg_.validate(n);
  weights_ = gradnorm::TaskWeights::uniform(n, cfg_.alpha, cfg_.balance_step_size());
  if (!cfg_.initial_task_weights.empty()) weights_.w = cfg_.initial_task_weights;
  // Separate per-task networks share nothing to balance; they train on the
  // static weights.
  if (model_.anchor_parameters().empty()) {
    cfg_.gradnorm_enabled = false;
    cfg_.track_grad_norms = false;
  }
}

std::vector<double> Trainer::anchor_grad_norms(std::span<const ad::Var> losses, std::span<const double> weights) {
  const auto anchor = model_.anchor_parameters();
  std::vector<double> norms(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    ad::zero_grads(anchor);
    ad::backward(ad::scale(losses[i], weights[i]));
    norms[i] = ad::grad_l2_norm(anchor);
    if (!std::isfinite(norms[i])) {
      throw NumericError("non-finite anchor gradient norm for task " + std::to_string(i) + " at step " +
                         std::to_string(steps_));
    }
  }
  return norms;
}

StepResult Trainer::train_step(const Matrix& x, const Matrix& y, double learning_rate) {
  const std::size_t n = model_.config().num_tasks;
  if (x.rows() == 0) throw ContractError("train_step: empty batch");
  if (y.rows() != x.rows() || y.cols() != n) {
    throw DimensionError("train_step: targets " + y.shape_string() + " do not match batch of " +
                         std::to_string(x.rows()) + " rows and " + std::to_string(n) + " tasks");
  }

  const auto preds = model_.forward(ad::constant(x), ForwardMode{true, &rng_});
  const ad::Var targets = ad::constant(y);
  std::vector<ad::Var> losses;
  StepResult result;
  for (std::size_t i = 0; i < n; ++i) {
    losses.push_back(ad::mse(preds[i], ad::column(targets, i)));
    const double l = losses.back().value().item();
    if (!std::isfinite(l)) {
      throw NumericError("non-finite loss for task " + std::to_string(i) + " at step " + std::to_string(steps_));
    }
    result.losses.push_back(l);
  }
  result.weights_used = weights_.w;

  if (cfg_.gradnorm_enabled || cfg_.track_grad_norms) result.grad_norms = anchor_grad_norms(losses, weights_.w);

  if (cfg_.gradnorm_enabled) {
    result.balance = gradnorm::balance_step(weights_, result.losses, result.grad_norms);
    ++balance_steps_;
    const double total = std::accumulate(weights_.w.begin(), weights_.w.end(), 0.0);
    if (std::fabs(total - static_cast<double>(n)) > 1e-9) {
      throw NumericError("task weights sum to " + std::to_string(total) + " after step " + std::to_string(steps_));
    }
    if (cfg_.trace) {
      const auto& b = *result.balance;
      for (std::size_t i = 0; i < n; ++i) {
        trace_.push_back(TraceRow{steps_, i, b.losses[i], b.loss_ratios[i], b.ritr[i], b.grad_norms[i],
                                  result.weights_used[i]});
      }
    }
  }

  ad::Var total = ad::scale(losses[0], result.weights_used[0]);
  for (std::size_t i = 1; i < n; ++i) total = ad::add(total, ad::scale(losses[i], result.weights_used[i]));
  result.total_loss = total.value().item();

  const auto& params = model_.parameters();
  ad::zero_grads(params);
  ad::backward(total);
  optimizer_.step(params, learning_rate);
  ++steps_;
  return result;
}

TrainReport Trainer::fit(const SplitDataset& split) {
  if (split.normalization.empty()) throw ContractError("fit expects a normalized split");
  const std::size_t n = model_.config().num_tasks;
  if (split.train.num_tasks() != n) {
    throw DimensionError("split has " + std::to_string(split.train.num_tasks()) + " targets, model has " +
                         std::to_string(n) + " tasks");
  }
  if (split.train.size() == 0) throw ContractError("empty training split");

  TrainReport report;
  report.kind = model_.kind();
  report.task_names = split.train.target_names;
  const auto run_start = Clock::now();

  const std::size_t rows = split.train.size();
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_score = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_params;
  const bool tracks_norms = cfg_.gradnorm_enabled || cfg_.track_grad_norms;

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = learning_rate_at(cfg_, epoch);
    rec.train_loss.assign(n, 0.0);
    if (tracks_norms) rec.grad_norms.assign(n, 0.0);

    if (cfg_.shuffle) {
      for (std::size_t i = rows; i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);
    }
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < rows; begin += cfg_.batch_size) {
      const std::size_t end = std::min(rows, begin + cfg_.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const auto step = train_step(split.train.features.gather_rows(idx), split.train.targets.gather_rows(idx),
                                   rec.learning_rate);
      for (std::size_t i = 0; i < n; ++i) rec.train_loss[i] += step.losses[i];
      for (std::size_t i = 0; i < step.grad_norms.size(); ++i) rec.grad_norms[i] += step.grad_norms[i];
      rec.total_loss += step.total_loss;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    for (double& v : rec.train_loss) v *= inv;
    for (double& v : rec.grad_norms) v *= inv;
    rec.total_loss *= inv;
    rec.weights = weights_.w;

    if (split.val.size() > 0) {
      rec.val = evaluate(model_, split.val, split.normalization);
      const double score = mean_rmse(rec.val);
      if (score < best_score) {
        best_score = score;
        best_params = model_.snapshot();
        report.best_epoch = epoch;
        report.best_val = rec.val;
      }
    }
    rec.seconds = seconds_since(epoch_start);
    report.epochs.push_back(std::move(rec));
  }

  if (!best_params.empty()) model_.restore(best_params);
  report.train_seconds = seconds_since(run_start);

  const auto infer_start = Clock::now();
  if (split.test.size() > 0) report.test = evaluate(model_, split.test, split.normalization);
  report.infer_seconds = seconds_since(infer_start);

  report.initial_losses = weights_.initial_losses;
  report.final_weights = weights_.w;
  report.steps = steps_;
  report.balance_steps = balance_steps_;
  report.trace = trace_;
  return report;
}

Matrix predict_denormalized(const MultiTaskModel& model, const Dataset& normalized, const Normalizer& stats) {
  return stats.denormalize_targets(model.predict(normalized.features));
}

std::vector<TaskMetrics> evaluate(const MultiTaskModel& model, const Dataset& normalized, const Normalizer& stats) {
  const Matrix yhat = predict_denormalized(model, normalized, stats);
  const Matrix y = stats.denormalize_targets(normalized.targets);
  return column_metrics(y, yhat);
}

MultiSeedReport aggregate_runs(std::vector<SeedResult> runs) {
  MultiSeedReport report;
  report.runs = std::move(runs);
  if (report.runs.empty()) return report;
  const std::size_t tasks = report.runs.front().test.size();
  const double count = static_cast<double>(report.runs.size());
  report.mean.assign(tasks, TaskMetrics{});
  report.stddev.assign(tasks, TaskMetrics{});
  for (std::size_t t = 0; t < tasks; ++t) {
    auto stat = [&](double TaskMetrics::*field, double& mean_out, double& sd_out) {
      double acc = 0.0;
      for (const auto& r : report.runs) acc += r.test[t].*field;
      mean_out = acc / count;
      double var = 0.0;
      for (const auto& r : report.runs) var += (r.test[t].*field - mean_out) * (r.test[t].*field - mean_out);
      sd_out = report.runs.size() > 1 ? std::sqrt(var / (count - 1.0)) : 0.0;
    };
    stat(&TaskMetrics::rmse, report.mean[t].rmse, report.stddev[t].rmse);
    stat(&TaskMetrics::mae, report.mean[t].mae, report.stddev[t].mae);
    stat(&TaskMetrics::r2, report.mean[t].r2, report.stddev[t].r2);
  }
  return report;
}

PartialResultsError::PartialResultsError(std::vector<std::uint64_t> failed, std::string detail,
                                         MultiSeedReport partial)
    : Error(std::move(detail)), failed_(std::move(failed)), partial_(std::move(partial)) {}

MultiSeedReport multi_seed_run(ModelKind kind, const MmoeConfig& model_cfg, const SplitDataset& split,
                               const TrainConfig& cfg, std::size_t n_seeds, std::size_t jobs) {
  if (n_seeds < 1) throw ContractError("multi_seed_run needs at least one seed");
  jobs = std::clamp<std::size_t>(jobs, 1, n_seeds);

  std::vector<std::optional<SeedResult>> results(n_seeds);
  std::vector<std::string> errors(n_seeds);
  std::size_t next = 0;
  std::mutex lock;

  auto worker = [&] {
    while (true) {
      std::size_t k;
      {
        std::lock_guard guard(lock);
        if (next >= n_seeds) return;
        k = next++;
      }
      const std::uint64_t seed = cfg.seed + k;
      try {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = seed;
        auto model = build_model(kind, model_cfg, seed);
        Trainer trainer(*model, run_cfg);
        const auto report = trainer.fit(split);
        results[k] = SeedResult{seed, report.test, report.train_seconds, report.infer_seconds};
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  std::vector<SeedResult> ok;
  std::vector<std::uint64_t> failed;
  std::ostringstream detail;
  for (std::size_t k = 0; k < n_seeds; ++k) {
    if (results[k]) {
      ok.push_back(*results[k]);
    } else {
      failed.push_back(cfg.seed + k);
      detail << (failed.size() == 1 ? "" : "; ") << "seed " << cfg.seed + k << ": " << errors[k];
    }
  }
  auto report = aggregate_runs(std::move(ok));
  if (!failed.empty()) {
    throw PartialResultsError(failed, std::to_string(failed.size()) + " of " + std::to_string(n_seeds) +
                                          " seed runs failed (" + detail.str() + ")",
                              std::move(report));
  }
  return report;
}

}  // namespace bmoe
