// SPDX-License-Identifier: Apache-2.0
//
// Task-gradient balancing. Each task i carries a loss weight w_i. Per step:
//
//   ratio_i  = L_i(t) / L_i(0)
//   r_i      = ratio_i / mean(ratio)
//   G_i      = || d(w_i L_i) / dW ||_2          W = anchor layer
//   target_i = mean(G) * r_i^alpha              held constant
//   L_grad   = sum_i | G_i - target_i |
//
// The weights then take a descent step on L_grad, are floored at
// kMinTaskWeight and rescaled so that they sum to the number of tasks.

#pragma once

#include <optional>
#include <span>
#include <vector>

namespace bmoe::gradnorm {

inline constexpr double kMinTaskWeight = 1e-4;

struct TaskWeights {
  std::vector<double> w;
  std::vector<double> initial_losses;  // empty until the first step
  double alpha = 0.3;
  double lambda = 0.01;

  static TaskWeights uniform(std::size_t num_tasks, double alpha, double lambda);
  std::size_t size() const noexcept { return w.size(); }
};

struct BalanceSnapshot {
  std::vector<double> losses;
  std::vector<double> loss_ratios;
  std::vector<double> ritr;
  std::vector<double> grad_norms;
  double mean_grad_norm = 0.0;
  std::vector<double> targets;
  double gradnorm_loss = 0.0;
  std::vector<double> weight_grads;
};

std::vector<double> loss_ratios(std::span<const double> current, std::span<const double> initial);
std::vector<double> ritr(std::span<const double> loss_ratios);
/// mean(G) * r_i^alpha.
std::vector<double> grad_norm_targets(std::span<const double> grad_norms, std::span<const double> ritr,
                                      double alpha);
double gradnorm_loss(std::span<const double> grad_norms, std::span<const double> ritr, double alpha);

/// dL_grad/dw_i = sign(G_i - target_i) * G_i / w_i, using that G_i is linear
/// in w_i. sign(0) = 0.
std::vector<double> weight_gradients(std::span<const double> grad_norms, std::span<const double> targets,
                                     std::span<const double> weights);

/// w - lambda * grads, floored at kMinTaskWeight, rescaled to sum to N.
TaskWeights update_and_renormalize(TaskWeights tw, std::span<const double> grads);

/// Full balancing step. Captures the initial losses on the first call.
/// `grad_norms` are the anchor-layer norms of the weighted task losses.
BalanceSnapshot balance_step(TaskWeights& tw, std::span<const double> losses,
                             std::span<const double> grad_norms);

}  // namespace bmoe::gradnorm
