// SPDX-License-Identifier: Apache-2.0

#include "bmoe/gradnorm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bmoe/error.hpp"

namespace bmoe::gradnorm {

namespace {

void same_length(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

TaskWeights TaskWeights::uniform(std::size_t num_tasks, double alpha, double lambda) {
  return TaskWeights{std::vector<double>(num_tasks, 1.0), {}, alpha, lambda};
}

std::vector<double> loss_ratios(std::span<const double> current, std::span<const double> initial) {
  same_length(current, initial, "loss_ratios");
  std::vector<double> out(current.size());
  for (std::size_t i = 0; i < current.size(); ++i) {
    if (!(initial[i] > 0.0)) {
      throw ContractError("initial loss of task " + std::to_string(i) + " must be positive");
    }
    out[i] = current[i] / initial[i];
  }
  return out;
}

std::vector<double> ritr(std::span<const double> ratios) {
  if (ratios.empty()) throw ContractError("ritr needs at least one task");
  const double m = mean_of(ratios);
  if (m == 0.0) throw ContractError("ritr undefined: mean loss ratio is zero");
  std::vector<double> out(ratios.size());
  for (std::size_t i = 0; i < ratios.size(); ++i) out[i] = ratios[i] / m;
  return out;
}

std::vector<double> grad_norm_targets(std::span<const double> grad_norms, std::span<const double> r,
                                      double alpha) {
  same_length(grad_norms, r, "grad_norm_targets");
  if (grad_norms.empty()) throw ContractError("grad_norm_targets needs at least one task");
  const double g_bar = mean_of(grad_norms);
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = g_bar * std::pow(r[i], alpha);
  return out;
}

double gradnorm_loss(std::span<const double> grad_norms, std::span<const double> r, double alpha) {
  for (double g : grad_norms)
    if (!(g >= 0.0)) throw ContractError("gradient norms must be non-negative");
  const auto targets = grad_norm_targets(grad_norms, r, alpha);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) loss += std::fabs(grad_norms[i] - targets[i]);
  return loss;
}

std::vector<double> weight_gradients(std::span<const double> grad_norms, std::span<const double> targets,
                                     std::span<const double> weights) {
  same_length(grad_norms, targets, "weight_gradients");
  same_length(grad_norms, weights, "weight_gradients");
  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] == 0.0) throw ContractError("task weight " + std::to_string(i) + " is zero");
    const double diff = grad_norms[i] - targets[i];
    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    out[i] = sign * grad_norms[i] / weights[i];
  }
  return out;
}

TaskWeights update_and_renormalize(TaskWeights tw, std::span<const double> grads) {
  same_length(tw.w, grads, "update_and_renormalize");
  for (double g : grads)
    if (!std::isfinite(g)) throw ContractError("task weight gradient is not finite");
  for (std::size_t i = 0; i < tw.w.size(); ++i) tw.w[i] = std::max(tw.w[i] - tw.lambda * grads[i], kMinTaskWeight);

  // Rescale to sum N. Weights that the rescale would push under the floor are
  // pinned at the floor and the remainder is rescaled again.
  const double n = static_cast<double>(tw.w.size());
  std::vector<bool> pinned(tw.w.size(), false);
  while (true) {
    double free_total = 0.0;
    std::size_t pinned_count = 0;
    for (std::size_t i = 0; i < tw.w.size(); ++i) {
      if (pinned[i]) ++pinned_count;
      else free_total += tw.w[i];
    }
    const double scale = (n - static_cast<double>(pinned_count) * kMinTaskWeight) / free_total;
    bool newly_pinned = false;
    for (std::size_t i = 0; i < tw.w.size(); ++i) {
      if (!pinned[i] && tw.w[i] * scale < kMinTaskWeight) {
        pinned[i] = true;
        tw.w[i] = kMinTaskWeight;
        newly_pinned = true;
      }
    }
    if (newly_pinned) continue;
    for (std::size_t i = 0; i < tw.w.size(); ++i)
      if (!pinned[i]) tw.w[i] *= scale;
    break;
  }
  return tw;
}

BalanceSnapshot balance_step(TaskWeights& tw, std::span<const double> losses, std::span<const double> grad_norms) {
  same_length(losses, tw.w, "balance_step");
  same_length(grad_norms, tw.w, "balance_step");
  if (tw.initial_losses.empty()) tw.initial_losses.assign(losses.begin(), losses.end());

  BalanceSnapshot snap;
  snap.losses.assign(losses.begin(), losses.end());
  snap.grad_norms.assign(grad_norms.begin(), grad_norms.end());
  snap.loss_ratios = loss_ratios(losses, tw.initial_losses);
  snap.ritr = ritr(snap.loss_ratios);
  snap.mean_grad_norm = mean_of(grad_norms);
  snap.targets = grad_norm_targets(grad_norms, snap.ritr, tw.alpha);
  snap.gradnorm_loss = gradnorm_loss(grad_norms, snap.ritr, tw.alpha);
  snap.weight_grads = weight_gradients(grad_norms, snap.targets, tw.w);
  tw = update_and_renormalize(std::move(tw), snap.weight_grads);
  return snap;
}

}  // namespace bmoe::gradnorm
