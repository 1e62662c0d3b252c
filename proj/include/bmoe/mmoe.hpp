// SPDX-License-Identifier: Apache-2.0
//
// Multi-gate mixture of experts.
//
//   z      = act(x W_e + b_e)                       shared embedding
//   g_i    = softmax(z W_g[i])                      one gate per task
//   psi_i  = sum_k g_i[:, k] * expert_k(z)
//   yhat_i = tower_i(psi_i)
//
// With GateMode::shared a single gate serves every task, which is the
// one-gate MoE baseline.

#pragma once

#include "bmoe/model.hpp"

namespace bmoe {

enum class GateMode { per_task, shared };

class MmoeModel : public MultiTaskModel {
 public:
  MmoeModel(const MmoeConfig& config, std::uint64_t seed, GateMode gates = GateMode::per_task);

  /// Embedded representation z; requires x to have input_dim columns.
  ad::Var embed(const ad::Var& x) const;
  /// Row-stochastic B x K mixing weights for a task.
  ad::Var gate_weights(const ad::Var& z, std::size_t task) const;
  ad::Var expert(const ad::Var& z, std::size_t k, ForwardMode mode) const;
  /// Gate-weighted sum of expert outputs for a task.
  ad::Var mix(const ad::Var& gates, std::span<const ad::Var> experts) const;

  std::vector<ad::Var> forward(const ad::Var& x, ForwardMode mode) const override;
  std::vector<ad::Parameter> anchor_parameters() const override;

  GateMode gate_mode() const noexcept { return gate_mode_; }

 private:
  GateMode gate_mode_;
  Dense embedding_;
  std::vector<Mlp> experts_;
  std::vector<Dense> gates_;
  std::vector<Mlp> towers_;
  std::vector<Dense> heads_;
};

}  // namespace bmoe
