// SPDX-License-Identifier: Apache-2.0
//
// Comparison models sharing the MultiTaskModel contract:
//   single_task_mlp  one independent MLP per task, nothing shared
//   hard_shared      shared embedding and trunk, one linear head per task
//   one_gate_moe     mixture of experts with a single gate for all tasks

#pragma once

#include <cstdint>
#include <memory>

#include "bmoe/mmoe.hpp"
#include "bmoe/model.hpp"

namespace bmoe {

class HardSharedModel : public MultiTaskModel {
 public:
  HardSharedModel(const MmoeConfig& config, std::uint64_t seed);

  std::vector<ad::Var> forward(const ad::Var& x, ForwardMode mode) const override;
  std::vector<ad::Parameter> anchor_parameters() const override;

 private:
  Dense embedding_;
  Mlp trunk_;
  std::vector<Dense> heads_;
};

class SingleTaskMlpModel : public MultiTaskModel {
 public:
  SingleTaskMlpModel(const MmoeConfig& config, std::uint64_t seed);

  std::vector<ad::Var> forward(const ad::Var& x, ForwardMode mode) const override;
  // No layer is shared, so there is nothing to balance.
  std::vector<ad::Parameter> anchor_parameters() const override { return {}; }

 private:
  struct Branch {
    Dense embedding;
    Mlp body;
    Dense head;
  };
  std::vector<Branch> branches_;
};

/// Any model kind, including the full mixture of experts.
std::unique_ptr<MultiTaskModel> build_model(ModelKind kind, const MmoeConfig& config,
                                            std::uint64_t seed);

/// Comparison models only; ConfigError for ModelKind::bmoe.
std::unique_ptr<MultiTaskModel> build_baseline(ModelKind kind, const MmoeConfig& config, std::uint64_t seed);

/// Fresh model of the same kind and configuration carrying a copy of the
/// source's parameter values.
std::unique_ptr<MultiTaskModel> clone_model(const MultiTaskModel& source);

}  // namespace bmoe
