// SPDX-License-Identifier: Apache-2.0

#include "bmoe/baselines.hpp"

#include <vector>

#include "bmoe/error.hpp"

namespace bmoe {

HardSharedModel::HardSharedModel(const MmoeConfig& config, std::uint64_t seed)
    : MultiTaskModel(ModelKind::hard_shared, config, seed),
      embedding_(make_dense("embedding", config.input_dim, config.embed_dim)),
      trunk_(make_mlp("trunk", config.embed_dim, config.expert_hidden)) {
  for (std::size_t i = 0; i < config.num_tasks; ++i)
    heads_.push_back(make_dense("head" + std::to_string(i), trunk_.out_dim(), 1));
}

std::vector<ad::Var> HardSharedModel::forward(const ad::Var& x, ForwardMode mode) const {
  check_input(x);
  const auto& cfg = config();
  const ad::Var z = activate(embedding_(x), cfg.activation);
  const ad::Var h = trunk_(z, cfg.activation, cfg.dropout_rate, mode);
  std::vector<ad::Var> outputs;
  outputs.reserve(heads_.size());
  for (const auto& head : heads_) outputs.push_back(head(h));
  return outputs;
}

std::vector<ad::Parameter> HardSharedModel::anchor_parameters() const {
  std::vector<ad::Parameter> out{embedding_.weight()};
  if (embedding_.bias()) out.push_back(*embedding_.bias());
  return out;
}

SingleTaskMlpModel::SingleTaskMlpModel(const MmoeConfig& config, std::uint64_t seed)
    : MultiTaskModel(ModelKind::single_task_mlp, config, seed) {
  std::vector<std::size_t> widths = config.expert_hidden;
  widths.insert(widths.end(), config.tower_hidden.begin(), config.tower_hidden.end());
  for (std::size_t i = 0; i < config.num_tasks; ++i) {
    const std::string name = "task" + std::to_string(i);
    Dense embedding = make_dense(name + ".embedding", config.input_dim, config.embed_dim);
    Mlp body = make_mlp(name + ".body", config.embed_dim, widths);
    Dense head = make_dense(name + ".out", body.out_dim(), 1);
    branches_.push_back(Branch{std::move(embedding), std::move(body), std::move(head)});
  }
}

std::vector<ad::Var> SingleTaskMlpModel::forward(const ad::Var& x, ForwardMode mode) const {
  check_input(x);
  const auto& cfg = config();
  std::vector<ad::Var> outputs;
  outputs.reserve(branches_.size());
  for (const auto& b : branches_) {
    const ad::Var z = activate(b.embedding(x), cfg.activation);
    outputs.push_back(b.head(b.body(z, cfg.activation, cfg.dropout_rate, mode)));
  }
  return outputs;
}

std::unique_ptr<MultiTaskModel> build_model(ModelKind kind, const MmoeConfig& config, std::uint64_t seed) {
  switch (kind) {
    case ModelKind::bmoe: return std::make_unique<MmoeModel>(config, seed, GateMode::per_task);
    case ModelKind::one_gate_moe: return std::make_unique<MmoeModel>(config, seed, GateMode::shared);
    case ModelKind::hard_shared: return std::make_unique<HardSharedModel>(config, seed);
    case ModelKind::single_task_mlp: return std::make_unique<SingleTaskMlpModel>(config, seed);
  }
  throw ContractError("unhandled model kind");
}

std::unique_ptr<MultiTaskModel> build_baseline(ModelKind kind, const MmoeConfig& config, std::uint64_t seed) {
  if (kind == ModelKind::bmoe) throw ConfigError("bmoe is not a baseline kind");
  return build_model(kind, config, seed);
}

std::unique_ptr<MultiTaskModel> clone_model(const MultiTaskModel& source) {
  auto copy = build_model(source.kind(), source.config(), source.seed());
  copy->restore(source.snapshot());
  return copy;
}

}  // namespace bmoe
