// SPDX-License-Identifier: Apache-2.0

#include "bmoe/mmoe.hpp"

#include "bmoe/error.hpp"

namespace bmoe {

MmoeModel::MmoeModel(const MmoeConfig& config, std::uint64_t seed, GateMode gates)
    : MultiTaskModel(gates == GateMode::per_task ? ModelKind::bmoe : ModelKind::one_gate_moe, config, seed),
      gate_mode_(gates),
      embedding_(make_dense("embedding", config.input_dim, config.embed_dim)) {
  for (std::size_t k = 0; k < config.num_experts; ++k)
    experts_.push_back(make_mlp("expert" + std::to_string(k), config.embed_dim, config.expert_hidden));
  const std::size_t n_gates = gates == GateMode::per_task ? config.num_tasks : 1;
  for (std::size_t i = 0; i < n_gates; ++i)
    gates_.push_back(make_dense("gate" + std::to_string(i), config.embed_dim, config.num_experts, false));
  const std::size_t expert_out = config.expert_hidden.back();
  for (std::size_t i = 0; i < config.num_tasks; ++i) {
    const std::string name = "tower" + std::to_string(i);
    towers_.push_back(make_mlp(name, expert_out, config.tower_hidden));
    const std::size_t head_in = config.tower_hidden.empty() ? expert_out : config.tower_hidden.back();
    heads_.push_back(make_dense(name + ".out", head_in, 1));
  }
}

ad::Var MmoeModel::embed(const ad::Var& x) const {
  check_input(x);
  return activate(embedding_(x), config().activation);
}

ad::Var MmoeModel::gate_weights(const ad::Var& z, std::size_t task) const {
  if (task >= config().num_tasks) {
    throw ContractError("task index " + std::to_string(task) + " out of range for " +
                        std::to_string(config().num_tasks) + " tasks");
  }
  const auto& gate = gates_[gate_mode_ == GateMode::per_task ? task : 0];
  return ad::softmax_rows(gate(z));
}

ad::Var MmoeModel::expert(const ad::Var& z, std::size_t k, ForwardMode mode) const {
  return experts_.at(k)(z, config().activation, config().dropout_rate, mode);
}

ad::Var MmoeModel::mix(const ad::Var& gates, std::span<const ad::Var> experts) const {
  if (gates.cols() != experts.size()) {
    throw DimensionError("gate width " + std::to_string(gates.cols()) + " does not match " +
                         std::to_string(experts.size()) + " experts");
  }
  ad::Var acc = ad::mul(ad::column(gates, 0), experts[0]);
  for (std::size_t k = 1; k < experts.size(); ++k)
    acc = ad::add(acc, ad::mul(ad::column(gates, k), experts[k]));
  return acc;
}

std::vector<ad::Var> MmoeModel::forward(const ad::Var& x, ForwardMode mode) const {
  const ad::Var z = embed(x);
  std::vector<ad::Var> expert_out;
  expert_out.reserve(experts_.size());
  for (std::size_t k = 0; k < experts_.size(); ++k) expert_out.push_back(expert(z, k, mode));

  const auto& cfg = config();
  std::vector<ad::Var> outputs;
  outputs.reserve(cfg.num_tasks);
  ad::Var shared_mix;
  if (gate_mode_ == GateMode::shared) shared_mix = mix(gate_weights(z, 0), expert_out);
  for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
    const ad::Var psi = gate_mode_ == GateMode::shared ? shared_mix : mix(gate_weights(z, i), expert_out);
    outputs.push_back(heads_[i](towers_[i](psi, cfg.activation, cfg.dropout_rate, mode)));
  }
  return outputs;
}

std::vector<ad::Parameter> MmoeModel::anchor_parameters() const {
  std::vector<ad::Parameter> out{embedding_.weight()};
  if (embedding_.bias()) out.push_back(*embedding_.bias());
  return out;
}

}  // namespace bmoe
