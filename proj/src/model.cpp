// SPDX-License-Identifier: Apache-2.0

#include "bmoe/model.hpp"

#include <cmath>

#include "bmoe/error.hpp"

namespace bmoe {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "mish"; }

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::bmoe: return "bmoe";
    case ModelKind::single_task_mlp: return "single_task_mlp";
    case ModelKind::hard_shared: return "hard_shared";
    case ModelKind::one_gate_moe: return "one_gate_moe";
  }
  return "unknown";
}

Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "mish") return Activation::mish;
  throw ConfigError("unknown activation '" + std::string(s) + "' (expected relu or mish)");
}

ModelKind parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::bmoe, ModelKind::single_task_mlp, ModelKind::hard_shared,
                 ModelKind::one_gate_moe}) {
    if (s == to_string(k)) return k;
  }
  throw ConfigError("unknown model kind '" + std::string(s) +
                    "' (expected bmoe, single_task_mlp, hard_shared or one_gate_moe)");
}

void MmoeConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be at least 1");
  };
  positive(input_dim, "input_dim");
  positive(embed_dim, "embed_dim");
  positive(num_experts, "num_experts");
  positive(num_tasks, "num_tasks");
  if (expert_hidden.empty()) throw ConfigError("expert_hidden needs at least one layer");
  for (auto w : expert_hidden) positive(w, "expert_hidden width");
  for (auto w : tower_hidden) positive(w, "tower_hidden width");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must lie in [0, 1), got " + std::to_string(dropout_rate));
  }
}

ad::Var activate(const ad::Var& x, Activation a) {
  return a == Activation::relu ? ad::relu(x) : ad::mish(x);
}

ad::Var dropout(const ad::Var& x, double rate, bool training, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ContractError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout in training mode needs a random generator");
  Matrix mask(x.rows(), x.cols());
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = rng->uniform() < rate ? 0.0 : keep_scale;
  return ad::mul(x, ad::constant(std::move(mask)));
}

ad::Var Dense::operator()(const ad::Var& x) const {
  auto out = ad::matmul(x, weight_.var);
  return bias_ ? ad::add(out, bias_->var) : out;
}

ad::Var Mlp::operator()(const ad::Var& x, Activation a, double dropout_rate, ForwardMode mode) const {
  ad::Var h = x;
  for (const auto& layer : layers) h = dropout(activate(layer(h), a), dropout_rate, mode.training, mode.rng);
  return h;
}

MultiTaskModel::MultiTaskModel(ModelKind kind, MmoeConfig config, std::uint64_t seed)
    : kind_(kind), config_(std::move(config)), seed_(seed), init_rng_(seed) {
  config_.validate();
}

Dense MultiTaskModel::make_dense(const std::string& name, std::size_t in, std::size_t out, bool with_bias) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (double& v : w.data()) v = init_rng_.uniform(-limit, limit);
  params_.push_back(ad::make_parameter(name + ".weight", std::move(w)));
  ad::Parameter weight = params_.back();
  std::optional<ad::Parameter> bias;
  if (with_bias) {
    params_.push_back(ad::make_parameter(name + ".bias", Matrix(1, out)));
    bias = params_.back();
  }
  return Dense(std::move(weight), std::move(bias));
}

Mlp MultiTaskModel::make_mlp(const std::string& name, std::size_t in, std::span<const std::size_t> widths) {
  Mlp mlp;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    mlp.layers.push_back(make_dense(name + ".layer" + std::to_string(l), in, widths[l]));
    in = widths[l];
  }
  return mlp;
}

void MultiTaskModel::check_input(const ad::Var& x) const {
  if (x.cols() != config_.input_dim) {
    throw DimensionError("input has " + std::to_string(x.cols()) + " columns, model expects " +
                         std::to_string(config_.input_dim));
  }
}

Matrix MultiTaskModel::predict(const Matrix& x) const {
  const auto outputs = forward(ad::constant(x), ForwardMode{});
  Matrix out(x.rows(), outputs.size());
  for (std::size_t t = 0; t < outputs.size(); ++t)
    for (std::size_t r = 0; r < x.rows(); ++r) out(r, t) = outputs[t].value()(r, 0);
  return out;
}

const ad::Parameter& MultiTaskModel::parameter(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw ContractError("no parameter named '" + std::string(name) + "'");
}

std::size_t MultiTaskModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.value().size();
  return n;
}

std::vector<Matrix> MultiTaskModel::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.var.value());
  return out;
}

void MultiTaskModel::restore(std::span<const Matrix> values) {
  if (values.size() != params_.size()) throw DimensionError("snapshot has the wrong parameter count");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto var = params_[i].var;
    if (!var.value().same_shape(values[i])) {
      throw DimensionError("snapshot shape mismatch for " + params_[i].name + ": " +
                           values[i].shape_string() + " vs " + var.value().shape_string());
    }
    var.mutable_value() = values[i];
  }
}

}  // namespace bmoe
