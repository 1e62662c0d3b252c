// SPDX-License-Identifier: Apache-2.0
//
// Building blocks shared by the mixture-of-experts network and the baselines:
// configuration, dense layers, activations, dropout and the common
// multi-task model interface used by the trainer.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bmoe/autodiff.hpp"
#include "bmoe/matrix.hpp"
#include "bmoe/rng.hpp"

namespace bmoe {

enum class Activation { relu, mish };

enum class ModelKind { bmoe, single_task_mlp, hard_shared, one_gate_moe };

std::string to_string(Activation a);
std::string to_string(ModelKind k);
Activation parse_activation(std::string_view s);
ModelKind parse_model_kind(std::string_view s);

struct MmoeConfig {
  std::size_t input_dim = 5;
  std::size_t embed_dim = 16;
  std::size_t num_experts = 4;
  std::vector<std::size_t> expert_hidden{32};
  std::size_t num_tasks = 2;
  std::vector<std::size_t> tower_hidden{16};
  double dropout_rate = 0.1;
  Activation activation = Activation::mish;

  /// Throws ConfigError when a width is zero or dropout_rate is outside [0, 1).
  void validate() const;

  friend bool operator==(const MmoeConfig&, const MmoeConfig&) = default;
};

/// Training mode enables dropout, which then draws from rng.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;
};

ad::Var activate(const ad::Var& x, Activation a);

/// Inverted dropout: in training mode each element is zeroed with probability
/// rate and survivors are scaled by 1/(1-rate). Identity otherwise.
ad::Var dropout(const ad::Var& x, double rate, bool training, Rng* rng);

class Dense {
 public:
  Dense(ad::Parameter weight, std::optional<ad::Parameter> bias)
      : weight_(std::move(weight)), bias_(std::move(bias)) {}

  ad::Var operator()(const ad::Var& x) const;

  const ad::Parameter& weight() const { return weight_; }
  const std::optional<ad::Parameter>& bias() const { return bias_; }
  std::size_t in_dim() const { return weight_.var.rows(); }
  std::size_t out_dim() const { return weight_.var.cols(); }

 private:
  ad::Parameter weight_;
  std::optional<ad::Parameter> bias_;
};

/// Stack of dense layers, each followed by the activation and dropout.
struct Mlp {
  std::vector<Dense> layers;

  ad::Var operator()(const ad::Var& x, Activation a, double dropout_rate, ForwardMode mode) const;
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

/// Common contract of every multi-task regressor: N scalar predictions per row.
class MultiTaskModel {
 public:
  virtual ~MultiTaskModel() = default;
  MultiTaskModel(const MultiTaskModel&) = delete;
  MultiTaskModel& operator=(const MultiTaskModel&) = delete;

  ModelKind kind() const noexcept { return kind_; }
  const MmoeConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// One Bx1 prediction per task.
  virtual std::vector<ad::Var> forward(const ad::Var& x, ForwardMode mode) const = 0;

  /// Parameters that anchor task-gradient balancing. Empty when no layer is
  /// shared by all tasks.
  virtual std::vector<ad::Parameter> anchor_parameters() const = 0;

  /// Eval-mode predictions as an M x N matrix.
  Matrix predict(const Matrix& x) const;

  const std::vector<ad::Parameter>& parameters() const noexcept { return params_; }
  const ad::Parameter& parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  std::vector<Matrix> snapshot() const;
  void restore(std::span<const Matrix> values);

 protected:
  MultiTaskModel(ModelKind kind, MmoeConfig config, std::uint64_t seed);

  /// Glorot-uniform weight, zero bias.
  Dense make_dense(const std::string& name, std::size_t in, std::size_t out, bool with_bias = true);
  Mlp make_mlp(const std::string& name, std::size_t in, std::span<const std::size_t> widths);
  void check_input(const ad::Var& x) const;

 private:
  ModelKind kind_;
  MmoeConfig config_;
  std::uint64_t seed_;
  Rng init_rng_;
  std::vector<ad::Parameter> params_;
};

}  // namespace bmoe
