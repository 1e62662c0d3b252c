// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense matrices.
//
// Every operation allocates a Node that owns its forward value, a gradient
// buffer of the same shape and strong references to its inputs. A graph lives
// as long as some handle to its output is alive; parameters are long-lived
// leaves that are reused by many short-lived graphs.
//
// Binary elementwise operations broadcast along any dimension of size 1, so a
// 1xC bias adds to every row, a Bx1 column scales every column and a 1x1
// matrix acts as a scalar. The gradient of a broadcast operand is summed back
// to its own shape.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bmoe/matrix.hpp"

namespace bmoe::ad {

enum class Op {
  leaf,
  matmul,
  add,
  mul,
  relu,
  mish,
  tanh,
  exp,
  log,
  softmax_rows,
  mean,
  sum,
  square,
  abs,
  mse,
  column,
};

const char* op_name(Op op) noexcept;

struct Node {
  Matrix value;
  Matrix grad;
  Op op = Op::leaf;
  std::vector<std::shared_ptr<Node>> parents;
  bool requires_grad = false;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;
};

/// Shared handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_->requires_grad; }
  Op op() const { return node_->op; }
  bool valid() const noexcept { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad.fill(0.0); }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf that never receives gradient.
Var constant(Matrix value);
/// Leaf that accumulates gradient.
Var variable(Matrix value);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& a);
Var mish(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var softmax_rows(const Var& a);
Var mean(const Var& a);
Var sum(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
/// Mean squared error between two equally shaped matrices; gradient flows to both.
Var mse(const Var& prediction, const Var& target);
/// Column j of a as a Bx1 matrix.
Var column(const Var& a, std::size_t j);

/// Reverse pass from a 1x1 loss. Leaf gradients accumulate across calls;
/// gradients of intermediate nodes in the reachable graph are reset first.
void backward(const Var& loss);

/// Named trainable leaf. Copies share the same underlying node.
struct Parameter {
  std::string name;
  Var var;
};

Parameter make_parameter(std::string name, Matrix value);

/// L2 norm of the concatenated gradients of params.
double grad_l2_norm(std::span<const Parameter> params);

void zero_grads(std::span<const Parameter> params);

}  // namespace bmoe::ad
