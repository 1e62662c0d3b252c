// SPDX-License-Identifier: Apache-2.0

#include "bmoe/autodiff.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

#include "bmoe/activations.hpp"
#include "bmoe/error.hpp"

namespace bmoe::ad {

namespace {

std::shared_ptr<Node> make_node(Matrix value, Op op, std::vector<std::shared_ptr<Node>> parents) {
  auto node = std::make_shared<Node>();
  node->grad = Matrix(value.rows(), value.cols());
  node->value = std::move(value);
  node->op = op;
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  node->parents = std::move(parents);
  return node;
}

std::size_t broadcast_dim(std::size_t a, std::size_t b, bool& ok) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  ok = false;
  return 0;
}

std::pair<std::size_t, std::size_t> broadcast_shape(const Matrix& a, const Matrix& b, const char* what) {
  bool ok = true;
  const auto rows = broadcast_dim(a.rows(), b.rows(), ok);
  const auto cols = broadcast_dim(a.cols(), b.cols(), ok);
  if (!ok || a.empty() || b.empty()) {
    throw DimensionError(std::string(what) + ": cannot broadcast " + a.shape_string() + " with " +
                         b.shape_string());
  }
  return {rows, cols};
}

// Element of m at (r, c) of the broadcast result.
inline double at(const Matrix& m, std::size_t r, std::size_t c) {
  return m(m.rows() == 1 ? 0 : r, m.cols() == 1 ? 0 : c);
}

inline double& at(Matrix& m, std::size_t r, std::size_t c) {
  return m(m.rows() == 1 ? 0 : r, m.cols() == 1 ? 0 : c);
}

template <typename F, typename D>
Var unary(const Var& a, Op op, F f, D dfdx) {
  Matrix out(a.rows(), a.cols());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  auto node = make_node(std::move(out), op, {a.node()});
  node->backward_fn = [dfdx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const auto x = p.value.data();
    const auto y = self.value.data();
    const auto g = self.grad.data();
    auto pg = p.grad.data();
    for (std::size_t i = 0; i < x.size(); ++i) pg[i] += g[i] * dfdx(x[i], y[i]);
  };
  return Var(std::move(node));
}

// Reduction to 1x1 where d(out)/d(x_i) = scale.
Var reduce_linear(const Var& a, Op op, double scale_factor) {
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  auto node = make_node(Matrix::scalar(total * scale_factor), op, {a.node()});
  node->backward_fn = [scale_factor](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    const double g = self.grad(0, 0) * scale_factor;
    for (double& v : p.grad.data()) v += g;
  };
  return Var(std::move(node));
}

}  // namespace

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::relu: return "relu";
    case Op::mish: return "mish";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::softmax_rows: return "softmax_rows";
    case Op::mean: return "mean";
    case Op::sum: return "sum";
    case Op::square: return "square";
    case Op::abs: return "abs";
    case Op::mse: return "mse";
    case Op::column: return "column";
  }
  return "unknown";
}

Var constant(Matrix value) { return Var(make_node(std::move(value), Op::leaf, {})); }

Var variable(Matrix value) {
  auto node = make_node(std::move(value), Op::leaf, {});
  node->requires_grad = true;
  return Var(std::move(node));
}

Var matmul(const Var& a, const Var& b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ for " + av.shape_string() + " and " +
                         bv.shape_string());
  }
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    auto orow = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      if (aip == 0.0) continue;
      auto brow = bv.row(p);
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  auto node = make_node(std::move(out), Op::matmul, {a.node(), b.node()});
  node->backward_fn = [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const Matrix& g = self.grad;
    const std::size_t n = pa.value.rows(), k = pa.value.cols(), m = pb.value.cols();
    if (pa.requires_grad) {
      // dA = g * B^T
      for (std::size_t i = 0; i < n; ++i) {
        auto grow = g.row(i);
        auto dst = pa.grad.row(i);
        for (std::size_t p = 0; p < k; ++p) {
          auto brow = pb.value.row(p);
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          dst[p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      // dB = A^T * g
      for (std::size_t i = 0; i < n; ++i) {
        auto grow = g.row(i);
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = pa.value(i, p);
          if (aip == 0.0) continue;
          auto dst = pb.grad.row(p);
          for (std::size_t j = 0; j < m; ++j) dst[j] += aip * grow[j];
        }
      }
    }
  };
  return Var(std::move(node));
}

Var add(const Var& a, const Var& b) {
  const auto [rows, cols] = broadcast_shape(a.value(), b.value(), "add");
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = at(a.value(), r, c) + at(b.value(), r, c);
  auto node = make_node(std::move(out), Op::add, {a.node(), b.node()});
  node->backward_fn = [](Node& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < self.grad.cols(); ++c) at(parent->grad, r, c) += self.grad(r, c);
    }
  };
  return Var(std::move(node));
}

Var mul(const Var& a, const Var& b) {
  const auto [rows, cols] = broadcast_shape(a.value(), b.value(), "mul");
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = at(a.value(), r, c) * at(b.value(), r, c);
  auto node = make_node(std::move(out), Op::mul, {a.node(), b.node()});
  node->backward_fn = [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t r = 0; r < self.grad.rows(); ++r) {
      for (std::size_t c = 0; c < self.grad.cols(); ++c) {
        const double g = self.grad(r, c);
        if (pa.requires_grad) at(pa.grad, r, c) += g * at(pb.value, r, c);
        if (pb.requires_grad) at(pb.grad, r, c) += g * at(pa.value, r, c);
      }
    }
  };
  return Var(std::move(node));
}

Var scale(const Var& a, double factor) { return mul(a, constant(Matrix::scalar(factor))); }

Var relu(const Var& a) {
  return unary(
      a, Op::relu, [](double x) { return act::relu(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var mish(const Var& a) {
  return unary(
      a, Op::mish, [](double x) { return act::mish(x); },
      [](double x, double) { return act::mish_derivative(x); });
}

Var tanh(const Var& a) {
  return unary(
      a, Op::tanh, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(
      a, Op::exp, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(
      a, Op::log, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(
      a, Op::square, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(const Var& a) {
  return unary(
      a, Op::abs, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var softmax_rows(const Var& a) {
  const Matrix& in = a.value();
  Matrix out(in.rows(), in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto src = in.row(r);
    auto dst = out.row(r);
    double hi = src.empty() ? 0.0 : src[0];
    for (double v : src) hi = v > hi ? v : hi;
    double total = 0.0;
    for (std::size_t c = 0; c < src.size(); ++c) {
      dst[c] = std::exp(src[c] - hi);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  auto node = make_node(std::move(out), Op::softmax_rows, {a.node()});
  node->backward_fn = [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      auto s = self.value.row(r);
      auto g = self.grad.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < s.size(); ++c) dot += g[c] * s[c];
      auto dst = p.grad.row(r);
      for (std::size_t c = 0; c < s.size(); ++c) dst[c] += s[c] * (g[c] - dot);
    }
  };
  return Var(std::move(node));
}

Var mean(const Var& a) {
  if (a.value().empty()) throw DimensionError("mean of an empty matrix");
  return reduce_linear(a, Op::mean, 1.0 / static_cast<double>(a.value().size()));
}

Var sum(const Var& a) { return reduce_linear(a, Op::sum, 1.0); }

Var mse(const Var& prediction, const Var& target) {
  const Matrix& p = prediction.value();
  const Matrix& t = target.value();
  if (!p.same_shape(t) || p.empty()) {
    throw DimensionError("mse: shape mismatch " + p.shape_string() + " vs " + t.shape_string());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p.data()[i] - t.data()[i];
    acc += d * d;
  }
  const double n = static_cast<double>(p.size());
  auto node = make_node(Matrix::scalar(acc / n), Op::mse, {prediction.node(), target.node()});
  node->backward_fn = [n](Node& self) {
    Node& pp = *self.parents[0];
    Node& pt = *self.parents[1];
    const double g = self.grad(0, 0) * 2.0 / n;
    const auto pv = pp.value.data();
    const auto tv = pt.value.data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = g * (pv[i] - tv[i]);
      if (pp.requires_grad) pp.grad.data()[i] += d;
      if (pt.requires_grad) pt.grad.data()[i] -= d;
    }
  };
  return Var(std::move(node));
}

Var column(const Var& a, std::size_t j) {
  const Matrix& in = a.value();
  if (j >= in.cols()) {
    throw DimensionError("column " + std::to_string(j) + " out of range for " + in.shape_string());
  }
  Matrix out(in.rows(), 1);
  for (std::size_t r = 0; r < in.rows(); ++r) out(r, 0) = in(r, j);
  auto node = make_node(std::move(out), Op::column, {a.node()});
  node->backward_fn = [j](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t r = 0; r < self.grad.rows(); ++r) p.grad(r, j) += self.grad(r, 0);
  };
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (!loss.valid()) throw ContractError("backward: empty loss handle");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ContractError("backward: loss must be 1x1, got " + loss.value().shape_string());
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; order ends with the loss itself.
  std::vector<Node*> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order)
    if (node->op != Op::leaf) node->grad.fill(0.0);
  loss.node()->grad(0, 0) += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

Parameter make_parameter(std::string name, Matrix value) {
  return Parameter{std::move(name), variable(std::move(value))};
}

double grad_l2_norm(std::span<const Parameter> params) {
  if (params.empty()) throw ContractError("grad_l2_norm: empty parameter list");
  double acc = 0.0;
  for (const auto& p : params)
    for (double g : p.var.grad().data()) acc += g * g;
  return std::sqrt(acc);
}

void zero_grads(std::span<const Parameter> params) {
  for (const auto& p : params) p.var.node()->grad.fill(0.0);
}

}  // namespace bmoe::ad
