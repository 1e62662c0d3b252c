// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "bmoe/autodiff.hpp"
#include "bmoe/error.hpp"
#include "bmoe/rng.hpp"

using namespace bmoe;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

// central differences, h = 1e-5
Matrix numeric_grad(ad::Var& p, const std::function<double()>& f) {
  constexpr double h = 1e-5;
  Matrix g(p.rows(), p.cols());
  for (std::size_t k = 0; k < g.size(); ++k) {
    double& slot = p.mutable_value().data()[k];
    const double saved = slot;
    slot = saved + h;
    const double up = f();
    slot = saved - h;
    const double down = f();
    slot = saved;
    g.data()[k] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = std::fabs(a.data()[k] - b.data()[k]);
    worst = std::max(worst, d / std::max({std::fabs(a.data()[k]), std::fabs(b.data()[k]), 1e-4}));
  }
  return worst;
}

}  // namespace

TEST(Matrix, ShapeAndAccess) {
  Matrix m{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.col(1), (std::vector<double>{2, 5}));
  EXPECT_THROW(m.item(), DimensionError);
  EXPECT_EQ(Matrix::scalar(4).item(), 4.0);
}

TEST(Matrix, SliceGatherStack) {
  Matrix m{{1}, {2}, {3}, {4}};
  EXPECT_EQ(m.slice_rows(1, 3), (Matrix{{2}, {3}}));
  const std::vector<std::size_t> idx{3, 0};
  EXPECT_EQ(m.gather_rows(idx), (Matrix{{4}, {1}}));
  const std::vector<Matrix> parts{Matrix{{1, 2}}, Matrix{{3, 4}}};
  EXPECT_EQ(vstack(parts), (Matrix{{1, 2}, {3, 4}}));
}

TEST(Matmul, HandExample) {
  const auto c = ad::matmul(ad::constant(Matrix{{1, 2}}), ad::constant(Matrix{{3}, {4}}));
  EXPECT_EQ(c.value(), (Matrix{{11}}));
}

TEST(Matmul, IdentityPassesGradient) {
  auto eye = ad::variable(Matrix{{1, 0}, {0, 1}});
  auto m = ad::variable(Matrix{{1, 2}, {3, 4}});
  auto out = ad::matmul(eye, m);
  EXPECT_EQ(out.value(), m.value());
  ad::backward(ad::sum(out));
  EXPECT_EQ(m.grad(), (Matrix{{1, 1}, {1, 1}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    ad::matmul(ad::constant(Matrix(2, 3)), ad::constant(Matrix(2, 3)));
    FAIL() << "no throw";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradOfSumIsRowBroadcastColumnSums) {
  Rng rng(1);
  auto a = ad::variable(random_matrix(rng, 3, 4));
  auto b = ad::constant(random_matrix(rng, 4, 2));
  ad::backward(ad::sum(ad::matmul(a, b)));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_NEAR(a.grad()(r, k), b.value()(k, 0) + b.value()(k, 1), 1e-14);
    }
  }
  const Matrix num = numeric_grad(a, [&] { return ad::sum(ad::matmul(a, b)).value().item(); });
  EXPECT_LE(max_rel_err(a.grad(), num), 1e-5);
}

TEST(Backward, Square) {
  auto w = ad::variable(Matrix::scalar(3));
  ad::backward(ad::square(w));
  EXPECT_DOUBLE_EQ(w.grad().item(), 6.0);
}

TEST(Backward, AccumulatesWithoutZeroing) {
  Rng rng(2);
  auto x = ad::variable(random_matrix(rng, 2, 3));
  auto loss = ad::sum(ad::mish(x));
  ad::backward(loss);
  const Matrix once = x.grad();
  ad::backward(loss);
  for (std::size_t k = 0; k < once.size(); ++k) EXPECT_EQ(x.grad().data()[k], 2.0 * once.data()[k]);
}

TEST(Backward, RequiresScalarLoss) {
  auto x = ad::variable(Matrix(2, 2, 1.0));
  EXPECT_THROW(ad::backward(x), ContractError);
}

TEST(Backward, TwoLayerReluNetMatchesFiniteDifferences) {
  Rng rng(3);
  const auto x = ad::constant(random_matrix(rng, 5, 4));
  auto w1 = ad::variable(random_matrix(rng, 4, 6));
  auto b1 = ad::variable(random_matrix(rng, 1, 6));
  auto w2 = ad::variable(random_matrix(rng, 6, 3));
  auto b2 = ad::variable(random_matrix(rng, 1, 3));
  const auto f = [&] {
    auto h = ad::relu(ad::add(ad::matmul(x, w1), b1));
    return ad::sum(ad::relu(ad::add(ad::matmul(h, w2), b2)));
  };
  ad::backward(f());
  for (ad::Var* p : {&w1, &b1, &w2, &b2}) {
    const Matrix analytic = p->grad();
    const Matrix num = numeric_grad(*p, [&] { return f().value().item(); });
    EXPECT_LE(max_rel_err(analytic, num), 1e-5);
  }
}

TEST(Backward, EveryOpMatchesFiniteDifferences) {
  Rng rng(4);
  auto a = ad::variable(random_matrix(rng, 3, 4));
  auto col = ad::variable(random_matrix(rng, 3, 1));
  auto row = ad::variable(random_matrix(rng, 1, 4));
  auto pos = ad::variable(random_matrix(rng, 3, 4));
  for (double& v : pos.mutable_value().data()) v = 0.5 + std::fabs(v);
  const auto target = ad::constant(random_matrix(rng, 3, 1));
  const auto f = [&] {
    ad::Var t = ad::mul(ad::tanh(a), col);
    t = ad::add(t, ad::mul(ad::exp(ad::scale(a, 0.3)), row));
    t = ad::add(t, ad::log(pos));
    t = ad::add(t, ad::softmax_rows(ad::mul(a, pos)));
    t = ad::add(t, ad::abs(ad::mish(a)));
    ad::Var s = ad::add(ad::mean(ad::square(t)), ad::mse(ad::column(t, 2), target));
    return ad::add(s, ad::sum(ad::relu(a)));
  };
  ad::backward(f());
  for (ad::Var* p : {&a, &col, &row, &pos}) {
    const Matrix analytic = p->grad();
    const Matrix num = numeric_grad(*p, [&] { return f().value().item(); });
    EXPECT_LE(max_rel_err(analytic, num), 1e-5);
  }
}

TEST(Backward, BroadcastAddReducesGradient) {
  auto m = ad::variable(Matrix(3, 2, 1.0));
  auto b = ad::variable(Matrix(1, 2, 0.0));
  ad::backward(ad::sum(ad::add(m, b)));
  EXPECT_EQ(b.grad(), (Matrix{{3, 3}}));
}

TEST(Backward, IncompatibleBroadcastThrows) {
  EXPECT_THROW(ad::add(ad::constant(Matrix(3, 2)), ad::constant(Matrix(2, 2))), DimensionError);
}

TEST(Softmax, RowsSumToOneAndHandValues) {
  const auto s = ad::softmax_rows(ad::constant(Matrix{{1, 2}, {1000, -1000}}));
  EXPECT_NEAR(s.value()(0, 0), 0.26894, 1e-5);
  EXPECT_NEAR(s.value()(0, 1), 0.73106, 1e-5);
  EXPECT_NEAR(s.value()(1, 0), 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(s.value()(1, 1)));
}

TEST(GradL2Norm, ThreeFourFive) {
  auto a = ad::make_parameter("a", Matrix::scalar(0));
  auto b = ad::make_parameter("b", Matrix::scalar(0));
  a.var.mutable_grad() = Matrix::scalar(3);
  b.var.mutable_grad() = Matrix::scalar(4);
  const std::vector<ad::Parameter> ps{a, b};
  EXPECT_DOUBLE_EQ(ad::grad_l2_norm(ps), 5.0);
  ad::zero_grads(ps);
  EXPECT_EQ(ad::grad_l2_norm(ps), 0.0);
}

TEST(GradL2Norm, MatchesLoopOracle) {
  Rng rng(5);
  std::vector<ad::Parameter> ps;
  double sq = 0.0;
  for (int i = 0; i < 4; ++i) {
    auto p = ad::make_parameter("p" + std::to_string(i), Matrix(2 + i, 3));
    p.var.mutable_grad() = random_matrix(rng, 2 + i, 3);
    for (double v : p.var.grad().data()) sq += v * v;
    ps.push_back(p);
  }
  const double oracle = std::sqrt(sq);
  EXPECT_LE(std::fabs(ad::grad_l2_norm(ps) - oracle) / oracle, 1e-12);
}

TEST(GradL2Norm, EmptyThrows) {
  EXPECT_THROW(ad::grad_l2_norm({}), ContractError);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(9), b(9);
  for (int i = 0; i < 100; ++i) {
    const double u = a.uniform();
    EXPECT_EQ(u, b.uniform());
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(a.below(7), 7u);
    b.below(7);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(10);
  double s = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal();
    s += v;
    sq += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}
