// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "bmoe/error.hpp"
#include "bmoe/gradnorm.hpp"
#include "bmoe/rng.hpp"

using namespace bmoe;
using namespace bmoe::gradnorm;
using V = std::vector<double>;

TEST(LossRatios, Examples) {
  EXPECT_EQ(loss_ratios(V{0.7, 2.0}, V{0.7, 2.0}), (V{1.0, 1.0}));
  EXPECT_EQ(loss_ratios(V{0.5, 2.0}, V{1.0, 1.0}), (V{0.5, 2.0}));
  EXPECT_EQ(loss_ratios(V{0.0}, V{3.0}), (V{0.0}));
  EXPECT_THROW(loss_ratios(V{1.0}, V{0.0}), ContractError);
  EXPECT_THROW(loss_ratios(V{1.0, 2.0}, V{1.0}), DimensionError);
}

TEST(Ritr, Examples) {
  for (double r : ritr(V{0.4, 0.4, 0.4})) EXPECT_NEAR(r, 1.0, 1e-15);
  const auto two = ritr(V{0.5, 1.5});
  EXPECT_NEAR(two[0], 0.5, 1e-15);
  EXPECT_NEAR(two[1], 1.5, 1e-15);
  EXPECT_EQ(ritr(V{0.3}), (V{1.0}));
}

TEST(Ritr, MeanIsOne) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    V r(1 + rng.below(6));
    for (double& v : r) v = std::exp(rng.uniform(-5, 5));
    const auto out = ritr(r);
    EXPECT_NEAR(std::accumulate(out.begin(), out.end(), 0.0) / out.size(), 1.0, 1e-12);
  }
}

TEST(GradnormLoss, Examples) {
  // G_i equal to the mean and r = 1 puts every task on target
  EXPECT_EQ(gradnorm_loss(V{2.0, 2.0}, V{1.0, 1.0}, 0.7), 0.0);
  EXPECT_DOUBLE_EQ(gradnorm_loss(V{1.0, 3.0}, V{0.4, 1.6}, 0.0), 2.0);
  EXPECT_EQ(gradnorm_loss(V{5.0}, V{1.0}, 1.5), 0.0);
  EXPECT_THROW(gradnorm_loss(V{-1.0, 1.0}, V{1.0, 1.0}, 0.3), ContractError);
}

TEST(GradnormLoss, ZeroWhenOnTarget) {
  const V r{0.5, 1.5};
  const double alpha = 1.0;
  // G = gbar * r^alpha with gbar = mean(G) holds for G = (0.5, 1.5)
  EXPECT_NEAR(gradnorm_loss(V{0.5, 1.5}, r, alpha), 0.0, 1e-15);
  EXPECT_EQ(grad_norm_targets(V{0.5, 1.5}, r, alpha), (V{0.5, 1.5}));
}

TEST(WeightGradients, Examples) {
  EXPECT_EQ(weight_gradients(V{2.0, 3.0}, V{2.0, 3.0}, V{1.0, 1.0}), (V{0.0, 0.0}));
  EXPECT_EQ(weight_gradients(V{4.0}, V{2.0}, V{2.0}), (V{2.0}));
  EXPECT_EQ(weight_gradients(V{1.0}, V{2.0}, V{0.5}), (V{-2.0}));
  // doubling w doubles G, the gradient is unchanged
  EXPECT_EQ(weight_gradients(V{8.0}, V{2.0}, V{4.0}), (V{2.0}));
  EXPECT_THROW(weight_gradients(V{1.0}, V{1.0}, V{0.0}), ContractError);
}

TEST(WeightGradients, MatchFiniteDifferences) {
  // G_i = w_i * n_i with targets held fixed
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(4);
    V w(n), norms(n), targets(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = rng.uniform(0.2, 2.0);
      norms[i] = rng.uniform(0.1, 3.0);
      targets[i] = rng.uniform(0.1, 3.0);
    }
    const auto loss = [&](const V& ww) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += std::fabs(ww[i] * norms[i] - targets[i]);
      return s;
    };
    V g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = w[i] * norms[i];
    const auto analytic = weight_gradients(g, targets, w);
    for (std::size_t i = 0; i < n; ++i) {
      const double h = 1e-7;
      V up = w, down = w;
      up[i] += h;
      down[i] -= h;
      EXPECT_NEAR(analytic[i], (loss(up) - loss(down)) / (2 * h), 1e-6);
    }
  }
}

TEST(Update, Examples) {
  auto tw = TaskWeights::uniform(2, 0.3, 0.1);
  EXPECT_EQ(update_and_renormalize(tw, V{0.0, 0.0}).w, (V{1.0, 1.0}));

  const auto out = update_and_renormalize(tw, V{0.5, -0.5});
  EXPECT_NEAR(out.w[0], 0.95, 1e-15);
  EXPECT_NEAR(out.w[1], 1.05, 1e-15);

  TaskWeights pre{V{2.0, 1.0}, {}, 0.3, 0.1};
  const auto renorm = update_and_renormalize(pre, V{0.0, 0.0});
  EXPECT_NEAR(renorm.w[0], 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(renorm.w[1], 2.0 / 3.0, 1e-15);
}

TEST(Update, FloorSurvivesRescale) {
  TaskWeights tw{V{1.0, 1.0, 1.0}, {}, 0.3, 1.0};
  const auto out = update_and_renormalize(tw, V{50.0, -40.0, 0.0});
  EXPECT_NEAR(std::accumulate(out.w.begin(), out.w.end(), 0.0), 3.0, 1e-12);
  for (double w : out.w) EXPECT_GE(w, kMinTaskWeight);
  EXPECT_EQ(out.w[0], kMinTaskWeight);
}

TEST(Update, RandomStressKeepsInvariants) {
  Rng rng(3);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t n = 1 + rng.below(6);
    TaskWeights tw = TaskWeights::uniform(n, 0.3, std::exp(rng.uniform(-5, 3)));
    V g(n);
    for (int step = 0; step < 5; ++step) {
      for (double& v : g) v = rng.normal() * std::exp(rng.uniform(-3, 4));
      tw = update_and_renormalize(tw, g);
      double s = 0.0;
      for (double w : tw.w) {
        EXPECT_GE(w, kMinTaskWeight);
        s += w;
      }
      ASSERT_NEAR(s, static_cast<double>(n), 1e-9);
    }
  }
}

TEST(BalanceStep, CapturesInitialLossesOnce) {
  auto tw = TaskWeights::uniform(2, 0.5, 0.01);
  const auto first = balance_step(tw, V{2.0, 4.0}, V{1.0, 1.0});
  EXPECT_EQ(tw.initial_losses, (V{2.0, 4.0}));
  EXPECT_EQ(first.loss_ratios, (V{1.0, 1.0}));
  EXPECT_EQ(first.gradnorm_loss, 0.0);
  EXPECT_EQ(tw.w, (V{1.0, 1.0}));

  const auto second = balance_step(tw, V{1.0, 3.0}, V{0.6, 1.0});
  EXPECT_EQ(tw.initial_losses, (V{2.0, 4.0}));
  EXPECT_EQ(second.loss_ratios, (V{0.5, 0.75}));
  EXPECT_NEAR(second.ritr[0], 0.8, 1e-15);
  EXPECT_NEAR(second.ritr[1], 1.2, 1e-15);
}

TEST(BalanceStep, HandComputedUpdate) {
  // alpha 1, losses ratios (0.5, 1.5) -> r = (0.5, 1.5), G = (1, 1), gbar = 1
  // targets (0.5, 1.5); task 0 above target, task 1 below
  // grads (+1, -1), lambda 0.1 -> (0.9, 1.1), sum already 2
  TaskWeights tw{V{1.0, 1.0}, V{1.0, 1.0}, 1.0, 0.1};
  const auto snap = balance_step(tw, V{0.5, 1.5}, V{1.0, 1.0});
  EXPECT_EQ(snap.targets, (V{0.5, 1.5}));
  EXPECT_DOUBLE_EQ(snap.gradnorm_loss, 1.0);
  EXPECT_EQ(snap.weight_grads, (V{1.0, -1.0}));
  EXPECT_NEAR(tw.w[0], 0.9, 1e-15);
  EXPECT_NEAR(tw.w[1], 1.1, 1e-15);
}

TEST(BalanceStep, SingleTaskStaysOne) {
  auto tw = TaskWeights::uniform(1, 0.3, 0.5);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    balance_step(tw, V{rng.uniform(0.1, 2.0)}, V{rng.uniform(0.1, 2.0)});
    EXPECT_EQ(tw.w[0], 1.0);
  }
}
