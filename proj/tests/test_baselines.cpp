// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "bmoe/activations.hpp"
#include "bmoe/baselines.hpp"
#include "bmoe/error.hpp"
#include "bmoe/trainer.hpp"

using namespace bmoe;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

void randomize(MultiTaskModel& m, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& p : m.parameters()) {
    ad::Var v = p.var;
    for (double& x : v.mutable_value().data()) x = 0.5 * rng.normal();
  }
}

std::vector<double> dense(const std::vector<double>& x, const MultiTaskModel& m, const std::string& name, bool bias,
                          bool act) {
  const Matrix& w = m.parameter(name + ".weight").var.value();
  std::vector<double> out(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double s = bias ? m.parameter(name + ".bias").var.value()(0, j) : 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w(i, j);
    out[j] = act ? act::mish(s) : s;
  }
  return out;
}

MmoeConfig small() {
  MmoeConfig c;
  c.input_dim = 3;
  c.embed_dim = 4;
  c.num_experts = 3;
  c.expert_hidden = {5};
  c.num_tasks = 2;
  c.tower_hidden = {3};
  return c;
}

}  // namespace

TEST(BuildBaseline, KindsAndErrors) {
  EXPECT_EQ(build_baseline(ModelKind::hard_shared, small(), 1)->kind(), ModelKind::hard_shared);
  EXPECT_EQ(build_baseline(ModelKind::single_task_mlp, small(), 1)->kind(), ModelKind::single_task_mlp);
  EXPECT_EQ(build_baseline(ModelKind::one_gate_moe, small(), 1)->kind(), ModelKind::one_gate_moe);
  EXPECT_THROW(build_baseline(ModelKind::bmoe, small(), 1), ConfigError);
  EXPECT_THROW(parse_model_kind("shared_bottom"), ConfigError);
  for (auto k : {ModelKind::bmoe, ModelKind::hard_shared, ModelKind::single_task_mlp, ModelKind::one_gate_moe})
    EXPECT_EQ(parse_model_kind(to_string(k)), k);
}

TEST(OneGate, SingleTaskMatchesMmoe) {
  auto c = small();
  c.num_tasks = 1;
  MmoeModel mmoe(c, 5);
  auto one = build_baseline(ModelKind::one_gate_moe, c, 6);
  one->restore(mmoe.snapshot());
  Rng rng(1);
  const Matrix x = random_matrix(rng, 7, 3);
  EXPECT_EQ(one->predict(x), mmoe.predict(x));
}

TEST(OneGate, MatchesLoopOracle) {
  auto one = build_baseline(ModelKind::one_gate_moe, small(), 7);
  randomize(*one, 8);
  Rng rng(2);
  const Matrix x = random_matrix(rng, 5, 3);
  const Matrix p = one->predict(x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::vector<double> row(x.row(r).begin(), x.row(r).end());
    const auto z = dense(row, *one, "embedding", true, true);
    const auto logits = dense(z, *one, "gate0", false, false);
    double den = 0.0;
    for (double l : logits) den += std::exp(l);
    std::vector<double> o(5, 0.0);
    for (std::size_t k = 0; k < 3; ++k) {
      const auto f = dense(z, *one, "expert" + std::to_string(k) + ".layer0", true, true);
      for (std::size_t u = 0; u < 5; ++u) o[u] += std::exp(logits[k]) / den * f[u];
    }
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string t = "tower" + std::to_string(i);
      const auto h = dense(o, *one, t + ".layer0", true, true);
      EXPECT_NEAR(p(r, i), dense(h, *one, t + ".out", true, false)[0], 1e-10);
    }
  }
  EXPECT_THROW(one->parameter("gate1.weight"), ContractError);
}

TEST(OneGate, GateRowsSumToOne) {
  MmoeModel one(small(), 9, GateMode::shared);
  Rng rng(3);
  const auto z = one.embed(ad::constant(random_matrix(rng, 10, 3)));
  const Matrix g0 = one.gate_weights(z, 0).value();
  const Matrix g1 = one.gate_weights(z, 1).value();
  EXPECT_EQ(g0, g1);
  for (std::size_t r = 0; r < g0.rows(); ++r) {
    double s = 0.0;
    for (double v : g0.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(HardShared, IdenticalHeadsIdenticalPredictions) {
  auto m = build_baseline(ModelKind::hard_shared, small(), 10);
  randomize(*m, 11);
  for (const char* part : {".weight", ".bias"}) {
    ad::Var v = m->parameter(std::string("head1") + part).var;
    v.mutable_value() = m->parameter(std::string("head0") + part).var.value();
  }
  Rng rng(4);
  const Matrix p = m->predict(random_matrix(rng, 6, 3));
  for (std::size_t r = 0; r < p.rows(); ++r) EXPECT_EQ(p(r, 0), p(r, 1));
}

TEST(HardShared, MatchesLoopOracle) {
  auto m = build_baseline(ModelKind::hard_shared, small(), 12);
  randomize(*m, 13);
  Rng rng(5);
  const Matrix x = random_matrix(rng, 4, 3);
  const Matrix p = m->predict(x);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::vector<double> row(x.row(r).begin(), x.row(r).end());
    const auto h = dense(dense(row, *m, "embedding", true, true), *m, "trunk.layer0", true, true);
    for (std::size_t i = 0; i < 2; ++i)
      EXPECT_NEAR(p(r, i), dense(h, *m, "head" + std::to_string(i), true, false)[0], 1e-12);
  }
  EXPECT_EQ(m->anchor_parameters().size(), 2u);
}

TEST(SingleTask, BranchesAreIndependent) {
  auto m = build_baseline(ModelKind::single_task_mlp, small(), 14);
  EXPECT_TRUE(m->anchor_parameters().empty());
  Rng rng(6);
  const auto preds = m->forward(ad::constant(random_matrix(rng, 5, 3)), ForwardMode{});
  ad::zero_grads(m->parameters());
  ad::backward(ad::mean(ad::square(preds[0])));
  for (const auto& p : m->parameters()) {
    double s = 0.0;
    for (double g : p.var.grad().data()) s += std::fabs(g);
    if (p.name.rfind("task1.", 0) == 0) EXPECT_EQ(s, 0.0) << p.name;
    if (p.name == "task0.out.weight") EXPECT_GT(s, 0.0);
  }
}

TEST(SingleTask, JointTrainingEqualsSeparateTraining) {
  SynthConfig sc;
  sc.num_samples = 200;
  const auto split = prepare_split(gen_synthetic(sc));
  auto c = small();
  c.input_dim = 5;
  c.dropout_rate = 0.0;
  TrainConfig tc;
  tc.gradnorm_enabled = false;

  auto joint = build_baseline(ModelKind::single_task_mlp, c, 15);
  auto c1 = c;
  c1.num_tasks = 1;
  auto alone = build_baseline(ModelKind::single_task_mlp, c1, 16);
  // copy branch 1 of the joint model into the single-branch model
  for (const auto& p : alone->parameters()) {
    ad::Var v = p.var;
    v.mutable_value() = joint->parameter("task1" + p.name.substr(5)).var.value();
  }
  Trainer tj(*joint, tc), ta(*alone, tc);
  for (std::size_t b = 0; b < 96; b += 32) {
    const Matrix x = split.train.features.slice_rows(b, b + 32);
    const Matrix y = split.train.targets.slice_rows(b, b + 32);
    Matrix y1(32, 1);
    for (std::size_t r = 0; r < 32; ++r) y1(r, 0) = y(r, 1);
    tj.train_step(x, y, 0.01);
    ta.train_step(x, y1, 0.01);
  }
  for (const auto& p : alone->parameters())
    EXPECT_EQ(p.var.value(), joint->parameter("task1" + p.name.substr(5)).var.value()) << p.name;
}

TEST(Budgets, SameWidthsAcrossModels) {
  const auto c = MmoeConfig{};
  for (auto k : {ModelKind::bmoe, ModelKind::hard_shared, ModelKind::single_task_mlp, ModelKind::one_gate_moe}) {
    auto m = build_model(k, c, 1);
    EXPECT_EQ(m->predict(Matrix(3, 5, 0.2)).cols(), 2u) << to_string(k);
    EXPECT_GT(m->parameter_count(), 0u);
  }
  EXPECT_EQ(build_model(ModelKind::hard_shared, c, 1)->parameter("embedding.weight").var.cols(), c.embed_dim);
  EXPECT_EQ(build_model(ModelKind::single_task_mlp, c, 1)->parameter("task0.embedding.weight").var.cols(), c.embed_dim);
}

TEST(Clone, CopiesParameters) {
  auto m = build_model(ModelKind::hard_shared, small(), 17);
  randomize(*m, 18);
  auto c = clone_model(*m);
  EXPECT_EQ(c->snapshot(), m->snapshot());
  EXPECT_EQ(c->kind(), m->kind());
}
