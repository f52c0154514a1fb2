#include <gtest/gtest.h>

#include <cmath>

#include "driftlab/optim.hpp"
#include "driftlab/smallnet.hpp"
#include "driftlab/tasks.hpp"
#include "oracles.hpp"

using namespace driftlab;

namespace {

Batch random_batch(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed) {
  SeededRng rng(seed);
  Batch b{Matrix::gaussian(n, d, rng), std::vector<std::size_t>(n)};
  for (auto& y : b.labels) y = rng.index(classes);
  return b;
}

double grad_check(const Mlp& m, const ParamVector& p, const Batch& b) {
  const auto analytic = m.loss_and_grad(p, b).grad.values;
  const auto fd = oracle::fd_gradient(
      [&](const std::vector<double>& v) { return m.loss(ParamVector(v), b); }, p.values, 1e-6);
  return oracle::rel_vec_err(analytic, fd);
}

}  // namespace

struct GradCase {
  Activation act;
  LossKind loss;
};

class MlpGradient : public ::testing::TestWithParam<GradCase> {};

TEST_P(MlpGradient, MatchesFiniteDifferences) {
  const Mlp m(ModelSpec{{5, 7, 6, 3}, GetParam().act, GetParam().loss});
  SeededRng rng(1);
  const ParamVector p = m.init(rng);
  const Batch b = random_batch(12, 5, 3, 2);
  EXPECT_LE(grad_check(m, p, b), 1e-5);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, MlpGradient,
                         ::testing::Values(GradCase{Activation::kTanh, LossKind::kSquared},
                                           GradCase{Activation::kTanh, LossKind::kCrossEntropy},
                                           GradCase{Activation::kRelu, LossKind::kSquared},
                                           GradCase{Activation::kRelu, LossKind::kCrossEntropy}));

TEST(Mlp, LossAndGradAgreeOnLoss) {
  const Mlp m(ModelSpec{{4, 8, 3}, Activation::kTanh, LossKind::kCrossEntropy});
  SeededRng rng(3);
  const ParamVector p = m.init(rng);
  const Batch b = random_batch(9, 4, 3, 4);
  EXPECT_NEAR(m.loss_and_grad(p, b).loss, m.loss(p, b), 1e-14);
}

TEST(Mlp, ParameterCountAndLayout) {
  const Mlp m(ModelSpec{{16, 32, 32, 4}, Activation::kTanh, LossKind::kSquared});
  EXPECT_EQ(m.num_params(), 16u * 32 + 32 + 32 * 32 + 32 + 32 * 4 + 4);
}

TEST(Mlp, LogProbsNormalize) {
  const Mlp m(ModelSpec{{3, 5, 4}, Activation::kTanh, LossKind::kCrossEntropy});
  SeededRng rng(5);
  const ParamVector p = m.init(rng);
  const Matrix lp = m.log_probs(p, random_batch(6, 3, 4, 6).inputs);
  for (std::size_t i = 0; i < lp.rows(); ++i) {
    double s = 0;
    for (std::size_t c = 0; c < lp.cols(); ++c) s += std::exp(lp(i, c));
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
}

TEST(Mlp, ActivationsOnePerHiddenLayer) {
  const Mlp m(ModelSpec{{3, 5, 6, 2}, Activation::kRelu, LossKind::kSquared});
  SeededRng rng(7);
  const auto acts = m.activations(m.init(rng), random_batch(10, 3, 2, 8).inputs);
  ASSERT_EQ(acts.size(), 2u);
  EXPECT_EQ(acts[0].layer, 0u);
  EXPECT_EQ(acts[0].dim(), 5u);
  EXPECT_EQ(acts[1].dim(), 6u);
  EXPECT_EQ(acts[1].samples(), 10u);
  for (double v : acts[0].values.data()) EXPECT_GE(v, 0.0);
}

TEST(Mlp, InitIsSeededAndBiasesZero) {
  const Mlp m(ModelSpec{{3, 4, 2}, Activation::kTanh, LossKind::kSquared});
  SeededRng a(9), b(9);
  const ParamVector pa = m.init(a), pb = m.init(b);
  EXPECT_EQ(pa.values, pb.values);
  EXPECT_EQ(pa[m.layout().bias_index(0, 0)], 0.0);
}

TEST(Mlp, RejectsBadInputs) {
  const Mlp m(ModelSpec{{3, 4, 2}, Activation::kTanh, LossKind::kSquared});
  SeededRng rng(1);
  const ParamVector p = m.init(rng);
  EXPECT_THROW(m.loss(ParamVector(3), random_batch(4, 3, 2, 1)), Error);
  Batch b = random_batch(4, 3, 2, 1);
  b.labels[0] = 7;
  EXPECT_THROW(m.loss(p, b), Error);
  EXPECT_THROW(m.accuracy(p, random_batch(4, 3, 2, 1), 2, 2), ArgumentError);
}

TEST(Mlp, AccuracyOfPerfectPredictor) {
  // a single linear layer that copies the input: arg-max of x is the label
  const Mlp m(ModelSpec{{3, 3}, Activation::kTanh, LossKind::kSquared});
  ParamVector p(m.num_params());
  for (std::size_t i = 0; i < 3; ++i) p[m.layout().weight_index(0, i, i)] = 1.0;
  SeededRng rng(2);
  Batch b{Matrix::gaussian(50, 3, rng), std::vector<std::size_t>(50)};
  for (std::size_t i = 0; i < 50; ++i) {
    auto r = b.inputs.row(i);
    b.labels[i] = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  EXPECT_DOUBLE_EQ(m.accuracy(p, b), 1.0);
}

TEST(Teacher, LabelsDependOnlyOnTheFeatureBlock) {
  TeacherSpec s;
  s.input_dim = 8;
  s.feature_begin = 2;
  s.feature_end = 5;
  s.hidden = 0;
  s.classes = 3;
  TeacherTask t(s, 11);
  SeededRng rng(12);
  const Batch b = t.sample(100, rng, false);
  for (std::size_t i = 0; i < b.size(); ++i) {
    std::vector<double> x(b.inputs.row(i).begin(), b.inputs.row(i).end());
    EXPECT_EQ(t.label(x), b.labels[i]);
    x[0] += 10.0;
    x[7] -= 10.0;
    EXPECT_EQ(t.label(x), b.labels[i]);
  }
}

TEST(Teacher, SharedSeedTasksAgreeOnSharedFeatures) {
  TeacherSpec a;
  a.input_dim = 6;
  a.feature_begin = 0;
  a.feature_end = 4;
  a.hidden = 0;
  a.classes = 3;
  TeacherSpec b = a;
  b.feature_begin = 2;
  b.feature_end = 6;
  TeacherTask ta(a, 5), tb(b, 5);
  // inputs supported on the overlap [2, 4) get the same label from both
  SeededRng rng(6);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(6, 0.0);
    x[2] = rng.normal();
    x[3] = rng.normal();
    EXPECT_EQ(ta.label(x), tb.label(x));
  }
}

TEST(Teacher, NoiseRateIsRoughlyAsConfigured) {
  TeacherSpec s;
  s.input_dim = 5;
  s.feature_begin = 0;
  s.feature_end = 5;
  s.hidden = 8;
  s.classes = 4;
  s.label_noise = 0.4;
  TeacherTask t(s, 1);
  SeededRng r1(2), r2(2);
  const Batch noisy = t.sample(4000, r1, true);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i)
    changed += noisy.labels[i] != t.label(noisy.inputs.row(i));
  // a uniform redraw keeps the label 1/4 of the time
  EXPECT_NEAR(static_cast<double>(changed) / 4000.0, 0.4 * 0.75, 0.03);
}

TEST(Batches, SliceAndGather) {
  const Batch b = random_batch(6, 2, 3, 4);
  const Batch s = slice(b, 2, 5);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.labels[0], b.labels[2]);
  std::vector<std::size_t> idx{5, 0};
  const Batch g = gather(b, idx);
  EXPECT_EQ(g.labels[0], b.labels[5]);
  EXPECT_EQ(g.inputs(1, 1), b.inputs(0, 1));
  EXPECT_THROW(slice(b, 4, 7), ArgumentError);
}

TEST(Schedule, WarmupIsLinear) {
  LrSchedule s;
  s.kind = ScheduleKind::kConstant;
  s.peak = 1.0;
  s.warmup_steps = 20;
  EXPECT_DOUBLE_EQ(s.at(0), 1.0 / 20);
  EXPECT_DOUBLE_EQ(s.at(9), 10.0 / 20);
  EXPECT_DOUBLE_EQ(s.at(19), 1.0);
  EXPECT_DOUBLE_EQ(s.at(5000), 1.0);
}

TEST(Schedule, WarmupStableDecay) {
  LrSchedule s;
  s.kind = ScheduleKind::kWarmupStableDecay;
  s.peak = 0.5;
  s.warmup_steps = 10;
  s.total_steps = 300;
  s.decay_start = 100;
  s.final_fraction = 0.1;
  EXPECT_DOUBLE_EQ(s.at(50), 0.5);
  EXPECT_DOUBLE_EQ(s.at(100), 0.5);
  EXPECT_NEAR(s.at(200), 0.5 * (1 - 0.5 * 0.9), 1e-15);
  EXPECT_NEAR(s.at(300), 0.05, 1e-15);
  for (long t = 100; t < 300; ++t) EXPECT_GE(s.at(t), s.at(t + 1));
}

TEST(Schedule, DecayToZero) {
  LrSchedule s;
  s.kind = ScheduleKind::kDecayToZero;
  s.peak = 1.0;
  s.warmup_steps = 0;
  s.total_steps = 100;
  EXPECT_DOUBLE_EQ(s.at(0), 1.0);
  EXPECT_DOUBLE_EQ(s.at(50), 0.5);
  EXPECT_DOUBLE_EQ(s.at(100), 0.0);
}

TEST(Optim, GradientDescentStep) {
  ParamVector p(std::vector<double>{1.0, -2.0});
  GradientDescent gd;
  gd.step(p, ParamVector(std::vector<double>{0.5, 1.0}), 0.1);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  EXPECT_DOUBLE_EQ(p[1], -2.1);
}

TEST(Optim, AdaptiveMomentsFirstStepHasUnitScale) {
  ParamVector p(std::vector<double>{0.0, 0.0});
  AdaptiveMoments adam;
  adam.step(p, ParamVector(std::vector<double>{3.0, -1e-3}), 0.01);
  // bias-corrected first step is lr * sign(g), up to eps
  EXPECT_NEAR(p[0], -0.01, 1e-6);
  EXPECT_NEAR(p[1], 0.01, 1e-4);
}
