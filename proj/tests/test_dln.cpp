#include <gtest/gtest.h>

#include <cmath>

#include "driftlab/dln.hpp"
#include "oracles.hpp"

using namespace driftlab;
using namespace driftlab::dln;

namespace {

SupportSpec small_spec() { return SupportSpec{0, 4, 8, 12, 16}; }

struct Problem {
  SupportSpec spec = small_spec();
  GroundTruths truths;
  DlnDataset data;
  DlnParams params;

  explicit Problem(std::uint64_t seed, std::size_t n = 8) {
    SeededRng rng(seed);
    truths = make_ground_truths(spec, rng, SignMode::kRandom);
    data = make_dataset(n, truths.w_ft, rng);
    params = init_from_pretrained(truths.w_pret, 0.1);
    // move off the balanced point so the check covers general (u, v)
    for (std::size_t i = 0; i < params.u.size(); ++i) params.u[i] += 0.05 * rng.normal();
  }
};

std::vector<double> flat(const DlnParams& p) {
  std::vector<double> x = p.u;
  x.insert(x.end(), p.v.begin(), p.v.end());
  return x;
}

DlnParams unflat(const std::vector<double>& x) {
  const std::size_t d = x.size() / 2;
  return DlnParams{{x.begin(), x.begin() + static_cast<long>(d)},
                   {x.begin() + static_cast<long>(d), x.end()}};
}

}  // namespace

TEST(Dln, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Problem pr(seed);
    const auto g = grad(pr.params, pr.data);
    std::vector<double> analytic = g.gu;
    analytic.insert(analytic.end(), g.gv.begin(), g.gv.end());
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& x) { return loss(unflat(x), pr.data); }, flat(pr.params),
        1e-6);
    EXPECT_LE(oracle::rel_vec_err(analytic, fd), 1e-6) << "seed " << seed;
  }
}

TEST(Dln, TraceMatchesFiniteDifferenceSecondDerivatives) {
  Problem pr(4);
  const auto x0 = flat(pr.params);
  const double h = 1e-4;
  const double l0 = loss(pr.params, pr.data);
  double tr = 0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    auto xp = x0, xm = x0;
    xp[i] += h;
    xm[i] -= h;
    tr += (loss(unflat(xp), pr.data) - 2 * l0 + loss(unflat(xm), pr.data)) / (h * h);
  }
  EXPECT_LE(oracle::rel_err(trace_sharpness(pr.params, pr.data), tr), 1e-5);
}

TEST(Dln, GroundTruthSupports) {
  const SupportSpec s{0, 23, 45, 66, 100};
  SeededRng rng(1);
  const auto g = make_ground_truths(s, rng, SignMode::kPositive);
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(g.w_ft[i], (i <= 45) ? 1.0 : 0.0) << i;
    EXPECT_EQ(g.w_pret[i], (i >= 23 && i <= 66) ? 1.0 : 0.0) << i;
  }
  SeededRng r2(2);
  const auto h = make_ground_truths(s, r2, SignMode::kRandom);
  std::size_t neg = 0;
  for (double w : h.w_ft) {
    if (w != 0.0) EXPECT_EQ(std::abs(w), 1.0);
    neg += w < 0;
  }
  EXPECT_GT(neg, 5u);
}

TEST(Dln, SupportSpecValidation) {
  EXPECT_THROW((SupportSpec{0, 50, 45, 66, 100}).validate(), ArgumentError);
  EXPECT_THROW((SupportSpec{0, 23, 45, 100, 100}).validate(), ArgumentError);
  EXPECT_NO_THROW((SupportSpec{}).validate());
}

TEST(Dln, DatasetNeedsOverparameterization) {
  SeededRng rng(1);
  const auto g = make_ground_truths(small_spec(), rng);
  EXPECT_THROW(make_dataset(16, g.w_ft, rng), ArgumentError);
  const auto data = make_dataset(5, g.w_ft, rng);
  EXPECT_EQ(loss(DlnParams{g.w_ft, std::vector<double>(16, 1.0)}, data), 0.0);
}

TEST(Dln, BalancedInitReproducesPretrainedWeights) {
  std::vector<double> w{0.0, 2.0, -3.0, 0.0};
  const auto p = init_from_pretrained(w, 0.01);
  const auto e = p.effective_weight();
  EXPECT_NEAR(e[1], 2.0, 1e-15);
  EXPECT_NEAR(e[2], -3.0, 1e-15);
  EXPECT_DOUBLE_EQ(e[0], 1e-4);
  EXPECT_DOUBLE_EQ(std::abs(p.u[2]), std::abs(p.v[2]));
  EXPECT_THROW(init_from_pretrained(w, 0.0), ArgumentError);
}

TEST(Dln, ForgettingMassEndpoints) {
  const SupportSpec s = small_spec();
  SeededRng rng(1);
  const auto g = make_ground_truths(s, rng);
  EXPECT_DOUBLE_EQ(forgetting_mass(g.w_pret, s, g.w_pret), 0.0);
  std::vector<double> wiped = g.w_pret;
  for (std::size_t i = s.b + 1; i <= s.z2; ++i) wiped[i] = 0.0;
  EXPECT_DOUBLE_EQ(forgetting_mass(wiped, s, g.w_pret), 1.0);
  // only [b+1, z2] counts; the overlap does not
  std::vector<double> overlap_wiped = g.w_pret;
  for (std::size_t i = s.z1; i <= s.b; ++i) overlap_wiped[i] = 0.0;
  EXPECT_DOUBLE_EQ(forgetting_mass(overlap_wiped, s, g.w_pret), 0.0);
  std::vector<double> half = g.w_pret;
  for (std::size_t i = s.b + 1; i <= s.z2; ++i) half[i] *= 0.5;
  EXPECT_DOUBLE_EQ(forgetting_mass(half, s, g.w_pret), 0.5);
}

TEST(Dln, TrainingConvergesAndIsDeterministic) {
  Problem pr(5);
  TrainOptions o;
  o.lr = 0.02;
  o.batch_size = 4;
  o.max_steps = 200000;
  SeededRng r1(9), r2(9);
  const auto init = init_from_pretrained(pr.truths.w_pret, 1e-3);
  const auto a = train(init, pr.data, o, r1);
  const auto b = train(init, pr.data, o, r2);
  EXPECT_TRUE(a.converged);
  EXPECT_LE(a.final_loss, 1e-6);
  EXPECT_EQ(a.final_w, b.final_w);
  EXPECT_EQ(a.loss_trace.size(), a.sharpness_trace.size());
  EXPECT_DOUBLE_EQ(a.sharpness_trace.front(), trace_sharpness(init, pr.data));
}

TEST(Dln, TrainingRejectsBadOptions) {
  Problem pr(6);
  SeededRng rng(1);
  TrainOptions o;
  o.lr = 0.0;
  EXPECT_THROW(train(pr.params, pr.data, o, rng), ArgumentError);
  o.lr = 0.01;
  o.batch_size = 100;
  EXPECT_THROW(train(pr.params, pr.data, o, rng), ArgumentError);
}

TEST(Dln, HugeStepDiverges) {
  Problem pr(7);
  TrainOptions o;
  o.lr = 50.0;
  o.batch_size = 8;
  SeededRng rng(1);
  EXPECT_THROW(train(pr.params, pr.data, o, rng), DivergenceError);
}

TEST(Dln, TraceRatioSolversHitTheTarget) {
  Problem pr(8);
  const auto gd = gram_diagonal(pr.data.x);
  const auto flat0 = init_from_pretrained(pr.truths.w_pret, 1e-3);
  const double c = imbalance_for_trace_ratio(flat0, pr.spec, gd, 4.0);
  EXPECT_NEAR(trace_sharpness(rescale_imbalance(flat0, pr.spec, c), gd) /
                  trace_sharpness(flat0, gd),
              4.0, 1e-9);
  // imbalance keeps the effective weights
  const auto e0 = flat0.effective_weight();
  const auto e1 = rescale_imbalance(flat0, pr.spec, c).effective_weight();
  for (std::size_t i = 0; i < e0.size(); ++i) EXPECT_NEAR(e0[i], e1[i], 1e-12);

  const double s = magnitude_for_trace_ratio(pr.truths.w_pret, 1e-3, gd, 4.0);
  EXPECT_NEAR(trace_sharpness(scaled_pretrained(pr.truths.w_pret, s, 1e-3), gd) /
                  trace_sharpness(flat0, gd),
              4.0, 1e-9);
  EXPECT_THROW(magnitude_for_trace_ratio(pr.truths.w_pret, 1e-3, gd, 0.5), ArgumentError);
}

TEST(Dln, SharpnessComparisonStartsFromTheRequestedRatio) {
  Problem pr(9);
  TrainOptions o;
  o.lr = 0.01;
  o.batch_size = 4;
  for (auto ctl : {SharpnessControl::kMagnitude, SharpnessControl::kImbalance}) {
    const auto cmp = run_sharpness_comparison(pr.spec, pr.truths, pr.data, 4.0, o, 3, 1e-3, ctl);
    EXPECT_NEAR(cmp.trace_sharp / cmp.trace_flat, 4.0, 1e-9);
    EXPECT_TRUE(cmp.flat.converged);
    EXPECT_TRUE(cmp.sharp.converged);
  }
  EXPECT_THROW(run_sharpness_comparison(pr.spec, pr.truths, pr.data, 0.5, o, 3), ArgumentError);
  EXPECT_EQ(sharpness_control_from_string(to_string(SharpnessControl::kImbalance)),
            SharpnessControl::kImbalance);
  EXPECT_THROW(sharpness_control_from_string("bogus"), ArgumentError);
}
