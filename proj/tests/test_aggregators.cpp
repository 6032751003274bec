#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fairgrad/aggregators.hpp"
#include "test_util.hpp"

using namespace fairgrad;
using fairgrad::test::columns;
using fairgrad::test::vec;

namespace {

// Min-norm point of the segment [g1, g2]: gamma g1 + (1 - gamma) g2.
double two_task_gamma(const Vector& g1, const Vector& g2) {
  const double denom = (g1 - g2).squaredNorm();
  if (denom == 0.0) return 1.0;
  return std::clamp((g2 - g1).dot(g2) / denom, 0.0, 1.0);
}

}  // namespace

TEST(FairGrad, OrthonormalColumns) {
  const GradientMatrix g = columns({{1, 0}, {0, 1}});
  const Aggregate a = aggregate_fairgrad(g, 1.0);
  EXPECT_TRUE(a.weights.isApprox(vec({1, 1}), 1e-9));
  EXPECT_TRUE(a.direction.isApprox(vec({1, 1}), 1e-9));
  EXPECT_FALSE(a.flagged);
}

TEST(FairGrad, SingleTask) {
  const Aggregate a = aggregate_fairgrad(columns({{3, 4}}), 1.0);
  EXPECT_NEAR(a.weights(0), 0.2, 1e-9);
  EXPECT_NEAR(a.direction(0), 0.6, 1e-9);
  EXPECT_NEAR(a.direction(1), 0.8, 1e-9);
  EXPECT_NEAR(Vector(vec({3, 4})).dot(a.direction), 5.0, 1e-8);
}

TEST(FairGrad, AlphaZeroSumsGradients) {
  CounterRng rng(5);
  const GradientMatrix g = fairgrad::test::gaussian_matrix(4, 3, rng);
  const Aggregate a = aggregate_fairgrad(g, 0.0);
  EXPECT_TRUE(a.direction.isApprox(g.rowwise().sum()));
}

TEST(FairGrad, DefiningRelationOnRandomGradients) {
  CounterRng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index k = 2 + trial % 4;
    const GradientMatrix g = fairgrad::test::gaussian_matrix(k + 2, k, rng);
    const double alpha = 0.5 + (trial % 7);
    const Aggregate a = aggregate_fairgrad(g, alpha);
    if (!a.solver.converged) continue;
    EXPECT_FALSE(a.flagged);
    const Vector gain = g.transpose() * a.direction;
    for (Eigen::Index i = 0; i < k; ++i) {
      EXPECT_GE(gain(i), 0.0);
      EXPECT_LE(std::abs(std::pow(gain(i), -alpha) - a.weights(i)), 1e-5 * a.weights(i));
    }
  }
}

TEST(FairGrad, SgdModeIsFlaggedWhenShort) {
  const GradientMatrix g = columns({{3, 0}, {0, 0.1}});
  WeightSolverOptions opts;
  const Aggregate a = aggregate_fairgrad(g, 2.0, opts, SolverMode::sgd_inner, 0.1, 1);
  EXPECT_EQ(a.solver.mode, SolverMode::sgd_inner);
  EXPECT_TRUE(a.flagged);
}

TEST(LinearScalarization, Examples) {
  EXPECT_EQ(aggregate_ls(columns({{1, 0}, {0, 1}})), vec({1, 1}));
  EXPECT_EQ(aggregate_ls(columns({{1, 0}, {-1, 0}})), vec({0, 0}));
  EXPECT_EQ(aggregate_ls(columns({{2, -3}})), vec({2, -3}));
}

TEST(LinearScalarization, Homogeneous) {
  CounterRng rng(8);
  const GradientMatrix g = fairgrad::test::gaussian_matrix(5, 3, rng);
  EXPECT_TRUE(aggregate_ls(3.5 * g).isApprox(3.5 * aggregate_ls(g)));
}

TEST(ScaleInvariant, Examples) {
  const GradientMatrix g = columns({{1, 2}, {3, -1}});
  EXPECT_EQ(aggregate_si(vec({1, 1}), g), aggregate_ls(g));
  EXPECT_EQ(aggregate_si(vec({2, 4}), columns({{2, 0}, {0, 4}})), vec({1, 1}));
  EXPECT_EQ(aggregate_si(vec({10}), columns({{5, 0}})), vec({0.5, 0}));
  EXPECT_THROW(aggregate_si(vec({1, 0}), g), std::domain_error);
  EXPECT_THROW(aggregate_si(vec({1, -2}), g), std::domain_error);
}

TEST(RandomLossWeighting, SingleTaskWeightIsOne) {
  CounterRng rng(1);
  const Aggregate a = aggregate_rlw(columns({{3, 4}}), rng);
  EXPECT_EQ(a.weights(0), 1.0);
  EXPECT_EQ(a.direction, vec({3, 4}));
}

TEST(RandomLossWeighting, SeededDrawIsReproducible) {
  const GradientMatrix g = columns({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  CounterRng r1(42), r2(42);
  const Aggregate a = aggregate_rlw(g, r1);
  const Aggregate b = aggregate_rlw(g, r2);
  EXPECT_EQ(a.weights, b.weights);
  // recorded draw for seed 42 (libstdc++ normal_distribution)
  EXPECT_NEAR(a.weights(0), 0.31129016146882382, 1e-12);
  EXPECT_NEAR(a.weights(1), 0.23990565514538323, 1e-12);
  EXPECT_NEAR(a.weights(2), 0.44880418338579292, 1e-12);
}

TEST(RandomLossWeighting, WeightsOnSimplex) {
  CounterRng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index k = 1 + trial % 9;
    const Aggregate a = aggregate_rlw(Matrix::Identity(k, k), rng);
    EXPECT_TRUE((a.weights.array() > 0.0).all());
    EXPECT_NEAR(a.weights.sum(), 1.0, 1e-12);
  }
}

TEST(DynamicWeightAverage, UniformWithoutHistory) {
  DwaState state(2.0);
  const GradientMatrix g = columns({{1, 0}, {0, 1}});
  EXPECT_EQ(aggregate_dwa(vec({3, 4}), g, state).weights, vec({1, 1}));
  EXPECT_EQ(aggregate_dwa(vec({2, 2}), g, state).weights, vec({1, 1}));
  EXPECT_EQ(state.history_size(), 2u);
}

TEST(DynamicWeightAverage, EqualRatios) {
  DwaState state(2.0);
  state.push(vec({2, 4}));
  state.push(vec({1, 2}));
  const Vector w = state.weights(2);
  EXPECT_NEAR(w(0), 1.0, 1e-15);
  EXPECT_NEAR(w(1), 1.0, 1e-15);
}

TEST(DynamicWeightAverage, RatioTwoToOne) {
  DwaState state(2.0);
  state.push(vec({1, 1}));
  state.push(vec({2, 1}));
  const Vector w = state.weights(2);
  EXPECT_NEAR(w(0), 1.2449, 1e-4);
  EXPECT_NEAR(w(1), 0.7551, 1e-4);
  EXPECT_NEAR(w(0), 2.0 / (1.0 + std::exp(-0.5)), 1e-14);
}

TEST(DynamicWeightAverage, HistoryIsBoundedAndZeroLossRejected) {
  DwaState state;
  for (int i = 0; i < 5; ++i) state.push(vec({1.0 + i, 1.0}));
  EXPECT_EQ(state.history_size(), 2u);
  DwaState bad;
  bad.push(vec({0, 1}));
  bad.push(vec({1, 1}));
  EXPECT_THROW(bad.weights(2), std::domain_error);
  EXPECT_THROW(DwaState(0.0), std::invalid_argument);
}

TEST(Mgda, Examples) {
  Aggregate a = aggregate_mgda(columns({{1, 0}, {0, 1}}));
  EXPECT_TRUE(a.weights.isApprox(vec({0.5, 0.5}), 1e-12));
  EXPECT_TRUE(a.direction.isApprox(vec({0.5, 0.5}), 1e-12));

  a = aggregate_mgda(columns({{1, 0}, {2, 0}}));
  EXPECT_TRUE(a.weights.isApprox(vec({1, 0})));
  EXPECT_TRUE(a.direction.isApprox(vec({1, 0})));

  a = aggregate_mgda(columns({{0.3, -1.2, 2.0}, {-0.3, 1.2, -2.0}}));
  EXPECT_LE(a.direction.norm(), 1e-6);
}

TEST(Mgda, MatchesTwoTaskClosedForm) {
  CounterRng rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index m = 1 + trial % 6;
    const GradientMatrix g = fairgrad::test::gaussian_matrix(m, 2, rng);
    const double gamma = two_task_gamma(g.col(0), g.col(1));
    const Aggregate a = aggregate_mgda(g);
    EXPECT_NEAR(a.weights(0), gamma, 1e-8) << "trial " << trial;
    EXPECT_NEAR(a.weights(1), 1.0 - gamma, 1e-8) << "trial " << trial;
  }
}

TEST(Mgda, WeightsAreScaleInvariant) {
  CounterRng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const GradientMatrix g = fairgrad::test::gaussian_matrix(6, 4, rng);
    const Aggregate a = aggregate_mgda(g);
    const Aggregate b = aggregate_mgda(7.0 * g);
    EXPECT_LE((a.weights - b.weights).cwiseAbs().maxCoeff(), 1e-7);
  }
}

TEST(PcGrad, NoConflictIsTheMean) {
  CounterRng rng(1);
  EXPECT_TRUE(aggregate_pcgrad(columns({{1, 0}, {0, 1}}), rng).isApprox(vec({0.5, 0.5})));
}

// g1 = (1,0), g2 = (-1,1): g1.g2 = -1, so g1 - (-1/2) g2 = (0.5, 0.5) and
// g2 - (-1/1) g1 = (0, 1). Mean (0.25, 0.75) in either visiting order.
TEST(PcGrad, ConflictingPair) {
  const GradientMatrix g = columns({{1, 0}, {-1, 1}});
  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
    CounterRng rng(seed);
    const Vector d = aggregate_pcgrad(g, rng);
    EXPECT_NEAR(d(0), 0.25, 1e-15);
    EXPECT_NEAR(d(1), 0.75, 1e-15);
  }
  CounterRng rng(0);
  const Vector s = aggregate_pcgrad(g, rng, PcgradReduce::sum);
  EXPECT_NEAR(s(0), 0.5, 1e-15);
  EXPECT_NEAR(s(1), 1.5, 1e-15);
}

TEST(PcGrad, SingleTask) {
  CounterRng rng(1);
  EXPECT_EQ(aggregate_pcgrad(columns({{2, -1}}), rng), vec({2, -1}));
}

// After its projection against j, g_i has no negative component along g_j.
TEST(PcGrad, ProjectionRemovesConflictWithLastTask) {
  CounterRng rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const GradientMatrix g = fairgrad::test::gaussian_matrix(3, 2, rng);
    CounterRng shuffle(static_cast<std::uint64_t>(trial));
    const Vector sum = aggregate_pcgrad(g, shuffle, PcgradReduce::sum);
    // with K = 2 each task is projected against the other one only
    Vector g1 = g.col(0), g2 = g.col(1);
    const double dot = g1.dot(g2);
    if (dot < 0.0) {
      g1 -= dot / g.col(1).squaredNorm() * g.col(1);
      g2 -= dot / g.col(0).squaredNorm() * g.col(0);
    }
    EXPECT_GE(g1.dot(g.col(1)), -1e-10);
    EXPECT_GE(g2.dot(g.col(0)), -1e-10);
    EXPECT_TRUE(sum.isApprox(g1 + g2, 1e-12));
  }
}

TEST(Dispatch, WeightsMatchDirection) {
  CounterRng rng(13);
  const GradientMatrix g = fairgrad::test::gaussian_matrix(4, 3, rng);
  const Vector losses = vec({1.0, 2.0, 0.5});
  for (Method m : {Method::fairgrad, Method::ls, Method::si, Method::rlw, Method::dwa, Method::mgda}) {
    ExperimentConfig cfg;
    cfg.method = m;
    AggregatorState state(m, CounterRng(1), 2.0);
    const Aggregate a = aggregate(losses, g, cfg, state);
    EXPECT_TRUE(a.direction.isApprox(g * a.weights, 1e-10)) << to_string(m);
  }
}

TEST(Dispatch, FairGradWarmStartsFromPreviousWeights) {
  ExperimentConfig cfg;
  cfg.alpha = 2.0;
  AggregatorState state(Method::fairgrad, CounterRng(1), 2.0);
  const GradientMatrix g = columns({{2, 0.1}, {0.3, 1}});
  const Aggregate first = aggregate(vec({1, 1}), g, cfg, state);
  ASSERT_TRUE(state.warm_weights.has_value());
  const Aggregate second = aggregate(vec({1, 1}), g, cfg, state);
  EXPECT_TRUE(first.weights.isApprox(second.weights, 1e-9));
  EXPECT_LE(second.solver.iterations, 1);
}
