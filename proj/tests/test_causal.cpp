#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"

using namespace causalrec;

namespace {

PerturbedPairSet pairs_of(std::vector<IoPair> all) {
  PerturbedPairSet set;
  set.original = all.front();
  set.perturbed.assign(all.begin() + 1, all.end());
  set.m = set.perturbed.size();
  return set;
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({1e-10, std::abs(a), std::abs(b)}); }

}  // namespace

TEST(PredictProb, DecayWeightsAndExamples) {
  const auto w = decay_weights(5, 0.7);
  const std::vector<double> expected{0.2401, 0.343, 0.49, 0.7, 1.0};
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(w[j], expected[j], 1e-15);

  const History h{10, 11, 12, 13, 14};
  EXPECT_EQ(predict_prob(h, 3, {}, 0.7), 0.5);
  ThetaMap theta{{{10, 3}, 0.5}, {{14, 3}, 1.0}, {{11, 4}, 9.0}};
  const double direct = 1.0 / (1.0 + std::exp(-(0.5 * 0.2401 + 1.0)));
  EXPECT_NEAR(predict_prob(h, 3, theta, 0.7), direct, 1e-15);
  EXPECT_NEAR(predict_prob(h, 3, theta, 0.7), 0.7540, 5e-5);
}

TEST(Fit, GradientMatchesFiniteDifferences) {
  const auto set = pairs_of({{{1, 2, 3}, 7}, {{1, 4, 3}, 7}, {{2, 2, 5}, 8}});
  const DependencyProblem problem(set, 0.7);
  const double lambda = 0.01;
  std::vector<double> theta(problem.dimension()), grad(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) theta[k] = 0.1 + 0.37 * static_cast<double>(k);
  problem.gradient(theta, lambda, grad);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double h = 1e-6, saved = theta[k];
    theta[k] = saved + h;
    const double up = problem.objective(theta, lambda);
    theta[k] = saved - h;
    const double down = problem.objective(theta, lambda);
    theta[k] = saved;
    EXPECT_LT(relative_error(grad[k], (up - down) / (2 * h)), 1e-6) << "coordinate " << k;
  }
}

TEST(Fit, KeysAreCooccurrencesAndNonNegative) {
  const auto set = pairs_of({{{1, 2}, 7}, {{3, 2}, 8}});
  const auto deps = fit_dependencies(set);
  const ThetaMap::key_type keys[] = {{1, 7}, {2, 7}, {2, 8}, {3, 8}};
  ASSERT_EQ(deps.theta.size(), 4u);
  for (const auto& key : keys) {
    ASSERT_TRUE(deps.theta.contains(key));
    EXPECT_GE(deps.theta.at(key), 0.0);
  }
  FitOptions none;
  none.max_iters = 0;
  for (const auto& [key, value] : fit_dependencies(set, none).theta) EXPECT_EQ(value, 0.0);
}

TEST(Fit, SingleRecordMatchesGridSearch) {
  for (const History& h : {History{4}, History{4, 4, 4}}) {
    const auto set = pairs_of({{h, 9}});
    FitOptions opt;
    opt.tol = 1e-15;
    opt.max_iters = 200000;
    const auto deps = fit_dependencies(set, opt);
    double w = 0;
    for (double x : decay_weights(h.size(), opt.gamma)) w += x;
    auto f = [&](double t) { return log_sigmoid(t * w) - opt.l2_lambda * t * t; };
    double best = 0;
    for (double t = 0; t <= 50; t += 1e-3)
      if (f(t) > f(best)) best = t;
    const double lo = std::max(0.0, best - 1e-3);
    for (double t = lo; t <= best + 1e-3; t += 1e-7)
      if (f(t) > f(best)) best = t;
    EXPECT_NEAR(deps.theta.at({4, 9}), best, 1e-4);
  }
}

TEST(Fit, WithoutPenaltyRunsToMaxIters) {
  const auto set = pairs_of({{{1, 2, 3}, 5}});
  FitOptions opt;
  opt.l2_lambda = 0;
  opt.max_iters = 300;
  const auto deps = fit_dependencies(set, opt);
  EXPECT_FALSE(deps.converged);
  EXPECT_EQ(deps.iterations, 300);
  opt.max_iters = 600;
  EXPECT_GT(fit_dependencies(set, opt).theta.at({3, 5}), deps.theta.at({3, 5}));
}

TEST(Fit, ObjectiveNeverDecreases) {
  std::mt19937_64 rng(12);
  const auto set = support::random_pairs(rng, 5, 8, 3, 40);
  FitOptions opt;
  opt.learning_rate = 5.0;  // large enough to trigger rejections
  double previous = -1e300;
  for (int iters = 0; iters <= 60; ++iters) {
    opt.max_iters = iters;
    const auto deps = fit_dependencies(set, opt);
    EXPECT_GE(deps.objective, previous) << "after " << iters << " iterations";
    previous = deps.objective;
  }
}

TEST(Fit, RecentPositionsGetLargerWeights) {
  const auto set = pairs_of({{{1, 2, 3, 4, 5}, 9}});
  FitOptions opt;
  opt.l2_lambda = 1e-6;
  opt.max_iters = 200;
  const auto deps = fit_dependencies(set, opt);
  for (ItemId j = 1; j < 5; ++j) EXPECT_GT(deps.theta.at({j + 1, 9}), deps.theta.at({j, 9}));
}

TEST(Fit, ConfigErrors) {
  const auto set = pairs_of({{{1}, 2}});
  FitOptions opt;
  opt.gamma = 0;
  EXPECT_THROW(fit_dependencies(set, opt), ConfigError);
  opt.gamma = 1.0;
  EXPECT_NO_THROW(fit_dependencies(set, opt));
  opt.l2_lambda = -1;
  EXPECT_THROW(fit_dependencies(set, opt), ConfigError);
}

TEST(Select, HandExamples) {
  CausalDependencies deps;
  deps.theta = {{{0, 9}, 0.9}, {{1, 9}, 0.5}, {{2, 9}, 0.1}, {{3, 8}, 5.0}};
  const History h{1, 4, 5, 6, 7};  // B, D, E, F, G with A=0, C=2
  EXPECT_FALSE(select_explanation(deps, h, 9, 1));
  const auto e = select_explanation(deps, h, 9, 2);
  ASSERT_TRUE(e);
  EXPECT_EQ(e->cause, 1);
  EXPECT_EQ(e->effect, 9);
  EXPECT_EQ(e->rank, 2);
  EXPECT_EQ(e->dependency, 0.5);
  EXPECT_THROW(select_explanation(deps, h, 9, 0), ConfigError);
}

TEST(Select, TiesPreferRecencyThenSmallerId) {
  CausalDependencies deps;
  deps.theta = {{{3, 9}, 1.0}, {{5, 9}, 1.0}, {{1, 9}, 1.0}};
  EXPECT_EQ(select_explanation(deps, History{5, 3, 8}, 9, 1)->cause, 3);
  // 1 is not in the history, so it ranks after the in-history items
  const auto ranked = rank_causes(deps.theta, 9, History{5, 3, 8});
  EXPECT_EQ(ranked.back().first, 1);
  deps.theta = {{{7, 9}, 1.0}, {{2, 9}, 1.0}};
  EXPECT_FALSE(select_explanation(deps, History{4}, 9, 1));
  EXPECT_EQ(rank_causes(deps.theta, 9, History{4}).front().first, 2);
}

TEST(Select, MatchesOracleScaleFreeAndSound) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<ItemId> item(0, 11), out(0, 2);
  std::uniform_int_distribution<int> level(0, 6), kdist(1, 4);
  for (int trial = 0; trial < 1000; ++trial) {
    CausalDependencies deps;
    History h(5);
    for (auto& x : h) x = item(rng);
    for (int e = 0; e < 20; ++e) deps.theta[{item(rng), out(rng)}] = 0.25 * level(rng);
    const ItemId y = out(rng);
    const int k = kdist(rng);
    const auto got = select_explanation(deps, h, y, k);
    const auto want = oracles::select(deps.theta, h, y, k);
    ASSERT_EQ(got.has_value(), want.has_value()) << "trial " << trial;
    if (!got) continue;
    EXPECT_EQ(got->cause, want->cause);
    EXPECT_EQ(got->rank, want->rank);
    EXPECT_NE(std::find(h.begin(), h.end(), got->cause), h.end());
    EXPECT_EQ(got->effect, y);
    auto scaled = deps;
    for (auto& [key, value] : scaled.theta) value *= 3.7;
    const auto again = select_explanation(scaled, h, y, k);
    ASSERT_TRUE(again);
    EXPECT_EQ(again->cause, got->cause);
  }
}
