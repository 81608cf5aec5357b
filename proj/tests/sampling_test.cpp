#include "stm/sampling.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "stm/eigensolve.hpp"
#include "test_util.hpp"

using namespace stm;

namespace {
const ConditionKappas kDefaultKappas;  // 1/4, 1/4, 1/2
NoiseRanges sigmas(double g, double b, double t) {
  NoiseRanges s;
  s.sigma_g = g;
  s.sigma_b = b;
  s.sigma_t = t;
  return s;
}
}  // namespace

TEST(TensorK0, MatchesFrozenValue) {
  // 2k/log(3/2) at k = 3, evaluated independently at high precision.
  EXPECT_NEAR(tensor_k0(), 14.79782077425859011605, 1e-12);
}

TEST(PlanWithReplacement, MatchesFrozenOracle) {
  // eps=0.4, delta=0.1, kappas (1/4,1/4,1/2), sigmas (1,1,2), d=10.
  const SamplePlan p = plan_with_replacement(0.4, 0.1, kDefaultKappas, sigmas(1, 1, 2), 10);
  EXPECT_EQ(p.n_g, 3685);  // ceil(8 * log(100) / 0.01) = ceil(3684.136...)
  EXPECT_EQ(p.n_b, 2001);  // ceil(2000.0568...)
  EXPECT_EQ(p.n_t, 4942);  // ceil(4941.3254...)
  EXPECT_NEAR(p.raw_g, 3684.1361487904730944, 1e-8);
  EXPECT_NEAR(p.raw_b, 2000.0568128421948132, 1e-8);
  EXPECT_NEAR(p.raw_t, 4941.3254325746681667, 1e-8);
  EXPECT_EQ(p.scheme, SampleScheme::WithReplacement);
}

TEST(PlanWithReplacement, DoublingSigmaQuadruplesRaw) {
  // Formula homogeneity: sizes scale with sigma^2.  Tolerance instead of
  // bit-equality because the compiler may constant-fold one call site with
  // correctly-rounded transcendentals while the other uses libm at runtime.
  const SamplePlan p1 = plan_with_replacement(0.4, 0.1, kDefaultKappas, sigmas(1, 1, 2), 10);
  const SamplePlan p2 = plan_with_replacement(0.4, 0.1, kDefaultKappas, sigmas(2, 2, 4), 10);
  EXPECT_NEAR(p2.raw_g, 4.0 * p1.raw_g, 1e-12 * p2.raw_g);
  EXPECT_NEAR(p2.raw_b, 4.0 * p1.raw_b, 1e-12 * p2.raw_b);
  EXPECT_NEAR(p2.raw_t, 4.0 * p1.raw_t, 1e-12 * p2.raw_t);
}

TEST(PlanWithReplacement, HugeAccuracyMultiplierFloorsAtOne) {
  ConditionKappas huge;
  huge.g = huge.b = huge.t = 1e9;
  const SamplePlan p = plan_with_replacement(1.0, 0.5, huge, sigmas(1, 1, 1), 3);
  EXPECT_EQ(p.n_g, 1);
  EXPECT_EQ(p.n_b, 1);
  EXPECT_EQ(p.n_t, 1);
}

TEST(PlanWithReplacement, ZeroSigmaGivesSingleSample) {
  // Degenerate estimator (all components identical at that order).
  const SamplePlan p = plan_with_replacement(0.4, 0.1, kDefaultKappas, sigmas(0, 1, 0), 10);
  EXPECT_EQ(p.n_g, 1);
  EXPECT_EQ(p.n_t, 1);
  EXPECT_GT(p.n_b, 1);
}

TEST(PlanWithoutReplacement, MatchesFrozenOracleLargePopulation) {
  // N = 1e12 makes the finite-population term negligible.
  const SamplePlan p =
      plan_without_replacement(0.4, 0.1, kDefaultKappas, sigmas(1, 1, 2), 10, 1000000000000LL);
  EXPECT_EQ(p.n_g, 8478);  // 1600*log(200) = 8477.307... (spec-level formula check)
  EXPECT_EQ(p.n_b, 4603);
  EXPECT_EQ(p.n_t, 9883);
  EXPECT_FALSE(p.exact_g);
}

TEST(PlanWithoutReplacement, MatchesFrozenOracleFinitePopulation) {
  // Raw sizes 1618.22 / 1394.14 / 1663.37 all exceed N = 1000, so every
  // estimate clamps to the full population and is marked exact.
  const SamplePlan p = plan_without_replacement(0.4, 0.1, kDefaultKappas, sigmas(1, 1, 2), 10, 1000);
  EXPECT_NEAR(p.raw_g, 1618.2225356438578046, 1e-8);
  EXPECT_NEAR(p.raw_b, 1394.1404951757548932, 1e-8);
  EXPECT_NEAR(p.raw_t, 1663.3747767737910708, 1e-8);
  EXPECT_EQ(p.n_g, 1000);
  EXPECT_EQ(p.n_b, 1000);
  EXPECT_EQ(p.n_t, 1000);
  EXPECT_TRUE(p.exact_g && p.exact_b && p.exact_t);
}

TEST(PlanWithoutReplacement, ClampMarksExact) {
  const SamplePlan p = plan_without_replacement(0.05, 0.1, kDefaultKappas, sigmas(1, 1, 2), 10, 100);
  EXPECT_EQ(p.n_g, 100);
  EXPECT_EQ(p.n_b, 100);
  EXPECT_EQ(p.n_t, 100);
  EXPECT_TRUE(p.exact_g);
  EXPECT_TRUE(p.exact_b);
  EXPECT_TRUE(p.exact_t);
}

TEST(PlanComparison, WithoutReplacementNeverLargerUnderSmallTolerances) {
  // For small enough deviation targets relative to N, the finite-population
  // factor makes without-replacement plans no larger than i.i.d. plans.
  for (const std::int64_t N : {50LL, 200LL, 1000LL}) {
    for (const double eps : {0.005, 0.01, 0.02}) {
      const SamplePlan wr = plan_with_replacement(eps, 0.1, kDefaultKappas, sigmas(1, 1, 2), 10);
      const SamplePlan wor =
          plan_without_replacement(eps, 0.1, kDefaultKappas, sigmas(1, 1, 2), 10, N);
      EXPECT_LE(wor.n_g, std::min<std::int64_t>(wr.n_g, N));
      EXPECT_LE(wor.n_b, std::min<std::int64_t>(wr.n_b, N));
      EXPECT_LE(wor.n_t, std::min<std::int64_t>(wr.n_t, N));
    }
  }
}

TEST(PlanValidation, RejectsBadInputs) {
  const NoiseRanges s = sigmas(1, 1, 2);
  EXPECT_THROW(plan_with_replacement(0.0, 0.1, kDefaultKappas, s, 10), std::invalid_argument);
  EXPECT_THROW(plan_with_replacement(1.2, 0.1, kDefaultKappas, s, 10), std::invalid_argument);
  EXPECT_THROW(plan_with_replacement(0.4, 0.0, kDefaultKappas, s, 10), std::invalid_argument);
  ConditionKappas zero;
  zero.g = 0.0;
  EXPECT_THROW(plan_with_replacement(0.4, 0.1, zero, s, 10), std::invalid_argument);
  EXPECT_THROW(plan_with_replacement(0.4, 0.1, kDefaultKappas, sigmas(-1, 1, 1), 10),
               std::invalid_argument);
  EXPECT_THROW(plan_with_replacement(0.4, 0.1, kDefaultKappas, s, 0), std::invalid_argument);
  EXPECT_THROW(plan_without_replacement(0.4, 0.1, kDefaultKappas, s, 10, 0), std::invalid_argument);
}

TEST(SampleIndices, FullDrawIsPermutation) {
  const std::vector<int> idx = sample_indices(12, 12, SampleScheme::WithoutReplacement, 5);
  std::vector<int> sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 12; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(SampleIndices, WithoutReplacementDistinctAndInRange) {
  const std::vector<int> idx = sample_indices(100, 30, SampleScheme::WithoutReplacement, 7);
  EXPECT_EQ(idx.size(), 30u);
  std::set<int> seen(idx.begin(), idx.end());
  EXPECT_EQ(seen.size(), 30u);
  for (int i : idx) {
    EXPECT_GE(i, 0);
    EXPECT_LT(i, 100);
  }
}

TEST(SampleIndices, SingleDrawInRange) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const SampleScheme sch : {SampleScheme::WithReplacement, SampleScheme::WithoutReplacement}) {
      const std::vector<int> idx = sample_indices(7, 1, sch, seed);
      ASSERT_EQ(idx.size(), 1u);
      EXPECT_GE(idx[0], 0);
      EXPECT_LT(idx[0], 7);
    }
  }
}

TEST(SampleIndices, ErrorsAndDeterminism) {
  EXPECT_THROW(sample_indices(5, 6, SampleScheme::WithoutReplacement, 1), std::invalid_argument);
  EXPECT_THROW(sample_indices(0, 1, SampleScheme::WithReplacement, 1), std::invalid_argument);
  EXPECT_THROW(sample_indices(5, 0, SampleScheme::WithReplacement, 1), std::invalid_argument);
  EXPECT_EQ(sample_indices(50, 10, SampleScheme::WithReplacement, 9),
            sample_indices(50, 10, SampleScheme::WithReplacement, 9));
  EXPECT_NE(sample_indices(50, 10, SampleScheme::WithReplacement, 9),
            sample_indices(50, 10, SampleScheme::WithReplacement, 10));
}

TEST(SampleIndices, InclusionFrequencyUniformWithoutReplacement) {
  // Drawing n=5 of N=20 distinct indices 1e5 times: each index appears
  // Binomial(1e5, 1/4), mean 25000, sd ~136.9; assert a 3-sigma band.
  const int trials = 100000;
  std::vector<int> count(20, 0);
  for (int trial = 0; trial < trials; ++trial)
    for (int i : sample_indices(20, 5, SampleScheme::WithoutReplacement, 1000 + trial))
      ++count[static_cast<std::size_t>(i)];
  for (int i = 0; i < 20; ++i) {
    EXPECT_GE(count[static_cast<std::size_t>(i)], 25000 - 411) << "index " << i;
    EXPECT_LE(count[static_cast<std::size_t>(i)], 25000 + 411) << "index " << i;
  }
}

TEST(SampleIndices, OccurrenceFrequencyUniformWithReplacement) {
  // 5e5 i.i.d. draws over 20 indices: per-index count Binomial(5e5, 1/20),
  // mean 25000, sd ~154.1; assert a 3-sigma band.
  const int trials = 100000;
  std::vector<int> count(20, 0);
  for (int trial = 0; trial < trials; ++trial)
    for (int i : sample_indices(20, 5, SampleScheme::WithReplacement, 5000 + trial))
      ++count[static_cast<std::size_t>(i)];
  for (int i = 0; i < 20; ++i) {
    EXPECT_GE(count[static_cast<std::size_t>(i)], 25000 - 463) << "index " << i;
    EXPECT_LE(count[static_cast<std::size_t>(i)], 25000 + 463) << "index " << i;
  }
}

TEST(EstimateDerivatives, FullBatchReproducesExactDerivatives) {
  const FiniteSumProblem p = make_cosine_sum(30, 4, 3, 0.2);
  Rng rng(8);
  const Vector x = random_gaussian_vector(4, rng);
  SamplePlan plan;
  plan.scheme = SampleScheme::WithoutReplacement;
  plan.n_g = plan.n_b = plan.n_t = 30;
  const DerivativeBundle est = estimate_derivatives(p, x, plan, 77);
  const DerivativeBundle exact = p.full(x, 3);
  EXPECT_LE((est.grad - exact.grad).norm(), 1e-12);
  EXPECT_LE(est.hess->minus(*exact.hess).frobenius_norm(), 1e-12);
  EXPECT_LE(est.third->minus(*exact.third).frobenius_norm(), 1e-12);
}

TEST(EstimateDerivatives, SingleSampleEqualsSomeComponent) {
  const FiniteSumProblem p = make_cosine_sum(10, 3, 11, 0.0);
  Rng rng(12);
  const Vector x = random_gaussian_vector(3, rng);
  SamplePlan plan;
  plan.scheme = SampleScheme::WithReplacement;
  plan.n_g = plan.n_b = plan.n_t = 1;
  const DerivativeBundle est = estimate_derivatives(p, x, plan, 123);
  bool grad_matches = false, third_matches = false;
  for (int i = 0; i < 10; ++i) {
    const DerivativeBundle c = p.component(i, x, 3);
    grad_matches = grad_matches || (est.grad - c.grad).norm() <= 1e-14;
    third_matches = third_matches || est.third->minus(*c.third).frobenius_norm() <= 1e-14;
  }
  EXPECT_TRUE(grad_matches);
  EXPECT_TRUE(third_matches);
}

TEST(EstimateDerivatives, QuadraticThirdEstimateIsZero) {
  const FiniteSumProblem p = make_quadratic_sum(25, 4, 19);
  Rng rng(20);
  const Vector x = random_gaussian_vector(4, rng);
  SamplePlan plan;
  plan.scheme = SampleScheme::WithReplacement;
  plan.n_g = plan.n_b = plan.n_t = 7;
  const DerivativeBundle est = estimate_derivatives(p, x, plan, 9);
  EXPECT_EQ(est.third->frobenius_norm(), 0.0);
}

TEST(EstimateDerivatives, DeterministicGivenSeed) {
  const FiniteSumProblem p = make_cosine_sum(40, 5, 21, 0.1);
  Rng rng(22);
  const Vector x = random_gaussian_vector(5, rng);
  SamplePlan plan;
  plan.scheme = SampleScheme::WithoutReplacement;
  plan.n_g = 11;
  plan.n_b = 7;
  plan.n_t = 5;
  const DerivativeBundle a = estimate_derivatives(p, x, plan, 31);
  const DerivativeBundle b = estimate_derivatives(p, x, plan, 31);
  const DerivativeBundle c = estimate_derivatives(p, x, plan, 32);
  EXPECT_EQ(a.grad, b.grad);
  EXPECT_EQ(a.hess->minus(*b.hess).frobenius_norm(), 0.0);
  EXPECT_NE((a.grad - c.grad).norm(), 0.0);
}

TEST(TailBound, TensorIidVacuousAtZero) {
  const TailBound b = tail_bound(TailKind::TensorIid, {5, 5, 5}, 1.0, 100);
  EXPECT_EQ(b(0.0), 1.0);
  EXPECT_TRUE(b.vacuous(0.0));
}

TEST(TailBound, FullSampleWithoutReplacementIsExact) {
  const TailBound b = tail_bound(TailKind::TensorWithoutReplacement, {3, 3, 3}, 1.0, 50, 50);
  EXPECT_EQ(b(0.5), 0.0);
  EXPECT_EQ(b(1e-9), 0.0);
  EXPECT_EQ(b(0.0), 1.0);  // at t = 0 every bound is vacuous
  const TailBound m = tail_bound(TailKind::MatrixWithoutReplacement, {4, 4}, 1.0, 20, 20);
  EXPECT_EQ(m(0.3), 0.0);
}

TEST(TailBound, MatchesFrozenLogValues) {
  // Values evaluated independently at high precision.
  const TailBound t3 = tail_bound(TailKind::TensorIid, {5, 5, 5}, 1.0, 100);
  EXPECT_NEAR(t3.log_value(30.0), 36.61034605474897006, 1e-10);
  EXPECT_EQ(t3(30.0), 1.0);  // bound value 7.94e15: vacuous

  const TailBound t2 = tail_bound(TailKind::TensorWithoutReplacement, {3, 3, 3}, 2.0, 50, 200);
  EXPECT_NEAR(t2.log_value(0.7), 20.94019853121715101, 1e-10);

  const TailBound t5 = tail_bound(TailKind::MatrixWithoutReplacement, {8, 8}, 1.5, 60, 240);
  EXPECT_NEAR(t5.log_value(0.5), 1.679692547376393260, 1e-12);
  EXPECT_EQ(t5(0.5), 1.0);

  const TailBound t6 = tail_bound(TailKind::MatrixIid, {7}, 2.0, 1);
  EXPECT_NEAR(t6.log_value(12.0), -2.554089850944686695, 1e-12);
  EXPECT_NEAR(t6(12.0), std::exp(-2.554089850944686695), 1e-13);
}

TEST(TailBound, MonotoneNonIncreasingInT) {
  const TailBound bounds[] = {
      tail_bound(TailKind::TensorIid, {4, 4, 4}, 1.5, 30),
      tail_bound(TailKind::TensorWithoutReplacement, {4, 4, 4}, 1.5, 30, 100),
      tail_bound(TailKind::MatrixWithoutReplacement, {6, 6}, 2.0, 30, 100),
      tail_bound(TailKind::MatrixIid, {6}, 2.0, 1),
  };
  for (const TailBound& b : bounds) {
    double prev = 2.0;
    for (double t = 0.0; t <= 40.0; t += 0.5) {
      const double v = b(t);
      EXPECT_LE(v, prev + 1e-15);
      prev = v;
    }
  }
}

TEST(TailBound, RejectsBadArguments) {
  EXPECT_THROW(tail_bound(TailKind::TensorIid, {}, 1.0, 10), std::invalid_argument);
  EXPECT_THROW(tail_bound(TailKind::TensorIid, {3, 0, 3}, 1.0, 10), std::invalid_argument);
  EXPECT_THROW(tail_bound(TailKind::TensorIid, {3, 3, 3}, 0.0, 10), std::invalid_argument);
  EXPECT_THROW(tail_bound(TailKind::TensorIid, {3, 3, 3}, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(tail_bound(TailKind::TensorWithoutReplacement, {3, 3, 3}, 1.0, 10, 5),
               std::invalid_argument);
}

// The accuracy requirements the plans are built to satisfy, checked
// empirically on the cosine objective at N=1000, d=10.
TEST(EmpiricalAccuracy, PlannedSizesKeepDeviationsWithinTargets) {
  const int N = 1000, d = 10;
  const double eps = 0.3, delta = 0.1;
  const FiniteSumProblem prob = make_cosine_sum(N, d, 424242, 0.0);
  const NoiseRanges sig = noise_from_lipschitz(prob.lipschitz());
  ASSERT_EQ(sig.sigma_g, 1.0);
  ASSERT_EQ(sig.sigma_b, 1.0);
  ASSERT_EQ(sig.sigma_t, 2.0);

  // At eps = 0.3 all three sizes clamp to the full population (raw values
  // 1766 / 1544 / 1714 against N = 1000), so every draw is exact and the
  // violation fraction is zero by construction.
  const SamplePlan clamped = plan_without_replacement(eps, delta, kDefaultKappas, sig, d, N);
  EXPECT_EQ(clamped.n_g, N);
  EXPECT_EQ(clamped.n_b, N);
  EXPECT_EQ(clamped.n_t, N);
  ASSERT_TRUE(clamped.exact_g && clamped.exact_b && clamped.exact_t);
  Rng rng(31337);
  const Vector x = random_gaussian_vector(d, rng);
  const DerivativeBundle exact = prob.full(x, 3);
  const DerivativeBundle est = estimate_derivatives(prob, x, clamped, 5);
  EXPECT_LE((est.grad - exact.grad).norm(), 1e-12);
  EXPECT_LE(est.hess->minus(*exact.hess).frobenius_norm(), 1e-12);
  EXPECT_LE(est.third->minus(*exact.third).frobenius_norm(), 1e-12);

  // At eps = 0.9 the gradient/Hessian sizes (912 / 877) genuinely sub-sample.
  // Violation counting uses the exact Hessian operator norm and the tensor
  // Frobenius norm (>= operator norm, so it can only overcount violations).
  const double eps_loose = 0.9;
  const SamplePlan plan = plan_without_replacement(eps_loose, delta, kDefaultKappas, sig, d, N);
  EXPECT_EQ(plan.n_g, 912);
  EXPECT_EQ(plan.n_b, 877);
  EXPECT_TRUE(plan.exact_t);  // tensor size clamps (raw 1485) even here
  const double target_g = kDefaultKappas.g * eps_loose;
  const double target_b = kDefaultKappas.b * std::pow(eps_loose, 2.0 / 3.0);
  const int trials = 2000;
  int viol_g = 0, viol_b = 0;
  for (int trial = 0; trial < trials; ++trial) {
    const std::uint64_t seed = derive_seed(999, static_cast<std::uint64_t>(trial));
    const std::vector<int> sg =
        sample_indices(N, plan.n_g, plan.scheme, derive_seed(seed, 0));
    const std::vector<int> sb =
        sample_indices(N, plan.n_b, plan.scheme, derive_seed(seed, 1));
    const Vector ghat = mean_over_indices(prob, sg, x, 1).grad;
    const SymMatrix bhat = *mean_over_indices(prob, sb, x, 2).hess;
    if ((ghat - exact.grad).norm() > target_g) ++viol_g;
    if (sym_operator_norm(bhat.minus(*exact.hess)) > target_b) ++viol_b;
  }
  EXPECT_LE(static_cast<double>(viol_g) / trials, delta);
  EXPECT_LE(static_cast<double>(viol_b) / trials, delta);
}
