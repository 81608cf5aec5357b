// Tests for the adaptive outer loop: the ratio/acceptance mechanics, the
// sigma update rules, the analysis-inequality instrumentation, and the
// closed-form budget formulas (the latter pinned against values computed
// independently at 40-digit precision).

#include "stm/driver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "stm/problems.hpp"
#include "test_util.hpp"

namespace stm {
namespace {

StmConfig tight_quadratic_config() {
  StmConfig cfg;
  cfg.eps1 = 1e-8;
  cfg.eps2 = 1e-12;
  cfg.eps3 = 1e-12;
  cfg.max_iters = 60;
  cfg.sampling = SamplingMode::FullBatch;
  cfg.mode = RunMode::Verify;
  return cfg;
}

// A one-component problem f(x) = x1^3 / 6 on R^2.  Its quartic model at the
// origin is exactly the rank-one pure-third-order instance on which the
// subsolver provably cannot meet the acceptance test when zeta is wide
// enough to keep the step direction feasible at the model minimizer, so the
// driver's budget-exhaustion path is exercised deterministically.
FiniteSumProblem make_cubic_ridge() {
  const int d = 2;
  FiniteSumProblem::ComponentFn comp = [d](int, const Vector& x, int order) {
    DerivativeBundle out;
    out.value = x[0] * x[0] * x[0] / 6.0;
    if (order >= 1) {
      out.grad = Vector::Zero(d);
      out.grad[0] = 0.5 * x[0] * x[0];
    }
    if (order >= 2) {
      SymMatrix h(d);
      h.set(0, 0, x[0]);
      out.hess = h;
    }
    if (order >= 3) {
      SymTensor3 t(d);
      t.set(0, 0, 0, 1.0);
      out.third = t;
    }
    return out;
  };
  LipschitzConstants lip;
  lip.f = 170.0;
  lip.g = 50.0;
  lip.b = 10.0;
  lip.t = 1.0;
  return FiniteSumProblem("cubic_ridge", 1, d, lip, -1e3, 10.0, std::move(comp));
}

TEST(SigmaMaxFormula, VacuousWhenEta2ReachesOne) {
  ConditionKappas small;
  small.g = small.b = small.t = 1e-3;
  const SigmaMaxBound b = sigma_max_formula(1.0, small, 1e-4, 0.1, 1.0, 4.0);
  EXPECT_TRUE(b.vacuous);
  EXPECT_TRUE(std::isinf(b.value));
}

TEST(SigmaMaxFormula, VacuousAtDefaultAccuracyCoefficients) {
  // 8 kappa_g eps = 2 eps already exceeds (1 - eta2) eps for any eta2 > 0,
  // so the default coefficients can never make the denominator positive.
  for (double eps : {1e-3, 0.1, 0.5, 1.0}) {
    const SigmaMaxBound b = sigma_max_formula(eps, ConditionKappas{}, 0.0, 0.1, 0.9, 4.0);
    EXPECT_TRUE(b.vacuous) << "eps = " << eps;
  }
}

TEST(SigmaMaxFormula, MatchesHighPrecisionOracle) {
  // eps = 1, kappas = (1e-3, 1e-3, 1e-3), L_t = 1e-4, theta = 0.1,
  // eta2 = 0.5, gamma3 = 4:
  //   xi        = 0.0016833333333333333333...
  //   bound     = 0.0538666666666666666667...
  ConditionKappas small;
  small.g = small.b = small.t = 1e-3;
  const SigmaMaxBound b = sigma_max_formula(1.0, small, 1e-4, 0.1, 0.5, 4.0);
  ASSERT_FALSE(b.vacuous);
  EXPECT_NEAR(b.value, 0.053866666666666666667, 1e-15);
}

TEST(SigmaMaxFormula, MonotoneInEachAccuracyCoefficient) {
  ConditionKappas base;
  base.g = base.b = base.t = 1e-3;
  const double v0 = sigma_max_formula(1.0, base, 1e-4, 0.1, 0.5, 4.0).value;
  for (int which = 0; which < 3; ++which) {
    ConditionKappas k = base;
    (which == 0 ? k.g : which == 1 ? k.b : k.t) *= 2.0;
    const SigmaMaxBound b = sigma_max_formula(1.0, k, 1e-4, 0.1, 0.5, 4.0);
    ASSERT_FALSE(b.vacuous);
    EXPECT_GT(b.value, v0) << "coefficient " << which;
  }
}

TEST(SigmaMaxFormula, RejectsBadArguments) {
  EXPECT_THROW(sigma_max_formula(0.0, ConditionKappas{}, 1.0, 0.1, 0.9, 4.0),
               std::invalid_argument);
  EXPECT_THROW(sigma_max_formula(0.5, ConditionKappas{}, -1.0, 0.1, 0.9, 4.0),
               std::invalid_argument);
  EXPECT_THROW(sigma_max_formula(0.5, ConditionKappas{}, 1.0, 0.1, 0.9, 0.0),
               std::invalid_argument);
}

TEST(IterationBudget, MatchesHighPrecisionOracle) {
  // eps = (0.01, 0.1, 0.5), f0 - f_low = 3, sigma_max = 2, L_t = 4,
  // theta = 0.1, eta1 = 0.1, sigma_min = 1e-8, gamma1 = 0.5, gamma2 = 2,
  // sigma0 = 0.8.  40-digit evaluation gives
  //   kappa_s = 4.35, kappa_s2 = 8.35, kappa_s3 = 5.1, kappa_max = 139.445,
  //   K_succ = 1553391251767522, K = 3106782503535046.
  BudgetConstants c;
  c.sigma_max = 2.0;
  c.L_t = 4.0;
  c.theta = 0.1;
  c.eta1 = 0.1;
  c.sigma_min = 1e-8;
  c.gamma1 = 0.5;
  c.gamma2 = 2.0;
  c.sigma0 = 0.8;
  const IterationBudget b = iteration_budget(0.01, 0.1, 0.5, 3.0, 0.0, c);
  EXPECT_NEAR(b.kappa_s, 4.35, 1e-12);
  EXPECT_NEAR(b.kappa_s2, 8.35, 1e-12);
  EXPECT_NEAR(b.kappa_s3, 5.1, 1e-12);
  EXPECT_NEAR(b.kappa_max, 139.445, 1e-10);
  EXPECT_NEAR(b.k_succ, 1553391251767522.0, 2.0);
  EXPECT_NEAR(b.k_total, 3106782503535046.0, 4.0);
}

TEST(IterationBudget, ZeroGapGivesZeroSuccessBudget) {
  BudgetConstants c;
  c.sigma_max = 2.0;
  c.L_t = 4.0;
  c.theta = 0.1;
  c.eta1 = 0.1;
  c.sigma_min = 1e-8;
  c.gamma1 = 0.5;
  c.gamma2 = 2.0;
  c.sigma0 = 0.8;
  const IterationBudget b = iteration_budget(0.01, 0.1, 0.5, 1.25, 1.25, c);
  EXPECT_EQ(b.k_succ, 0.0);
}

TEST(IterationBudget, HalvingEps3ScalesItsTermSixteenfold) {
  // With eps3 small enough to dominate the tolerance term, halving it must
  // multiply K_succ by 2^4 (the ceilings are negligible at this magnitude).
  BudgetConstants c;
  c.sigma_max = 1.0;
  c.L_t = 1.0;
  c.theta = 0.1;
  c.eta1 = 0.1;
  c.sigma_min = 1e-8;
  c.gamma1 = 0.5;
  c.gamma2 = 2.0;
  c.sigma0 = 1.0;
  const IterationBudget coarse = iteration_budget(0.9, 0.9, 0.2, 5.0, 0.0, c);
  const IterationBudget fine = iteration_budget(0.9, 0.9, 0.1, 5.0, 0.0, c);
  EXPECT_NEAR(fine.k_succ / coarse.k_succ, 16.0, 1e-9);
}

TEST(IterationBudget, InfiniteSigmaMaxPropagates) {
  BudgetConstants c;
  c.sigma_max = std::numeric_limits<double>::infinity();
  c.L_t = 1.0;
  c.theta = 0.1;
  c.eta1 = 0.1;
  c.sigma_min = 1e-8;
  c.gamma1 = 0.5;
  c.gamma2 = 2.0;
  c.sigma0 = 1.0;
  const IterationBudget b = iteration_budget(0.1, 0.1, 0.1, 5.0, 0.0, c);
  EXPECT_TRUE(std::isinf(b.k_succ));
  EXPECT_TRUE(std::isinf(b.k_total));
}

TEST(StmConfig, RejectsBadOrderings) {
  const auto expect_rejected = [](auto mutate, const std::string& field) {
    StmConfig cfg;
    mutate(cfg);
    try {
      cfg.validate();
      FAIL() << "expected rejection for " << field;
    } catch (const std::invalid_argument& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  expect_rejected([](StmConfig& c) { c.gamma1 = 1.0; }, "gamma1");
  expect_rejected([](StmConfig& c) { c.gamma2 = 1.0; }, "gamma2");
  expect_rejected([](StmConfig& c) { c.gamma3 = c.gamma2; }, "gamma3");
  expect_rejected([](StmConfig& c) { c.eta1 = 0.0; }, "eta1");
  expect_rejected([](StmConfig& c) { c.eta2 = c.eta1; }, "eta2");
  expect_rejected([](StmConfig& c) { c.eta2 = 1.0; }, "eta2");
  expect_rejected([](StmConfig& c) { c.sigma0 = 0.0; }, "sigma0");
  expect_rejected([](StmConfig& c) { c.sigma_min = -1.0; }, "sigma_min");
  expect_rejected([](StmConfig& c) { c.theta = 0.0; }, "theta");
  expect_rejected([](StmConfig& c) { c.zeta = -0.5; }, "zeta");
  expect_rejected([](StmConfig& c) { c.eps2 = 0.0; }, "tolerances");
  expect_rejected([](StmConfig& c) { c.max_iters = 0; }, "max_iters");
  expect_rejected([](StmConfig& c) { c.subsolver_budget = 0; }, "subsolver_budget");
  expect_rejected(
      [](StmConfig& c) {
        c.sampling = SamplingMode::WithReplacement;
        c.delta = 0.0;
      },
      "delta");

  StmConfig ok;
  EXPECT_NO_THROW(ok.validate());
}

TEST(Run, QuadraticFullBatchConvergesToCentroid) {
  const FiniteSumProblem problem = make_quadratic_sum(30, 5, 42);
  const Vector centroid = -problem.full(Vector::Zero(5), 1).grad;
  const RunReport report = run(problem, tight_quadratic_config());

  EXPECT_TRUE(report.converged);
  EXPECT_FALSE(report.heuristic_termination);
  EXPECT_LE(report.terminal_chi1, 1e-8);
  EXPECT_EQ(report.terminal_chi2, 0.0);  // Hessian is the identity
  EXPECT_EQ(report.terminal_chi3, 0.0);  // third derivative vanishes
  EXPECT_LT((report.terminal_x - centroid).norm(), 1e-7);
  EXPECT_NEAR(report.terminal_f, problem.f_low(), 1e-12);

  ASSERT_GT(report.iterations, 0);
  EXPECT_EQ(report.unsuccessful, 0);  // the model is exact, so rho = 1 throughout
  for (const IterationRecord& rec : report.records) {
    EXPECT_TRUE(rec.accepted);
    EXPECT_NEAR(rec.rho, 1.0, 1e-6);
  }
}

TEST(Run, VerySuccessfulIterationsTakeTheShrinkEndpoint) {
  const FiniteSumProblem problem = make_quadratic_sum(30, 5, 42);
  const StmConfig cfg = tight_quadratic_config();
  const RunReport report = run(problem, cfg);
  ASSERT_GT(report.iterations, 0);
  for (const IterationRecord& rec : report.records) {
    ASSERT_EQ(rec.success, SuccessClass::VerySuccessful);  // rho ~ 1 > eta2
    EXPECT_EQ(rec.sigma_next, std::max(cfg.sigma_min, cfg.gamma1 * rec.sigma));
  }
}

TEST(Run, SuccessClassConsistentWithThresholds) {
  StmConfig cfg;
  cfg.sigma0 = 1e-6;  // tiny initial weight provokes early rejections
  cfg.sigma_min = 1e-8;
  cfg.max_iters = 120;
  const FiniteSumProblem problem = make_cosine_sum(40, 4, 7, 0.5);
  Vector x0(4);
  x0 << 1.3, -0.7, 2.1, 0.4;
  const RunReport report = run(problem, cfg, x0);

  ASSERT_GT(report.iterations, 0);
  for (const IterationRecord& rec : report.records) {
    if (rec.subsolver_status != SubsolveStatus::Converged || std::isnan(rec.rho)) continue;
    if (rec.rho > cfg.eta2) {
      EXPECT_EQ(rec.success, SuccessClass::VerySuccessful);
    } else if (rec.rho >= cfg.eta1) {
      EXPECT_EQ(rec.success, SuccessClass::Successful);
    } else {
      EXPECT_EQ(rec.success, SuccessClass::Unsuccessful);
    }
    EXPECT_EQ(rec.accepted, rec.success != SuccessClass::Unsuccessful);
  }
}

TEST(Run, RejectedIterationKeepsIterateAndGrowsSigma) {
  // f(x) = cos(3 x1) + 0.025 |x|^2 started at negative curvature with a tiny
  // initial weight: the model's cubic term promises an enormous decrease the
  // bounded cosine cannot deliver, so the first trial step must be rejected
  // and sigma must escalate until steps shrink to the Taylor radius.
  const int d = 2;
  FiniteSumProblem::ComponentFn comp = [d](int, const Vector& x, int order) {
    const double u = 3.0 * x[0];
    DerivativeBundle out;
    out.value = std::cos(u) + 0.025 * x.squaredNorm();
    if (order >= 1) {
      out.grad = 0.05 * x;
      out.grad[0] += -3.0 * std::sin(u);
    }
    if (order >= 2) {
      SymMatrix h(d);
      h.add_scaled_identity(0.05);
      h.set(0, 0, h(0, 0) - 9.0 * std::cos(u));
      out.hess = std::move(h);
    }
    if (order >= 3) {
      SymTensor3 t(d);
      t.set(0, 0, 0, 27.0 * std::sin(u));
      out.third = t;
    }
    return out;
  };
  const FiniteSumProblem problem("stiff_cosine", 1, d,
                                 LipschitzConstants{3.5, 3.5, 9.05, 27.0}, -1.0, 10.0,
                                 std::move(comp));
  StmConfig cfg;
  cfg.sigma0 = 1e-6;
  cfg.sigma_min = 1e-8;
  cfg.max_iters = 120;
  Vector x0(2);
  x0 << 0.3, 0.0;
  const RunReport report = run(problem, cfg, x0);

  bool saw_rejection = false;
  for (int i = 0; i < report.iterations; ++i) {
    const IterationRecord& rec = report.records[static_cast<std::size_t>(i)];
    if (rec.accepted) continue;
    saw_rejection = true;
    EXPECT_TRUE(std::isnan(rec.rho) || rec.rho < cfg.eta1 ||
                rec.subsolver_status == SubsolveStatus::MaxIter);
    EXPECT_EQ(rec.sigma_next, cfg.gamma2 * rec.sigma);
    if (i + 1 < report.iterations) {
      // The iterate did not move: the next iteration sees the same value.
      EXPECT_EQ(report.records[static_cast<std::size_t>(i + 1)].f_value, rec.f_value);
    }
  }
  EXPECT_TRUE(saw_rejection);
  EXPECT_GT(report.unsuccessful, 0);
  // Once the weight has grown enough, progress resumes and the run finishes.
  EXPECT_GT(report.successful, 0);
  EXPECT_TRUE(report.converged);
}

TEST(Run, VerifyModeInstrumentationIsClean) {
  StmConfig cfg;
  cfg.eps1 = 1e-3;
  cfg.eps2 = 1e-2;
  cfg.eps3 = 1e-1;
  cfg.max_iters = 200;
  cfg.seed = 3;
  const FiniteSumProblem problem = make_cosine_sum(60, 6, 11, 0.5);
  Vector x0(6);
  x0 << 1.0, -1.5, 0.8, 2.2, -0.6, 1.1;
  const RunReport report = run(problem, cfg, x0);

  EXPECT_TRUE(report.converged);
  EXPECT_EQ(report.cond1_violations, 0);  // full batch: estimates are exact
  EXPECT_EQ(report.cond1_checked, report.iterations);

  EXPECT_GT(report.lemma_model_decrease.checked, 0);
  EXPECT_EQ(report.lemma_model_decrease.violations, 0);
  EXPECT_GT(report.lemma_model_decrease.min_margin, 0.0);  // strict inequality

  EXPECT_EQ(report.lemma_step_chi1.violations, 0);
  EXPECT_EQ(report.lemma_step_chi2.violations, 0);
  EXPECT_EQ(report.lemma_step_chi3.violations, 0);

  EXPECT_EQ(report.counting.checked, report.iterations);
  EXPECT_EQ(report.counting.violations, 0);

  // Monotone descent with equality only on rejections.
  for (int i = 0; i + 1 < report.iterations; ++i) {
    const IterationRecord& cur = report.records[static_cast<std::size_t>(i)];
    const IterationRecord& nxt = report.records[static_cast<std::size_t>(i + 1)];
    if (cur.accepted) {
      EXPECT_LT(nxt.f_value, cur.f_value);
    } else {
      EXPECT_EQ(nxt.f_value, cur.f_value);
    }
  }

  // Bookkeeping identities and the budget check under clean accuracy.
  EXPECT_EQ(report.successful + report.unsuccessful, report.iterations);
  EXPECT_TRUE(report.sigma_max_bound.vacuous);  // default coefficients
  EXPECT_EQ(report.sigma_max_used, report.sigma_observed_max);
  ASSERT_TRUE(std::isfinite(report.budget.k_total));
  EXPECT_LE(static_cast<double>(report.iterations), report.budget.k_total);
}

TEST(Run, SubsolverBudgetExhaustionIsCountedUnsuccessful) {
  StmConfig cfg;
  cfg.zeta = 0.5;   // wide near-kernel keeps the model's acceptance test unattainable
  cfg.theta = 0.1;
  cfg.eps3 = 0.5;   // third-order tolerance below the model's measure at the origin
  cfg.eps1 = 1e-3;
  cfg.eps2 = 1e-2;
  cfg.max_iters = 4;
  cfg.subsolver_budget = 150;
  const FiniteSumProblem problem = make_cubic_ridge();
  const RunReport report = run(problem, cfg);

  ASSERT_GT(report.iterations, 0);
  const IterationRecord& first = report.records.front();
  EXPECT_EQ(first.subsolver_status, SubsolveStatus::MaxIter);
  // The model is an exact Taylor expansion here, so the ratio itself is
  // excellent; the budget-exhaustion rule must still reject and escalate.
  EXPECT_EQ(first.success, SuccessClass::Unsuccessful);
  EXPECT_FALSE(first.accepted);
  EXPECT_EQ(first.sigma_next, cfg.gamma2 * first.sigma);
  EXPECT_GT(report.unsuccessful, 0);
}

TEST(Run, SampledProductionRunReportsPlanAndHeuristicStop) {
  StmConfig cfg;
  cfg.mode = RunMode::Production;
  cfg.sampling = SamplingMode::WithReplacement;
  cfg.eps1 = 0.3;
  cfg.eps2 = 0.45;
  cfg.eps3 = 0.7;
  cfg.delta = 0.5;
  cfg.max_iters = 80;
  cfg.seed = 5;
  const FiniteSumProblem problem = make_quadratic_sum(50, 3, 9);
  const RunReport report = run(problem, cfg);

  // The recorded plan must match the standalone computation.
  const SamplePlan plan = plan_with_replacement(cfg.eps_combined(), cfg.delta, cfg.kappas,
                                                noise_from_lipschitz(problem.lipschitz()), 3);
  EXPECT_EQ(report.plan_n_g, plan.n_g);
  EXPECT_EQ(report.plan_n_b, plan.n_b);
  EXPECT_EQ(report.plan_n_t, plan.n_t);
  ASSERT_GT(report.iterations, 0);
  EXPECT_EQ(report.records.front().n_g, plan.n_g);

  EXPECT_TRUE(report.converged);
  EXPECT_TRUE(report.heuristic_termination);  // production mode stops on proxies
  EXPECT_EQ(report.cond1_checked, 0);         // no exact derivatives consulted
}

TEST(Run, SeededUniformSigmaRuleStaysInsideIntervals) {
  StmConfig cfg;
  cfg.sigma_rule = SigmaUpdateRule::SeededUniform;
  cfg.sigma0 = 1e-4;
  cfg.max_iters = 100;
  cfg.seed = 13;
  const FiniteSumProblem problem = make_cosine_sum(40, 4, 7, 0.5);
  Vector x0(4);
  x0 << -2.0, 1.4, 0.9, -1.2;
  const RunReport report = run(problem, cfg, x0);

  ASSERT_GT(report.iterations, 0);
  for (const IterationRecord& rec : report.records) {
    if (rec.success == SuccessClass::VerySuccessful) {
      EXPECT_GE(rec.sigma_next, std::max(cfg.sigma_min, cfg.gamma1 * rec.sigma));
      EXPECT_LE(rec.sigma_next, rec.sigma);
    } else if (rec.success == SuccessClass::Successful) {
      EXPECT_GE(rec.sigma_next, rec.sigma);
      EXPECT_LE(rec.sigma_next, cfg.gamma2 * rec.sigma);
    } else {
      EXPECT_GE(rec.sigma_next, cfg.gamma2 * rec.sigma);
      EXPECT_LE(rec.sigma_next, cfg.gamma3 * rec.sigma);
    }
  }
  EXPECT_EQ(report.counting.violations, 0);

  // Bit-identical replay from the same seed.
  const RunReport again = run(problem, cfg, x0);
  ASSERT_EQ(again.iterations, report.iterations);
  for (int i = 0; i < report.iterations; ++i) {
    EXPECT_EQ(again.records[static_cast<std::size_t>(i)].sigma_next,
              report.records[static_cast<std::size_t>(i)].sigma_next);
  }
}

TEST(Run, DeterministicAcrossRepeatedSampledRuns) {
  StmConfig cfg;
  cfg.mode = RunMode::Production;
  cfg.sampling = SamplingMode::WithoutReplacement;
  cfg.eps1 = 0.3;
  cfg.eps2 = 0.45;
  cfg.eps3 = 0.7;
  cfg.delta = 0.3;
  cfg.max_iters = 40;
  cfg.seed = 21;
  const FiniteSumProblem problem = make_cosine_sum(200, 4, 3, 0.5);
  Vector x0(4);
  x0 << 0.9, -1.1, 1.7, -0.4;

  const RunReport a = run(problem, cfg, x0);
  const RunReport b = run(problem, cfg, x0);
  ASSERT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.terminal_f, b.terminal_f);
  EXPECT_TRUE(a.terminal_x == b.terminal_x);
  for (int i = 0; i < a.iterations; ++i) {
    const auto& ra = a.records[static_cast<std::size_t>(i)];
    const auto& rb = b.records[static_cast<std::size_t>(i)];
    EXPECT_TRUE(ra.rho == rb.rho || (std::isnan(ra.rho) && std::isnan(rb.rho)));
    EXPECT_EQ(ra.step_norm, rb.step_norm);
    EXPECT_EQ(ra.chi3, rb.chi3);
  }
}

TEST(Run, AlreadyCriticalStartTerminatesImmediately) {
  // The cosine problem's origin is exactly critical (zero gradient, positive
  // semidefinite Hessian, vanishing third derivative), so a run started
  // there must stop before doing any work.
  const FiniteSumProblem problem = make_cosine_sum(40, 4, 7, 0.5);
  StmConfig cfg;
  const RunReport report = run(problem, cfg);
  EXPECT_TRUE(report.converged);
  EXPECT_EQ(report.iterations, 0);
  EXPECT_EQ(report.terminal_chi1, 0.0);
  EXPECT_EQ(report.terminal_chi2, 0.0);
  EXPECT_EQ(report.terminal_chi3, 0.0);
  EXPECT_EQ(report.terminal_f, report.initial_f);
}

TEST(Run, StartingPointPropagatesAndBadDimensionThrows) {
  const FiniteSumProblem problem = make_quadratic_sum(30, 5, 42);
  StmConfig cfg = tight_quadratic_config();
  Vector x0 = Vector::Constant(5, 2.5);
  const RunReport report = run(problem, cfg, x0);
  ASSERT_GT(report.iterations, 0);
  EXPECT_EQ(report.records.front().f_value, problem.full(x0, 0).value);
  EXPECT_EQ(report.initial_f, problem.full(x0, 0).value);

  EXPECT_THROW(run(problem, cfg, Vector::Zero(4)), std::invalid_argument);
}

TEST(Run, NonFiniteObjectiveAborts) {
  const int d = 2;
  FiniteSumProblem::ComponentFn comp = [d](int, const Vector& x, int order) {
    DerivativeBundle out;
    // Finite at the origin, NaN anywhere else: the first accepted trial
    // point trips the abort.
    out.value = x.norm() > 1e-12 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
    if (order >= 1) out.grad = Vector::Constant(d, 1.0);
    if (order >= 2) out.hess = SymMatrix::identity(d);
    if (order >= 3) out.third = SymTensor3(d);
    return out;
  };
  const FiniteSumProblem problem("nan_trap", 1, d, LipschitzConstants{1, 1, 1, 1}, -1.0, 10.0,
                                 std::move(comp));
  StmConfig cfg;
  cfg.max_iters = 5;
  EXPECT_THROW(run(problem, cfg), std::runtime_error);
}

TEST(Run, InvalidConfigurationRejectedBeforeWork) {
  const FiniteSumProblem problem = make_quadratic_sum(10, 3, 1);
  StmConfig cfg;
  cfg.eta2 = 0.05;  // below eta1
  EXPECT_THROW(run(problem, cfg), std::invalid_argument);
}

}  // namespace
}  // namespace stm
