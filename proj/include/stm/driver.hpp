#pragma once

// Adaptive outer loop of the sub-sampled fourth-order regularized optimizer.
//
// Each iteration builds the local quartic model from derivative estimates
// (full-batch or sub-sampled), asks the subsolver for a trial step, applies
// the ratio acceptance test
//     rho = (f(x) - f(x + s)) / (f(x) - phi(s)),
// updates the regularization weight sigma by the very-successful /
// successful / unsuccessful rule, and instruments every inequality the
// method's analysis promises: the per-step model-decrease bound, the three
// step-length lower bounds tied to the criticality measures at the trial
// point, the successful/unsuccessful counting bound, and the closed-form
// iteration budgets.  Function values entering rho are always exact (a full
// pass over the finite sum); sampling only affects the model derivatives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stm/criticality.hpp"
#include "stm/linalg.hpp"
#include "stm/model.hpp"
#include "stm/problems.hpp"
#include "stm/rng.hpp"
#include "stm/sampling.hpp"
#include "stm/subsolver.hpp"

namespace stm {

enum class SuccessClass { VerySuccessful, Successful, Unsuccessful };

inline std::string to_string(SuccessClass c) {
  switch (c) {
    case SuccessClass::VerySuccessful: return "very_successful";
    case SuccessClass::Successful: return "successful";
    case SuccessClass::Unsuccessful: return "unsuccessful";
  }
  return "unsuccessful";
}

// Verify mode evaluates criticality and the analysis inequalities on exact
// derivatives; production mode terminates on sampled proxies and marks the
// stop heuristic in the report.
enum class RunMode { Verify, Production };

inline std::string to_string(RunMode m) {
  return m == RunMode::Verify ? "verify" : "production";
}

enum class SamplingMode { FullBatch, WithoutReplacement, WithReplacement };

inline std::string to_string(SamplingMode m) {
  switch (m) {
    case SamplingMode::FullBatch: return "full_batch";
    case SamplingMode::WithoutReplacement: return "without_replacement";
    case SamplingMode::WithReplacement: return "with_replacement";
  }
  return "full_batch";
}

// The sigma update is specified on intervals; the deterministic rule picks
// reproducible endpoints (max(sigma_min, gamma1*sigma) / sigma / gamma2*sigma)
// and the seeded rule draws uniformly inside each interval.
enum class SigmaUpdateRule { DeterministicEndpoints, SeededUniform };

inline std::string to_string(SigmaUpdateRule r) {
  return r == SigmaUpdateRule::DeterministicEndpoints ? "deterministic_endpoints"
                                                      : "seeded_uniform";
}

struct StmConfig {
  double gamma1 = 0.5;    // sigma shrink factor, in (0, 1)
  double gamma2 = 2.0;    // sigma growth factor, > 1
  double gamma3 = 4.0;    // upper growth factor, > gamma2
  double eta1 = 0.1;      // acceptance threshold, in (0, 1)
  double eta2 = 0.9;      // very-successful threshold, in (eta1, 1)
  double sigma0 = 1.0;    // initial regularization weight
  double sigma_min = 1e-8;
  double theta = 0.1;     // subsolver acceptance constant
  double zeta = 0.1;      // near-kernel width for third-order measures
  double eps1 = 1e-3;     // gradient-norm tolerance
  double eps2 = 1e-2;     // negative-curvature tolerance
  double eps3 = 1e-1;     // third-order tolerance
  int max_iters = 200;
  std::uint64_t seed = 0;
  SamplingMode sampling = SamplingMode::FullBatch;
  double delta = 0.1;           // sample-plan failure probability
  ConditionKappas kappas{};     // accuracy coefficients entering the plans
  RunMode mode = RunMode::Verify;
  SigmaUpdateRule sigma_rule = SigmaUpdateRule::DeterministicEndpoints;
  int subsolver_budget = 500;   // model-gradient evaluations per subproblem
  int chi_restarts = 16;        // multi-start budget for third-order measures

  // Combined tolerance entering the sample plans and the sigma ceiling.
  double eps_combined() const {
    return std::min(eps1, std::min(std::pow(eps2, 1.5), eps3 * eps3 * eps3));
  }

  // Throws std::invalid_argument naming the offending field.  Called by
  // run() before any work, so no invalid configuration reaches the loop.
  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("StmConfig: " + msg); };
    if (!(gamma1 > 0.0) || !(gamma1 < 1.0)) fail("gamma1 must be in (0, 1)");
    if (!(gamma2 > 1.0)) fail("gamma2 must be > 1");
    if (!(gamma3 > gamma2)) fail("gamma3 must be > gamma2");
    if (!(eta1 > 0.0)) fail("eta1 must be positive");
    if (!(eta2 > eta1)) fail("eta2 must be > eta1");
    if (!(eta2 < 1.0)) fail("eta2 must be < 1");
    if (!(sigma0 > 0.0)) fail("sigma0 must be positive");
    if (!(sigma_min > 0.0)) fail("sigma_min must be positive");
    if (!(theta > 0.0)) fail("theta must be positive");
    if (!(zeta >= 0.0)) fail("zeta must be non-negative");
    if (!(eps1 > 0.0) || !(eps2 > 0.0) || !(eps3 > 0.0)) fail("tolerances must be positive");
    if (max_iters < 1) fail("max_iters must be >= 1");
    if (sampling != SamplingMode::FullBatch) {
      if (!(delta > 0.0) || delta > 1.0) fail("delta must be in (0, 1]");
      if (!(eps_combined() <= 1.0)) fail("combined tolerance must be <= 1 for sampled runs");
    }
    if (subsolver_budget < 1) fail("subsolver_budget must be >= 1");
    if (chi_restarts < 1) fail("chi_restarts must be >= 1");
  }
};

struct IterationRecord {
  int k = 0;
  double sigma = 0.0;        // weight in force when the model was built
  double f_value = 0.0;      // exact f(x_k)
  double step_norm = 0.0;    // |s_k|
  // Ratio of achieved to model decrease; NaN when the model decrease was
  // below the degeneracy guard and the ratio was never formed.
  double rho = std::numeric_limits<double>::quiet_NaN();
  SuccessClass success = SuccessClass::Unsuccessful;
  bool accepted = false;
  // Criticality at x_k: exact derivatives in verify mode, sampled estimates
  // in production mode.
  double chi1 = 0.0;
  double chi2 = 0.0;
  double chi3 = 0.0;
  double model_decrease = 0.0;  // phi(0) - phi(s_k), third-order part only
  std::int64_t n_g = 0;         // sample sizes used for g / B / T
  std::int64_t n_b = 0;
  std::int64_t n_t = 0;
  SubsolveStatus subsolver_status = SubsolveStatus::MaxIter;
  int subsolver_iterations = 0;
  // Whether the sampled derivatives met the accuracy condition against exact
  // derivatives (verify mode only; trivially true for full batch).
  bool cond1_checked = false;
  bool cond1_held = false;
  double sigma_next = 0.0;  // weight handed to the next iteration
};

// Tally for one analysis inequality: how often its guard held, how often the
// inequality failed, and the worst margin (LHS - RHS) seen.
struct InequalityTally {
  long long checked = 0;
  long long violations = 0;
  double min_margin = std::numeric_limits<double>::infinity();

  void record(double margin, double tolerance) {
    ++checked;
    min_margin = std::min(min_margin, margin);
    if (margin < -tolerance) ++violations;
  }
};

struct SigmaMaxBound {
  double value = std::numeric_limits<double>::infinity();
  bool vacuous = true;  // set when the closed form degenerates at this eps
};

struct BudgetConstants {
  double sigma_max = 0.0;
  double L_t = 0.0;
  double theta = 0.0;
  double eta1 = 0.0;
  double sigma_min = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double sigma0 = 0.0;
};

struct IterationBudget {
  double kappa_s = 0.0;
  double kappa_s2 = 0.0;
  double kappa_s3 = 0.0;
  double kappa_max = 0.0;
  double k_succ = std::numeric_limits<double>::infinity();   // successful-iteration budget
  double k_total = std::numeric_limits<double>::infinity();  // total-iteration budget
};

struct RunReport {
  std::string problem;
  StmConfig config;
  std::vector<IterationRecord> records;
  int iterations = 0;            // records.size()
  long long successful = 0;      // |S|
  long long unsuccessful = 0;    // |U|
  bool converged = false;
  bool heuristic_termination = false;  // production mode stopped on proxies
  Vector terminal_x;
  double terminal_f = 0.0;
  double terminal_chi1 = 0.0;
  double terminal_chi2 = 0.0;
  double terminal_chi3 = 0.0;
  double initial_f = 0.0;
  double sigma_final = 0.0;
  double sigma_observed_max = 0.0;
  std::int64_t plan_n_g = 0;
  std::int64_t plan_n_b = 0;
  std::int64_t plan_n_t = 0;
  // Analysis instrumentation.
  InequalityTally lemma_model_decrease;  // accepted steps: decrease > (sigma/4)|s|^4
  InequalityTally lemma_step_chi1;       // |s|^3 >= (chi1(x+s) - eps1/2) / kappa_k
  InequalityTally lemma_step_chi2;       // |s|^2 >= (chi2(x+s) - eps2/2) / kappa_k2
  InequalityTally lemma_step_chi3;       // |s|   >= (chi3(x+s) - eps3/2) / kappa_k3
  InequalityTally counting;              // total <= slope*|S| + offset at every k
  long long cond1_checked = 0;
  long long cond1_violations = 0;
  // Budget formulas evaluated at the run's tolerances.
  double eps_combined = 0.0;
  SigmaMaxBound sigma_max_bound;  // closed-form ceiling (often vacuous)
  double sigma_max_used = 0.0;    // value the budgets were evaluated with
  IterationBudget budget;
  double counting_slope = 0.0;    // 1 + |log gamma1| / log gamma2
  double counting_offset = 0.0;   // log(sigma_max_used / sigma0) / log gamma2
};

// Closed-form ceiling on the regularization weight: above the returned value
// every iteration must be very successful, so sigma can never be driven
// higher than gamma3 times it.  The inner bound is
//   sigma_sup = max(4 xi / (1 - eta2),  xi (4 L_t + 2 + 8 theta) / ((1 - eta2) eps - 8 xi)),
//   xi = eps kappa_g + eps^(2/3) kappa_b / 2 + (eps^(1/3) kappa_t + L_t) / 6,
// and the function returns gamma3 * sigma_sup.  When the denominator
// (1 - eta2) eps - 8 xi is not positive the bound carries no information at
// this eps; the result is +infinity with the vacuous flag set.  (At the
// default accuracy coefficients 8 kappa_g eps = 2 eps already exceeds
// (1 - eta2) eps, so the bound is vacuous for every eps; callers fall back
// to the observed maximum.)
inline SigmaMaxBound sigma_max_formula(double eps, const ConditionKappas& kappas, double L_t,
                                       double theta, double eta2, double gamma3) {
  if (!(eps > 0.0)) throw std::invalid_argument("sigma_max_formula: eps must be positive");
  if (!(gamma3 > 0.0)) throw std::invalid_argument("sigma_max_formula: gamma3 must be positive");
  if (kappas.g < 0.0 || kappas.b < 0.0 || kappas.t < 0.0)
    throw std::invalid_argument("sigma_max_formula: kappas must be non-negative");
  if (L_t < 0.0) throw std::invalid_argument("sigma_max_formula: L_t must be non-negative");
  if (theta < 0.0) throw std::invalid_argument("sigma_max_formula: theta must be non-negative");

  SigmaMaxBound out;
  const double one_minus = 1.0 - eta2;
  const double xi = eps * kappas.g + std::pow(eps, 2.0 / 3.0) * kappas.b / 2.0 +
                    (std::cbrt(eps) * kappas.t + L_t) / 6.0;
  const double denom = one_minus * eps - 8.0 * xi;
  if (!(one_minus > 0.0) || !(denom > 0.0)) return out;  // vacuous
  const double a = 4.0 * xi / one_minus;
  const double b = xi * (4.0 * L_t + 2.0 + 8.0 * theta) / denom;
  out.value = gamma3 * std::max(a, b);
  out.vacuous = false;
  return out;
}

// Worst-case iteration counts to drive the three criticality measures below
// (eps1, eps2, eps3), given a ceiling on the regularization weight:
//   kappa_s   = sigma_max + L_t/2 + theta + 1/4
//   kappa_s2  = 3 sigma_max + L_t/2 + theta + 1/4
//   kappa_s3  = L_t + sigma_max/2 + theta
//   kappa_max = max(2^(1/3) kappa_s^(4/3), 2 kappa_s2^2, 8 kappa_s3)
//   K_succ    = ceil(8 kappa_max (f0 - f_low) / (eta1 sigma_min)
//                    * max(eps1^(-4/3), eps2^(-2), eps3^(-4)))
//   K_total   = ceil((1 + |log gamma1|/log gamma2) K_succ
//                    + log(sigma_max/sigma0) / log gamma2).
// K_total applies the successful/unsuccessful counting bound to K_succ; both
// are returned as doubles because realistic inputs overflow 64-bit integers.
inline IterationBudget iteration_budget(double eps1, double eps2, double eps3, double f0,
                                        double f_low, const BudgetConstants& c) {
  if (!(eps1 > 0.0) || !(eps2 > 0.0) || !(eps3 > 0.0))
    throw std::invalid_argument("iteration_budget: tolerances must be positive");
  if (!(f0 >= f_low)) throw std::invalid_argument("iteration_budget: f0 must be >= f_low");
  if (!(c.sigma_max > 0.0)) throw std::invalid_argument("iteration_budget: sigma_max must be positive");
  if (c.L_t < 0.0 || c.theta < 0.0)
    throw std::invalid_argument("iteration_budget: L_t and theta must be non-negative");
  if (!(c.eta1 > 0.0) || !(c.sigma_min > 0.0))
    throw std::invalid_argument("iteration_budget: eta1 and sigma_min must be positive");
  if (!(c.gamma1 > 0.0) || !(c.gamma1 < 1.0) || !(c.gamma2 > 1.0) || !(c.sigma0 > 0.0))
    throw std::invalid_argument("iteration_budget: invalid update constants");

  IterationBudget out;
  out.kappa_s = c.sigma_max + c.L_t / 2.0 + c.theta + 0.25;
  out.kappa_s2 = 3.0 * c.sigma_max + c.L_t / 2.0 + c.theta + 0.25;
  out.kappa_s3 = c.L_t + c.sigma_max / 2.0 + c.theta;
  out.kappa_max = std::max({std::cbrt(2.0) * std::pow(out.kappa_s, 4.0 / 3.0),
                            2.0 * out.kappa_s2 * out.kappa_s2, 8.0 * out.kappa_s3});
  const double eps_term = std::max({std::pow(eps1, -4.0 / 3.0), std::pow(eps2, -2.0),
                                    std::pow(eps3, -4.0)});
  out.k_succ = std::ceil(8.0 * out.kappa_max * (f0 - f_low) / (c.eta1 * c.sigma_min) * eps_term);
  const double slope = 1.0 + std::abs(std::log(c.gamma1)) / std::log(c.gamma2);
  const double offset = std::log(c.sigma_max / c.sigma0) / std::log(c.gamma2);
  out.k_total = std::ceil(slope * out.k_succ + offset);
  return out;
}

namespace detail {

// Relative slack absorbing floating-point noise in inequality checks whose
// exact form holds with equality in edge cases (e.g. an all-unsuccessful run
// makes the counting bound tight).
inline constexpr double kCheckSlack = 1e-9;

inline double check_tolerance(double reference) {
  return kCheckSlack * std::max(1.0, std::abs(reference));
}

struct ChiSource {
  Vector grad;
  SymMatrix hess;
  SymTensor3 third;
};

}  // namespace detail

// Runs the optimizer from x0 (origin when omitted).  Throws
// std::invalid_argument on a bad configuration and std::runtime_error when
// the objective turns non-finite.
inline RunReport run(const FiniteSumProblem& problem, const StmConfig& config,
                     std::optional<Vector> x0 = std::nullopt) {
  config.validate();
  const int d = problem.dim();
  const std::int64_t N = problem.components();
  const double L_t = problem.lipschitz().t;

  Vector x = x0 ? std::move(*x0) : Vector::Zero(d);
  if (x.size() != d) throw std::invalid_argument("run: x0 has wrong dimension");

  RunReport report;
  report.problem = problem.name();
  report.config = config;
  report.eps_combined = config.eps_combined();

  // One plan serves the whole run: the tolerances are fixed, so the sample
  // sizes are too.  Full batch skips planning and uses every component.
  std::optional<SamplePlan> plan;
  if (config.sampling == SamplingMode::FullBatch) {
    report.plan_n_g = report.plan_n_b = report.plan_n_t = N;
  } else {
    const NoiseRanges noise = noise_from_lipschitz(problem.lipschitz());
    plan = config.sampling == SamplingMode::WithoutReplacement
               ? plan_without_replacement(report.eps_combined, config.delta, config.kappas, noise,
                                          d, N)
               : plan_with_replacement(report.eps_combined, config.delta, config.kappas, noise, d);
    report.plan_n_g = plan->n_g;
    report.plan_n_b = plan->n_b;
    report.plan_n_t = plan->n_t;
  }

  const auto require_finite = [&](double value, const char* what, int k) {
    if (std::isfinite(value)) return;
    std::ostringstream msg;
    msg << "run: " << what << " is non-finite at iteration " << k << " (|x| = " << x.norm() << ")";
    throw std::runtime_error(msg.str());
  };

  double sigma = config.sigma0;
  double sigma_observed_max = sigma;
  const double counting_slope =
      1.0 + std::abs(std::log(config.gamma1)) / std::log(config.gamma2);
  report.counting_slope = counting_slope;

  double f_x = problem.full(x, 0).value;
  require_finite(f_x, "f(x0)", 0);
  report.initial_f = f_x;

  CriticalityTriple chi_x;  // criticality at the current iterate (mode-dependent source)
  bool have_chi = false;

  for (int k = 0; k < config.max_iters; ++k) {
    // Derivative estimates for the model (exact bundle in full batch).
    DerivativeBundle est;
    if (config.sampling == SamplingMode::FullBatch) {
      est = problem.full(x, 3);
      est.value = f_x;
    } else {
      est = estimate_derivatives(problem, x, *plan, derive_seed(config.seed, 0xE57, static_cast<std::uint64_t>(k)));
    }

    // Exact derivatives at x for verification work (same object as the
    // estimate when the batch is full).
    std::optional<detail::ChiSource> exact;
    if (config.mode == RunMode::Verify) {
      if (config.sampling == SamplingMode::FullBatch) {
        exact = detail::ChiSource{est.grad, *est.hess, *est.third};
      } else {
        DerivativeBundle fb = problem.full(x, 3);
        exact = detail::ChiSource{std::move(fb.grad), std::move(*fb.hess), std::move(*fb.third)};
      }
    }

    // Criticality at x_k drives termination: exact derivatives in verify
    // mode, the sampled estimates in production mode.
    if (!have_chi) {
      const std::uint64_t chi_seed = derive_seed(config.seed, 0xC41, static_cast<std::uint64_t>(k));
      chi_x = config.mode == RunMode::Verify
                  ? criticality(exact->grad, exact->hess, exact->third, config.zeta,
                                config.chi_restarts, 1e-10, chi_seed)
                  : criticality(est.grad, *est.hess, *est.third, config.zeta,
                                config.chi_restarts, 1e-10, chi_seed);
      have_chi = true;
    }

    if (chi_x.chi1 <= config.eps1 && chi_x.chi2 <= config.eps2 && chi_x.chi3 <= config.eps3) {
      report.converged = true;
      report.heuristic_termination = config.mode == RunMode::Production;
      break;
    }

    // Build the model and solve it approximately.
    QuarticModel model(f_x, est.grad, *est.hess, *est.third, sigma);
    SubsolveResult sub = subsolve(model, config.theta, config.zeta, config.subsolver_budget,
                                  derive_seed(config.seed, 0x5B, static_cast<std::uint64_t>(k)));
    const Vector& s = sub.s;
    const double step_norm = s.norm();
    const double phi_s = model.eval_phi(s);
    const double model_decrease = f_x - phi_s;

    IterationRecord rec;
    rec.k = k;
    rec.sigma = sigma;
    rec.f_value = f_x;
    rec.step_norm = step_norm;
    rec.chi1 = chi_x.chi1;
    rec.chi2 = chi_x.chi2;
    rec.chi3 = chi_x.chi3;
    rec.model_decrease = model_decrease;
    rec.n_g = report.plan_n_g;
    rec.n_b = report.plan_n_b;
    rec.n_t = report.plan_n_t;
    rec.subsolver_status = sub.status;
    rec.subsolver_iterations = sub.iterations;

    // Ratio test.  A degenerate model decrease (including the zero step) is
    // classified unsuccessful without forming the ratio; a subsolver that
    // ran out of budget is counted unsuccessful regardless of the ratio so
    // the weight escalates toward easier subproblems.
    double f_trial = f_x;
    const bool degenerate = model_decrease <= 1e-14 * std::max(1.0, std::abs(f_x));
    if (!degenerate) {
      f_trial = problem.full(x + s, 0).value;
      require_finite(f_trial, "f(x + s)", k);
      rec.rho = (f_x - f_trial) / model_decrease;
      if (rec.rho > config.eta2) {
        rec.success = SuccessClass::VerySuccessful;
      } else if (rec.rho >= config.eta1) {
        rec.success = SuccessClass::Successful;
      } else {
        rec.success = SuccessClass::Unsuccessful;
      }
    }
    if (sub.status == SubsolveStatus::MaxIter) rec.success = SuccessClass::Unsuccessful;
    rec.accepted = rec.success != SuccessClass::Unsuccessful;

    // Model-decrease bound on accepted steps: decrease > (sigma/4)|s|^4,
    // which is exactly m(s) < m(0).
    if (rec.accepted) {
      report.lemma_model_decrease.record(model_decrease - model.quartic_term(s), 0.0);
    }

    // Verification-mode checks against exact derivatives.
    if (config.mode == RunMode::Verify) {
      const detail::ChiSource& ex = *exact;
      const double eps_c = report.eps_combined;
      const bool cond1_g = (est.grad - ex.grad).norm() <= config.kappas.g * eps_c;
      bool cond1_b = true;  // the B and T conditions scale with |s| and hold trivially at s = 0
      bool cond1_t = true;
      if (step_norm > 0.0) {
        const Vector diff_bs = (*est.hess) * s - ex.hess * s;
        cond1_b = diff_bs.norm() <= config.kappas.b * std::pow(eps_c, 2.0 / 3.0) * step_norm;
        const Vector diff_ts = est.third->contract2(s) - ex.third.contract2(s);
        cond1_t = diff_ts.norm() <= config.kappas.t * std::cbrt(eps_c) * step_norm * step_norm;
      }
      rec.cond1_checked = true;
      rec.cond1_held = cond1_g && cond1_b && cond1_t;
      ++report.cond1_checked;
      if (!rec.cond1_held) ++report.cond1_violations;

      // Step-length lower bounds at the trial point, asserted only when
      // their hypotheses hold: the step met the subsolver's acceptance test
      // and the sampled derivatives met the accuracy condition.
      if (sub.status == SubsolveStatus::Converged && rec.cond1_held && step_norm > 0.0) {
        DerivativeBundle tb = problem.full(x + s, 3);
        CriticalityTriple chi_trial =
            criticality(tb.grad, *tb.hess, *tb.third, config.zeta, config.chi_restarts, 1e-10,
                        derive_seed(config.seed, 0x7A1A, static_cast<std::uint64_t>(k)));
        const double kappa_k = sigma + L_t / 2.0 + config.theta + 0.25;
        const double kappa_k2 = 3.0 * sigma + L_t / 2.0 + config.theta + 0.25;
        const double kappa_k3 = L_t + sigma / 2.0 + config.theta;
        const double rhs1 = (chi_trial.chi1 - 0.5 * config.eps1) / kappa_k;
        const double rhs2 = (chi_trial.chi2 - 0.5 * config.eps2) / kappa_k2;
        const double rhs3 = (chi_trial.chi3 - 0.5 * config.eps3) / kappa_k3;
        const double s3 = step_norm * step_norm * step_norm;
        if (rhs1 > 0.0)
          report.lemma_step_chi1.record(s3 - rhs1, detail::check_tolerance(rhs1));
        if (rhs2 > 0.0)
          report.lemma_step_chi2.record(step_norm * step_norm - rhs2,
                                        detail::check_tolerance(rhs2));
        if (rhs3 > 0.0)
          report.lemma_step_chi3.record(step_norm - rhs3, detail::check_tolerance(rhs3));
      }
    }

    // Apply the acceptance decision and update the weight.
    if (rec.accepted) {
      x = x + s;
      f_x = f_trial;
      have_chi = false;  // criticality must be re-evaluated at the new point
      ++report.successful;
    } else {
      ++report.unsuccessful;
    }

    double sigma_next = sigma;
    if (config.sigma_rule == SigmaUpdateRule::DeterministicEndpoints) {
      if (rec.success == SuccessClass::VerySuccessful) {
        sigma_next = std::max(config.sigma_min, config.gamma1 * sigma);
      } else if (rec.success == SuccessClass::Unsuccessful) {
        sigma_next = config.gamma2 * sigma;
      }
    } else {
      Rng rng(derive_seed(config.seed, 0x516, static_cast<std::uint64_t>(k)));
      if (rec.success == SuccessClass::VerySuccessful) {
        sigma_next = rng.uniform(std::max(config.sigma_min, config.gamma1 * sigma), sigma);
      } else if (rec.success == SuccessClass::Successful) {
        sigma_next = rng.uniform(sigma, config.gamma2 * sigma);
      } else {
        sigma_next = rng.uniform(config.gamma2 * sigma, config.gamma3 * sigma);
      }
    }
    rec.sigma_next = sigma_next;
    sigma = sigma_next;
    sigma_observed_max = std::max(sigma_observed_max, sigma);

    report.records.push_back(std::move(rec));

    // Counting bound after every completed iteration: with sigma bounded by
    // the running observed maximum, total iterations cannot outpace the
    // successful count by more than the update factors allow.
    {
      const double total = static_cast<double>(report.successful + report.unsuccessful);
      const double rhs = counting_slope * static_cast<double>(report.successful) +
                         std::log(sigma_observed_max / config.sigma0) / std::log(config.gamma2);
      report.counting.record(rhs - total, detail::check_tolerance(total));
    }
  }

  report.iterations = static_cast<int>(report.records.size());

  // Terminal criticality: reuse the loop's value when the iterate did not
  // move afterwards; otherwise (max_iters hit right after an acceptance)
  // evaluate at the final point.
  if (!have_chi) {
    DerivativeBundle fb =
        config.mode == RunMode::Verify || config.sampling == SamplingMode::FullBatch
            ? problem.full(x, 3)
            : estimate_derivatives(problem, x, *plan,
                                   derive_seed(config.seed, 0xE57,
                                               static_cast<std::uint64_t>(config.max_iters)));
    chi_x = criticality(fb.grad, *fb.hess, *fb.third, config.zeta, config.chi_restarts, 1e-10,
                        derive_seed(config.seed, 0xC41, static_cast<std::uint64_t>(config.max_iters)));
  }

  report.terminal_x = x;
  report.terminal_f = f_x;
  report.terminal_chi1 = chi_x.chi1;
  report.terminal_chi2 = chi_x.chi2;
  report.terminal_chi3 = chi_x.chi3;
  report.sigma_final = sigma;
  report.sigma_observed_max = sigma_observed_max;

  // Budget formulas at the run's tolerances.  The closed-form sigma ceiling
  // is used when informative; otherwise the observed maximum stands in.
  report.sigma_max_bound = sigma_max_formula(report.eps_combined, config.kappas, L_t,
                                             config.theta, config.eta2, config.gamma3);
  report.sigma_max_used =
      report.sigma_max_bound.vacuous ? sigma_observed_max : report.sigma_max_bound.value;
  BudgetConstants bc;
  bc.sigma_max = report.sigma_max_used;
  bc.L_t = L_t;
  bc.theta = config.theta;
  bc.eta1 = config.eta1;
  bc.sigma_min = config.sigma_min;
  bc.gamma1 = config.gamma1;
  bc.gamma2 = config.gamma2;
  bc.sigma0 = config.sigma0;
  report.budget = iteration_budget(config.eps1, config.eps2, config.eps3, report.initial_f,
                                   problem.f_low(), bc);
  report.counting_offset =
      std::log(report.sigma_max_used / config.sigma0) / std::log(config.gamma2);
  return report;
}

}  // namespace stm
