#pragma once
// Command-line harness: JSON configuration with field-precise error
// messages, run orchestration with CSV/JSON reporting, sample-size and tail
// simulation front-ends, and a self-check suite over the library's
// analytical invariants.
//
// Exit codes: 0 success, 1 usage/configuration error (the message names the
// offending field), 2 iteration budget exhausted before convergence,
// 3 an executed check or soundness invariant failed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "concentration.hpp"
#include "criticality.hpp"
#include "driver.hpp"
#include "io.hpp"
#include "model.hpp"
#include "problems.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "subsolver.hpp"

namespace stm::cli {

// ---------------------------------------------------------------------------
// JSON field access with errors that name the exact field.

namespace detail {

inline std::invalid_argument field_error(const std::string& path, const std::string& what) {
  return std::invalid_argument("config: " + path + " " + what);
}

inline const ordered_json* find(const ordered_json& obj, const std::string& key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

inline void check_keys(const ordered_json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed) known = known || item.key() == k;
    if (!known) throw field_error(path + item.key(), "is not a recognized field");
  }
}

inline double need_double(const ordered_json& obj, const std::string& path,
                          const std::string& key) {
  const ordered_json* v = find(obj, key);
  if (!v) throw field_error(path + key, "is required");
  if (!v->is_number()) throw field_error(path + key, "must be a number");
  return v->get<double>();
}

inline double opt_double(const ordered_json& obj, const std::string& path, const std::string& key,
                         double fallback) {
  const ordered_json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number()) throw field_error(path + key, "must be a number");
  return v->get<double>();
}

inline std::int64_t need_int(const ordered_json& obj, const std::string& path,
                             const std::string& key) {
  const ordered_json* v = find(obj, key);
  if (!v) throw field_error(path + key, "is required");
  if (!v->is_number_integer()) throw field_error(path + key, "must be an integer");
  return v->get<std::int64_t>();
}

inline std::int64_t opt_int(const ordered_json& obj, const std::string& path,
                            const std::string& key, std::int64_t fallback) {
  const ordered_json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer()) throw field_error(path + key, "must be an integer");
  return v->get<std::int64_t>();
}

inline std::uint64_t opt_uint(const ordered_json& obj, const std::string& path,
                              const std::string& key, std::uint64_t fallback) {
  const ordered_json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer() || (v->is_number_integer() && v->get<std::int64_t>() < 0 &&
                                  !v->is_number_unsigned()))
    throw field_error(path + key, "must be a nonnegative integer");
  return v->get<std::uint64_t>();
}

inline std::string need_string(const ordered_json& obj, const std::string& path,
                               const std::string& key) {
  const ordered_json* v = find(obj, key);
  if (!v) throw field_error(path + key, "is required");
  if (!v->is_string()) throw field_error(path + key, "must be a string");
  return v->get<std::string>();
}

inline std::string opt_string(const ordered_json& obj, const std::string& path,
                              const std::string& key, const std::string& fallback) {
  const ordered_json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_string()) throw field_error(path + key, "must be a string");
  return v->get<std::string>();
}

inline bool opt_bool(const ordered_json& obj, const std::string& path, const std::string& key,
                     bool fallback) {
  const ordered_json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw field_error(path + key, "must be a boolean");
  return v->get<bool>();
}

}  // namespace detail

inline ordered_json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  return j;
}

// ---------------------------------------------------------------------------
// Optimization run configuration.

struct RunRequest {
  FiniteSumProblem problem;
  StmConfig config;
  std::optional<Vector> x0;
};

inline SamplingMode parse_sampling(const std::string& s, const std::string& field) {
  if (s == "full_batch") return SamplingMode::FullBatch;
  if (s == "without_replacement") return SamplingMode::WithoutReplacement;
  if (s == "with_replacement") return SamplingMode::WithReplacement;
  throw detail::field_error(field,
                            "must be one of full_batch, without_replacement, with_replacement");
}

inline StmConfig parse_stm_config(const ordered_json& obj) {
  using namespace detail;
  const std::string path = "stm.";
  check_keys(obj, path,
             {"gamma1", "gamma2", "gamma3", "eta1", "eta2", "sigma0", "sigma_min", "theta",
              "zeta", "eps1", "eps2", "eps3", "max_iters", "seed", "sampling", "delta",
              "kappas", "mode", "sigma_rule", "subsolver_budget", "chi_restarts"});
  StmConfig c;
  c.gamma1 = opt_double(obj, path, "gamma1", c.gamma1);
  c.gamma2 = opt_double(obj, path, "gamma2", c.gamma2);
  c.gamma3 = opt_double(obj, path, "gamma3", c.gamma3);
  c.eta1 = opt_double(obj, path, "eta1", c.eta1);
  c.eta2 = opt_double(obj, path, "eta2", c.eta2);
  c.sigma0 = opt_double(obj, path, "sigma0", c.sigma0);
  c.sigma_min = opt_double(obj, path, "sigma_min", c.sigma_min);
  c.theta = opt_double(obj, path, "theta", c.theta);
  c.zeta = opt_double(obj, path, "zeta", c.zeta);
  c.eps1 = opt_double(obj, path, "eps1", c.eps1);
  c.eps2 = opt_double(obj, path, "eps2", c.eps2);
  c.eps3 = opt_double(obj, path, "eps3", c.eps3);
  c.max_iters = static_cast<int>(opt_int(obj, path, "max_iters", c.max_iters));
  c.seed = opt_uint(obj, path, "seed", c.seed);
  if (find(obj, "sampling") != nullptr)
    c.sampling = parse_sampling(opt_string(obj, path, "sampling", ""), path + "sampling");
  c.delta = opt_double(obj, path, "delta", c.delta);
  if (const ordered_json* v = find(obj, "kappas")) {
    if (!v->is_object()) throw field_error(path + "kappas", "must be an object");
    check_keys(*v, path + "kappas.", {"g", "b", "t"});
    c.kappas.g = opt_double(*v, path + "kappas.", "g", c.kappas.g);
    c.kappas.b = opt_double(*v, path + "kappas.", "b", c.kappas.b);
    c.kappas.t = opt_double(*v, path + "kappas.", "t", c.kappas.t);
  }
  const std::string mode = opt_string(obj, path, "mode", "verify");
  if (mode == "verify") c.mode = RunMode::Verify;
  else if (mode == "production") c.mode = RunMode::Production;
  else throw field_error(path + "mode", "must be verify or production");
  const std::string rule = opt_string(obj, path, "sigma_rule", "deterministic_endpoints");
  if (rule == "deterministic_endpoints") c.sigma_rule = SigmaUpdateRule::DeterministicEndpoints;
  else if (rule == "seeded_uniform") c.sigma_rule = SigmaUpdateRule::SeededUniform;
  else throw field_error(path + "sigma_rule", "must be deterministic_endpoints or seeded_uniform");
  c.subsolver_budget = static_cast<int>(opt_int(obj, path, "subsolver_budget", c.subsolver_budget));
  c.chi_restarts = static_cast<int>(opt_int(obj, path, "chi_restarts", c.chi_restarts));
  return c;
}

inline FiniteSumProblem parse_problem(const ordered_json& obj) {
  using namespace detail;
  const std::string path = "problem.";
  check_keys(obj, path, {"name", "n", "d", "seed", "lambda"});
  const std::string name = need_string(obj, path, "name");
  if (name != "cosine_sum" && name != "quadratic_sum" && name != "nonconvex_logistic")
    throw field_error(path + "name",
                      "must be one of cosine_sum, quadratic_sum, nonconvex_logistic");
  const std::int64_t n = need_int(obj, path, "n");
  const std::int64_t d = need_int(obj, path, "d");
  if (n < 1) throw field_error(path + "n", "must be >= 1");
  if (d < 1) throw field_error(path + "d", "must be >= 1");
  const std::uint64_t seed = opt_uint(obj, path, "seed", 0);
  const double lambda = opt_double(obj, path, "lambda", 0.5);
  return make_problem(name, static_cast<int>(n), static_cast<int>(d), seed, lambda);
}

// Uniform draw from the ball of the given radius (seeded, reproducible).
inline Vector seeded_ball_point(int d, double radius, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xB011));
  Vector u(d);
  double nrm = 0.0;
  while (nrm < 1e-12) {
    for (int i = 0; i < d; ++i) u[i] = rng.normal();
    nrm = u.norm();
  }
  const double r = radius * std::pow(rng.uniform01(), 1.0 / static_cast<double>(d));
  return Vector((r / nrm) * u);
}

inline RunRequest parse_run_request(const ordered_json& cfg) {
  using namespace detail;
  check_keys(cfg, "", {"problem", "stm", "x0", "x0_seed", "x0_radius"});
  const ordered_json* prob = find(cfg, "problem");
  if (!prob) throw field_error("problem", "is required");
  if (!prob->is_object()) throw field_error("problem", "must be an object");
  FiniteSumProblem problem = parse_problem(*prob);
  StmConfig config;
  if (const ordered_json* stm = find(cfg, "stm")) {
    if (!stm->is_object()) throw field_error("stm", "must be an object");
    config = parse_stm_config(*stm);
  }
  config.validate();
  std::optional<Vector> x0;
  const ordered_json* x0v = find(cfg, "x0");
  const ordered_json* x0seed = find(cfg, "x0_seed");
  if (x0v && x0seed) throw field_error("x0", "and x0_seed are mutually exclusive");
  if (x0v) {
    if (!x0v->is_array()) throw field_error("x0", "must be an array of numbers");
    if (static_cast<int>(x0v->size()) != problem.dim())
      throw field_error("x0", "must have exactly problem.d entries");
    Vector x(problem.dim());
    for (int i = 0; i < problem.dim(); ++i) {
      if (!(*x0v)[static_cast<std::size_t>(i)].is_number())
        throw field_error("x0", "must be an array of numbers");
      x[i] = (*x0v)[static_cast<std::size_t>(i)].get<double>();
    }
    x0 = std::move(x);
  } else if (x0seed) {
    const std::uint64_t s = opt_uint(cfg, "", "x0_seed", 0);
    const double radius = opt_double(cfg, "", "x0_radius", 1.0);
    if (!(radius > 0.0)) throw field_error("x0_radius", "must be positive");
    x0 = seeded_ball_point(problem.dim(), radius, s);
  } else if (find(cfg, "x0_radius")) {
    throw field_error("x0_radius", "requires x0_seed");
  }
  return RunRequest{std::move(problem), config, std::move(x0)};
}

inline int cmd_run(const ordered_json& cfg, const std::string& out_dir) {
  RunRequest req = parse_run_request(cfg);
  const RunReport report = run(req.problem, req.config, req.x0);
  const std::filesystem::path out(out_dir);
  write_text_atomic(out / "iterations.csv", iterations_csv(report));
  write_text_atomic(out / "summary.json", run_summary_json(report, cfg).dump(2) + "\n");
  std::cout << (report.converged ? "converged" : "budget_exhausted") << " iterations="
            << report.iterations << " terminal_chi=" << format_double(report.terminal_chi1) << ","
            << format_double(report.terminal_chi2) << "," << format_double(report.terminal_chi3)
            << "\n";
  return report.converged ? 0 : 2;
}

// ---------------------------------------------------------------------------
// Sample-size planning.

inline int cmd_sample_size(const ordered_json& cfg, const std::string& out_dir) {
  using namespace detail;
  check_keys(cfg, "", {"eps", "delta", "kappas", "lipschitz", "d", "N", "scheme"});
  const double eps = need_double(cfg, "", "eps");
  const double delta = need_double(cfg, "", "delta");
  ConditionKappas kappas;
  if (const ordered_json* k = find(cfg, "kappas")) {
    if (!k->is_object()) throw field_error("kappas", "must be an object");
    check_keys(*k, "kappas.", {"g", "b", "t"});
    kappas.g = opt_double(*k, "kappas.", "g", kappas.g);
    kappas.b = opt_double(*k, "kappas.", "b", kappas.b);
    kappas.t = opt_double(*k, "kappas.", "t", kappas.t);
  }
  const ordered_json* lip = find(cfg, "lipschitz");
  if (!lip) throw field_error("lipschitz", "is required");
  if (!lip->is_object()) throw field_error("lipschitz", "must be an object");
  check_keys(*lip, "lipschitz.", {"f", "g", "b", "t"});
  LipschitzConstants L;
  L.f = need_double(*lip, "lipschitz.", "f");
  L.g = need_double(*lip, "lipschitz.", "g");
  L.b = need_double(*lip, "lipschitz.", "b");
  L.t = need_double(*lip, "lipschitz.", "t");
  const int d = static_cast<int>(need_int(cfg, "", "d"));
  const std::string scheme = opt_string(cfg, "", "scheme", "without");
  if (scheme != "with" && scheme != "without")
    throw field_error("scheme", "must be with or without");
  SamplePlan plan;
  if (scheme == "without") {
    const std::int64_t N = need_int(cfg, "", "N");
    plan = plan_without_replacement(eps, delta, kappas, noise_from_lipschitz(L), d, N);
  } else {
    plan = plan_with_replacement(eps, delta, kappas, noise_from_lipschitz(L), d);
  }
  const ordered_json j = sample_plan_json(plan);
  std::cout << j.dump(2) << "\n";
  if (!out_dir.empty())
    write_text_atomic(std::filesystem::path(out_dir) / "sample_plan.json", j.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// Tail simulation.

inline int cmd_concentration(const ordered_json& cfg, const std::string& out_dir) {
  using namespace detail;
  check_keys(cfg, "",
             {"population", "n", "trials", "scheme", "seed", "t_grid", "t_points", "grid_oracle",
              "grid_delta"});
  const ordered_json* popj = find(cfg, "population");
  if (!popj) throw field_error("population", "is required");
  if (!popj->is_object()) throw field_error("population", "must be an object");
  check_keys(*popj, "population.", {"recipe", "order", "dim", "N", "seed"});
  const std::string recipe = opt_string(*popj, "population.", "recipe", "rank_one");
  const int order = static_cast<int>(opt_int(*popj, "population.", "order", 3));
  const int dim = static_cast<int>(need_int(*popj, "population.", "dim"));
  const std::int64_t N = need_int(*popj, "population.", "N");
  const std::uint64_t pop_seed = opt_uint(*popj, "population.", "seed", 0);
  TensorPopulation pop = [&] {
    if (recipe == "rank_one") return TensorPopulation::rank_one(order, dim, N, pop_seed);
    if (recipe == "gaussian_symmetric")
      return TensorPopulation::gaussian_symmetric(order, dim, N, pop_seed);
    throw field_error("population.recipe", "must be rank_one or gaussian_symmetric");
  }();

  const std::int64_t n = need_int(cfg, "", "n");
  const std::int64_t trials = opt_int(cfg, "", "trials", 10000);
  const std::string scheme_s = opt_string(cfg, "", "scheme", "without");
  if (scheme_s != "with" && scheme_s != "without")
    throw field_error("scheme", "must be with or without");
  const SampleScheme scheme = scheme_s == "without" ? SampleScheme::WithoutReplacement
                                                    : SampleScheme::WithReplacement;
  const std::uint64_t seed = opt_uint(cfg, "", "seed", 0);
  TailSimOptions opt;
  opt.grid_oracle = opt_bool(cfg, "", "grid_oracle", false);
  opt.grid_delta = opt_double(cfg, "", "grid_delta", opt.grid_delta);

  std::vector<double> grid;
  if (const ordered_json* tg = find(cfg, "t_grid")) {
    if (!tg->is_array() || tg->empty()) throw field_error("t_grid", "must be a nonempty array");
    for (const auto& v : *tg) {
      if (!v.is_number()) throw field_error("t_grid", "must contain only numbers");
      grid.push_back(v.get<double>());
    }
  } else {
    const int points = static_cast<int>(opt_int(cfg, "", "t_points", 9));
    const TailBound bound = population_bound(pop, n, scheme);
    const double cross = bound_crossover(bound);
    if (std::isinf(cross))
      throw field_error("t_grid", "is required: the bound is informative for no t");
    if (cross > 0.0) {
      grid = default_t_grid(bound, points);
    } else {
      // Exhaustive draw: every deviation is zero, any positive grid works.
      const double hi = pop.sigma();
      for (int j = 0; j < points; ++j)
        grid.push_back(hi * std::pow(10.0, -3.0 + 4.0 * j / std::max(1, points - 1)) / 10.0);
    }
  }

  const TailEstimate est = simulate_tail(pop, n, scheme, trials, grid, seed, opt);
  const std::filesystem::path out(out_dir);
  write_text_atomic(out / "tail.csv", tail_csv(est));
  write_text_atomic(out / "tail_summary.json", tail_summary_json(est, cfg).dump(2) + "\n");
  const double gap = max_soundness_gap(est);
  std::cout << (gap <= 0.0 ? "sound" : "violated") << " max_gap=" << format_double(gap) << "\n";
  return gap <= 0.0 ? 0 : 3;
}

// ---------------------------------------------------------------------------
// Self-check suite: analytical invariants evaluated at desk scale.

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline double check_tol_scale() {
  if (const char* env = std::getenv("STM_CHECK_TOL_SCALE")) {
    char* end = nullptr;
    const double v = std::strtod(env, &end);
    if (end == env || !(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("STM_CHECK_TOL_SCALE: must be a positive number");
    return v;
  }
  return 1.0;
}

inline Vector random_direction(int d, Rng& rng) {
  Vector u(d);
  double nrm = 0.0;
  while (nrm < 1e-12) {
    for (int i = 0; i < d; ++i) u[i] = rng.normal();
    nrm = u.norm();
  }
  return Vector(u / nrm);
}

// Central finite differences of the full objective along random directions.
inline CheckResult check_derivative_ladder(std::uint64_t seed) {
  CheckResult res{"derivative_ladder", true, ""};
  const double scale = check_tol_scale();
  const double tol_g = 1e-6 * scale, tol_b = 1e-5 * scale, tol_t = 1e-4 * scale;
  double worst = 0.0;
  const std::vector<FiniteSumProblem> problems{
      make_cosine_sum(40, 5, derive_seed(seed, 1), 0.5),
      make_quadratic_sum(30, 4, derive_seed(seed, 2)),
      make_nonconvex_logistic(35, 5, derive_seed(seed, 3), 0.1)};
  Rng rng(derive_seed(seed, 0xFD));
  const double h = 1e-5;
  for (const FiniteSumProblem& p : problems) {
    const int d = p.dim();
    for (int inst = 0; inst < 3; ++inst) {
      const Vector x = seeded_ball_point(d, 2.0, rng.next_u64());
      const DerivativeBundle at = p.full(x, 3);
      for (int probe = 0; probe < 4; ++probe) {
        const Vector u = random_direction(d, rng);
        const Vector v = random_direction(d, rng);
        const Vector w = random_direction(d, rng);
        const double fd_g =
            (p.full(x + h * u, 0).value - p.full(x - h * u, 0).value) / (2.0 * h);
        const double an_g = at.grad.dot(u);
        const double err_g = std::abs(fd_g - an_g) / std::max(1.0, std::abs(an_g));
        const Vector gp = p.full(x + h * v, 1).grad;
        const Vector gm = p.full(x - h * v, 1).grad;
        const double fd_b = (gp - gm).dot(u) / (2.0 * h);
        const double an_b = u.dot(at.hess->dense() * v);
        const double err_b = std::abs(fd_b - an_b) / std::max(1.0, std::abs(an_b));
        const SymMatrix hp = *p.full(x + h * w, 2).hess;
        const SymMatrix hm = *p.full(x - h * w, 2).hess;
        const double fd_t = u.dot((hp.dense() - hm.dense()) * v) / (2.0 * h);
        const double an_t = u.dot(at.third->contract1(w).dense() * v);
        const double err_t = std::abs(fd_t - an_t) / std::max(1.0, std::abs(an_t));
        worst = std::max({worst, err_g / tol_g * 1e-6, err_b / tol_b * 1e-5, err_t / tol_t * 1e-4});
        if (err_g > tol_g || err_b > tol_b || err_t > tol_t) res.pass = false;
      }
    }
  }
  res.detail = "worst normalized error " + format_double(worst);
  return res;
}

inline QuarticModel random_model(int d, double sigma, Rng& rng) {
  Vector g(d);
  for (int i = 0; i < d; ++i) g[i] = rng.normal();
  SymMatrix b(d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) b.set(i, j, rng.normal());
  SymTensor3 t(d);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j)
      for (int k = j; k < d; ++k) t.set(i, j, k, 0.5 * rng.normal());
  return QuarticModel(0.25, g, b, t, sigma);
}

inline CheckResult check_model_ladder(std::uint64_t seed) {
  CheckResult res{"model_ladder", true, ""};
  const double scale = check_tol_scale();
  const double tol_g = 1e-6 * scale, tol_b = 1e-5 * scale, tol_q = 1e-11;
  Rng rng(derive_seed(seed, 0x3D));
  const double h = 1e-5;
  double worst = 0.0;
  for (int inst = 0; inst < 6; ++inst) {
    const int d = 3 + static_cast<int>(rng.below(3));
    const QuarticModel m = random_model(d, inst % 2 == 0 ? 0.5 : 2.0, rng);
    const Vector s = seeded_ball_point(d, 1.5, rng.next_u64());
    for (int probe = 0; probe < 4; ++probe) {
      const Vector u = random_direction(d, rng);
      const Vector v = random_direction(d, rng);
      const double fd_g = (m.eval(s + h * u) - m.eval(s - h * u)) / (2.0 * h);
      const double an_g = m.grad(s).dot(u);
      const double err_g = std::abs(fd_g - an_g) / std::max(1.0, std::abs(an_g));
      const double fd_b = (m.grad(s + h * v) - m.grad(s - h * v)).dot(u) / (2.0 * h);
      const double an_b = u.dot(m.hess(s).dense() * v);
      const double err_b = std::abs(fd_b - an_b) / std::max(1.0, std::abs(an_b));
      worst = std::max({worst, err_g, err_b});
      if (err_g > tol_g || err_b > tol_b) res.pass = false;
    }
    // Regularization part of the Hessian: sigma * (|s|^2 I + 2 s s^T).
    const Matrix reg = m.hess(s).dense() - m.B().dense() - m.T().contract1(s).dense();
    const Matrix expect =
        m.sigma() * (s.squaredNorm() * Matrix::Identity(d, d) + 2.0 * s * s.transpose());
    const double err_q = (reg - expect).cwiseAbs().maxCoeff();
    if (err_q > tol_q * std::max(1.0, expect.cwiseAbs().maxCoeff())) res.pass = false;
  }
  res.detail = "worst directional error " + format_double(worst);
  return res;
}

// One canned verification run shared by the lemma-oriented checks.
inline const RunReport& canned_run(std::uint64_t seed) {
  static const RunReport report = [] {
    const FiniteSumProblem problem = make_cosine_sum(300, 6, 11, 0.5);
    StmConfig cfg;
    cfg.eps1 = 1e-4;
    cfg.eps2 = 1e-2;
    cfg.eps3 = 1e-1;
    cfg.max_iters = 300;
    cfg.seed = 17;
    return run(problem, cfg, seeded_ball_point(6, 2.0, 23));
  }();
  (void)seed;
  return report;
}

inline CheckResult check_lemma_model_decrease(std::uint64_t seed) {
  const RunReport& r = canned_run(seed);
  CheckResult res{"lemma_model_decrease", true, ""};
  res.pass = r.lemma_model_decrease.violations == 0 && r.lemma_model_decrease.checked > 0;
  res.detail = std::to_string(r.lemma_model_decrease.checked) + " accepted steps, " +
               std::to_string(r.lemma_model_decrease.violations) + " violations, min margin " +
               format_double(r.lemma_model_decrease.min_margin);
  return res;
}

inline CheckResult check_step_length_bounds(std::uint64_t seed) {
  const RunReport& r = canned_run(seed);
  CheckResult res{"step_length_bounds", true, ""};
  const auto bad = r.lemma_step_chi1.violations + r.lemma_step_chi2.violations +
                   r.lemma_step_chi3.violations;
  res.pass = bad == 0 && r.converged;
  res.detail = "checked " + std::to_string(r.lemma_step_chi1.checked) + "/" +
               std::to_string(r.lemma_step_chi2.checked) + "/" +
               std::to_string(r.lemma_step_chi3.checked) + ", violations " + std::to_string(bad);
  return res;
}

inline CheckResult check_counting_bound(std::uint64_t seed) {
  const RunReport& r = canned_run(seed);
  CheckResult res{"counting_bound", true, ""};
  res.pass = r.counting.violations == 0 && r.counting.checked == r.iterations;
  res.detail = std::to_string(r.counting.checked) + " iterations checked, " +
               std::to_string(r.counting.violations) + " violations";
  return res;
}

inline CheckResult check_condition2_reverify(std::uint64_t seed) {
  CheckResult res{"condition2_reverify", true, ""};
  const double theta = 0.1, zeta = 0.1;
  Rng rng(derive_seed(seed, 0xC2));
  int converged = 0, violations = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const int d = 3 + static_cast<int>(rng.below(2));
    const QuarticModel m = random_model(d, 1.0 + rng.uniform01(), rng);
    const SubsolveResult sr = subsolve(m, theta, zeta, 500, rng.next_u64());
    if (sr.status != SubsolveStatus::Converged) continue;
    ++converged;
    const double ns = sr.s.norm();
    const double slack = 1e-9 * std::max(1.0, ns);
    if (m.grad(sr.s).norm() > theta * ns * ns * ns + slack) ++violations;
    if (criticality_chi2(m.hess(sr.s)) > theta * ns * ns + slack) ++violations;
    const SpectralEstimate fresh = constrained_max_abs_cubic(
        m.hess(sr.s), m.third_form(sr.s), zeta, 16, 1e-10, rng.next_u64());
    if (fresh.value > theta * ns + slack) ++violations;
  }
  res.pass = violations == 0 && converged > 0;
  res.detail = std::to_string(converged) + "/20 converged, " + std::to_string(violations) +
               " re-verification violations";
  return res;
}

}  // namespace detail

inline const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> names{
      "derivative_ladder", "model_ladder",   "lemma_model_decrease",
      "step_length_bounds", "counting_bound", "condition2_reverify"};
  return names;
}

inline CheckResult run_check(const std::string& name, std::uint64_t seed) {
  if (name == "derivative_ladder") return detail::check_derivative_ladder(seed);
  if (name == "model_ladder") return detail::check_model_ladder(seed);
  if (name == "lemma_model_decrease") return detail::check_lemma_model_decrease(seed);
  if (name == "step_length_bounds") return detail::check_step_length_bounds(seed);
  if (name == "counting_bound") return detail::check_counting_bound(seed);
  if (name == "condition2_reverify") return detail::check_condition2_reverify(seed);
  throw std::invalid_argument("check: unknown check '" + name + "'");
}

inline int cmd_check(std::vector<std::string> names, std::uint64_t seed,
                     const std::string& out_dir) {
  if (names.empty()) names = known_checks();
  for (const std::string& n : names) {
    bool known = false;
    for (const std::string& k : known_checks()) known = known || k == n;
    if (!known) throw std::invalid_argument("check: unknown check '" + n + "'");
  }
  ordered_json report;
  report["schema"] = kCheckReportSchema;
  report["seed"] = seed;
  report["tol_scale"] = json_number(detail::check_tol_scale());
  ordered_json checks = ordered_json::array();
  bool all_pass = true;
  for (const std::string& n : names) {
    const CheckResult r = run_check(n, seed);
    all_pass = all_pass && r.pass;
    checks.push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
  }
  report["checks"] = checks;
  report["all_pass"] = all_pass;
  std::cout << report.dump(2) << "\n";
  if (!out_dir.empty())
    write_text_atomic(std::filesystem::path(out_dir) / "check_report.json",
                      report.dump(2) + "\n");
  return all_pass ? 0 : 3;
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch.

inline int dispatch(int argc, char** argv) {
  CLI::App app{"stochastic tensor method experiment harness"};
  app.require_subcommand(1);

  std::string run_config, run_out = ".", run_mode, run_scheme;
  std::uint64_t run_seed = 0;
  CLI::App* run_cmd = app.add_subcommand("run", "execute an optimization run");
  run_cmd->add_option("--config", run_config, "JSON run configuration")->required();
  run_cmd->add_option("--out", run_out, "output directory");
  CLI::Option* run_seed_opt = run_cmd->add_option("--seed", run_seed, "override stm.seed");
  CLI::Option* run_mode_opt =
      run_cmd->add_option("--mode", run_mode, "override stm.mode (verify|production)");
  CLI::Option* run_scheme_opt =
      run_cmd->add_option("--scheme", run_scheme, "override sampling scheme (with|without)");

  std::string ss_config, ss_out, ss_scheme;
  CLI::App* ss_cmd = app.add_subcommand("sample-size", "print derivative sample sizes");
  ss_cmd->add_option("--config", ss_config, "JSON plan inputs")->required();
  ss_cmd->add_option("--out", ss_out, "optional output directory");
  CLI::Option* ss_scheme_opt =
      ss_cmd->add_option("--scheme", ss_scheme, "override scheme (with|without)");

  std::string conc_config, conc_out = ".", conc_scheme;
  std::uint64_t conc_seed = 0;
  CLI::App* conc_cmd = app.add_subcommand("concentration", "simulate deviation tails");
  conc_cmd->add_option("--config", conc_config, "JSON simulation configuration")->required();
  conc_cmd->add_option("--out", conc_out, "output directory");
  CLI::Option* conc_seed_opt = conc_cmd->add_option("--seed", conc_seed, "override seed");
  CLI::Option* conc_scheme_opt =
      conc_cmd->add_option("--scheme", conc_scheme, "override scheme (with|without)");

  std::vector<std::string> check_names;
  std::string check_out;
  std::uint64_t check_seed = 0;
  CLI::App* check_cmd = app.add_subcommand("check", "run the invariant self-checks");
  check_cmd->add_option("names", check_names, "subset of checks to run");
  check_cmd->add_option("--seed", check_seed, "seed for randomized checks");
  check_cmd->add_option("--out", check_out, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run_cmd->parsed()) {
      ordered_json cfg = load_config(run_config);
      if (run_seed_opt->count() > 0) cfg["stm"]["seed"] = run_seed;
      if (run_mode_opt->count() > 0) {
        if (run_mode != "verify" && run_mode != "production")
          throw std::invalid_argument("--mode: must be verify or production");
        cfg["stm"]["mode"] = run_mode;
      }
      if (run_scheme_opt->count() > 0) {
        if (run_scheme != "with" && run_scheme != "without")
          throw std::invalid_argument("--scheme: must be with or without");
        cfg["stm"]["sampling"] =
            run_scheme == "with" ? "with_replacement" : "without_replacement";
      }
      return cmd_run(cfg, run_out);
    }
    if (ss_cmd->parsed()) {
      ordered_json cfg = load_config(ss_config);
      if (ss_scheme_opt->count() > 0) cfg["scheme"] = ss_scheme;
      return cmd_sample_size(cfg, ss_out);
    }
    if (conc_cmd->parsed()) {
      ordered_json cfg = load_config(conc_config);
      if (conc_seed_opt->count() > 0) cfg["seed"] = conc_seed;
      if (conc_scheme_opt->count() > 0) cfg["scheme"] = conc_scheme;
      return cmd_concentration(cfg, conc_out);
    }
    if (check_cmd->parsed()) return cmd_check(check_names, check_seed, check_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << "error: no subcommand\n";
  return 1;
}

}  // namespace stm::cli
