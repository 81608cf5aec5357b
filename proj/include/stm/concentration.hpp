#pragma once
// Monte Carlo laboratory for the deviation tail bounds: finite populations
// of random tensors with certified directional range bounds, sub-sampling
// tail simulation (with and without replacement), Wilson confidence
// intervals for the empirical exceedance frequencies, and the crossover
// point where a closed-form bound first becomes informative.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "eigensolve.hpp"
#include "linalg.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sampling.hpp"
#include "tensor.hpp"

namespace stm {

enum class PopulationRecipe { RankOne, GaussianSymmetric };

inline const char* to_string(PopulationRecipe r) {
  switch (r) {
    case PopulationRecipe::RankOne: return "rank_one";
    case PopulationRecipe::GaussianSymmetric: return "gaussian_symmetric";
  }
  return "unknown";
}

// Normal quantiles for the 99% confidence statements used throughout the lab.
inline constexpr double kWilsonZ99 = 2.5758293035489004;       // two-sided 99%
inline constexpr double kZ99OneSided = 2.3263478740408408;     // one-sided 99%

struct WilsonInterval {
  double lower = 0.0;
  double upper = 1.0;
  double half = 0.5;  // half-width around the adjusted center
};

// Wilson score interval for a binomial proportion at confidence level z.
inline WilsonInterval wilson_interval(std::int64_t successes, std::int64_t trials, double z) {
  if (trials < 1) throw std::invalid_argument("wilson_interval: trials must be >= 1");
  if (successes < 0 || successes > trials)
    throw std::invalid_argument("wilson_interval: successes out of range");
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  WilsonInterval w;
  w.half = half;
  w.lower = std::max(0.0, center - half);
  w.upper = std::min(1.0, center + half);
  return w;
}

// A finite population of N symmetric tensors of one fixed order (1 = vectors,
// 2 = matrices, 3 = third-order tensors) together with its exact mean and a
// certified directional range width sigma: every member satisfies
// |Y_i(u_1..u_k)| <= sigma/2 for all unit tuples.  sigma is the larger of an
// analytic per-member bound and a randomized directional probe, so the value
// fed into the tail bounds is always valid.
class TensorPopulation {
 public:
  static TensorPopulation rank_one(int order, int dim, std::int64_t count, std::uint64_t seed) {
    TensorPopulation p(order, dim, count, PopulationRecipe::RankOne);
    Rng rng(derive_seed(seed, 0xBEEF));
    double analytic = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
      Vector a(dim);
      for (int j = 0; j < dim; ++j) a[j] = rng.normal();
      const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
      const double c = sign * rng.uniform(0.5, 1.5);
      const double an = a.norm();
      switch (order) {
        case 1:
          p.vecs_.push_back(c * a);
          analytic = std::max(analytic, 2.0 * std::abs(c) * an);
          break;
        case 2: {
          SymMatrix m(dim);
          m.add_outer(a, c);
          p.mats_.push_back(std::move(m));
          analytic = std::max(analytic, 2.0 * std::abs(c) * an * an);
          break;
        }
        default: {
          SymTensor3 t(dim);
          t.add_scaled_rank1(a, c);
          p.tens_.push_back(std::move(t));
          analytic = std::max(analytic, 2.0 * std::abs(c) * an * an * an);
          break;
        }
      }
    }
    p.finalize(analytic, derive_seed(seed, 0xF00D));
    return p;
  }

  static TensorPopulation gaussian_symmetric(int order, int dim, std::int64_t count,
                                             std::uint64_t seed) {
    TensorPopulation p(order, dim, count, PopulationRecipe::GaussianSymmetric);
    Rng rng(derive_seed(seed, 0xBEEF));
    double analytic = 0.0;
    for (std::int64_t i = 0; i < count; ++i) {
      switch (order) {
        case 1: {
          Vector v(dim);
          for (int j = 0; j < dim; ++j) v[j] = rng.normal();
          analytic = std::max(analytic, 2.0 * v.norm());
          p.vecs_.push_back(std::move(v));
          break;
        }
        case 2: {
          SymMatrix m(dim);
          for (int r = 0; r < dim; ++r)
            for (int c = r; c < dim; ++c) m.set(r, c, rng.normal());
          analytic = std::max(analytic, 2.0 * sym_operator_norm(m));
          p.mats_.push_back(std::move(m));
          break;
        }
        default: {
          SymTensor3 t(dim);
          for (int a = 0; a < dim; ++a)
            for (int b = a; b < dim; ++b)
              for (int c = b; c < dim; ++c) t.set(a, b, c, rng.normal());
          analytic = std::max(analytic, 2.0 * t.frobenius_norm());
          p.tens_.push_back(std::move(t));
          break;
        }
      }
    }
    p.finalize(analytic, derive_seed(seed, 0xF00D));
    return p;
  }

  int order() const { return order_; }
  int dim() const { return dim_; }
  std::int64_t size() const { return count_; }
  PopulationRecipe recipe() const { return recipe_; }
  double sigma() const { return sigma_; }
  double sigma_analytic() const { return sigma_analytic_; }
  double sigma_probed() const { return sigma_probed_; }

  const std::vector<Vector>& vectors() const { return require(1), vecs_; }
  const std::vector<SymMatrix>& matrices() const { return require(2), mats_; }
  const std::vector<SymTensor3>& tensors() const { return require(3), tens_; }
  const Vector& mean_vector() const { return require(1), mean_vec_; }
  const SymMatrix& mean_matrix() const { return require(2), mean_mat_; }
  const SymTensor3& mean_tensor() const { return require(3), mean_ten_; }

  // Y_i(u_1..u_k) for an arbitrary (not necessarily repeated) unit tuple.
  double member_value(std::int64_t i, const std::vector<Vector>& tuple) const {
    if (i < 0 || i >= count_) throw std::invalid_argument("member_value: index out of range");
    if (static_cast<int>(tuple.size()) != order_)
      throw std::invalid_argument("member_value: tuple size must equal the tensor order");
    for (const Vector& u : tuple)
      if (u.size() != dim_) throw std::invalid_argument("member_value: tuple dim mismatch");
    const auto idx = static_cast<std::size_t>(i);
    switch (order_) {
      case 1:
        return vecs_[idx].dot(tuple[0]);
      case 2:
        return tuple[0].dot(mats_[idx].dense() * tuple[1]);
      default: {
        double acc = 0.0;
        const SymTensor3& t = tens_[idx];
        for (int a = 0; a < dim_; ++a)
          for (int b = 0; b < dim_; ++b)
            for (int c = 0; c < dim_; ++c) acc += t(a, b, c) * tuple[0][a] * tuple[1][b] * tuple[2][c];
        return acc;
      }
    }
  }

 private:
  TensorPopulation(int order, int dim, std::int64_t count, PopulationRecipe recipe)
      : order_(order), dim_(dim), count_(count), recipe_(recipe) {
    if (order < 1 || order > 3)
      throw std::invalid_argument("TensorPopulation: order must be 1, 2, or 3");
    if (dim < 1) throw std::invalid_argument("TensorPopulation: dim must be positive");
    if (count < 1) throw std::invalid_argument("TensorPopulation: population size must be >= 1");
  }

  void require(int order) const {
    if (order_ != order) throw std::logic_error("TensorPopulation: accessor/order mismatch");
  }

  void finalize(double analytic, std::uint64_t probe_seed) {
    // Exact mean, summed in member order (deterministic).
    const double inv = 1.0 / static_cast<double>(count_);
    switch (order_) {
      case 1: {
        mean_vec_ = Vector::Zero(dim_);
        for (const Vector& v : vecs_) mean_vec_ += v;
        mean_vec_ *= inv;
        break;
      }
      case 2: {
        mean_mat_ = SymMatrix(dim_);
        for (const SymMatrix& m : mats_) mean_mat_.add_scaled(m, inv);
        break;
      }
      default: {
        mean_ten_ = SymTensor3(dim_);
        for (const SymTensor3& t : tens_) mean_ten_.add_scaled(t, inv);
        break;
      }
    }
    // Directional probe: random (member, unit tuple) draws.  The analytic
    // value already dominates every directional value, so the probe serves
    // as a cross-check; the larger of the two is declared.
    Rng rng(probe_seed);
    double probed = 0.0;
    std::vector<Vector> tuple(static_cast<std::size_t>(order_));
    for (int trial = 0; trial < kProbeTuples; ++trial) {
      const auto i = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(count_)));
      for (Vector& u : tuple) {
        u = Vector(dim_);
        double nrm = 0.0;
        while (nrm < 1e-12) {
          for (int j = 0; j < dim_; ++j) u[j] = rng.normal();
          nrm = u.norm();
        }
        u /= nrm;
      }
      probed = std::max(probed, 2.0 * std::abs(member_value(i, tuple)));
    }
    sigma_analytic_ = analytic;
    sigma_probed_ = probed;
    sigma_ = std::max(analytic, probed);
  }

  static constexpr int kProbeTuples = 10000;

  int order_;
  int dim_;
  std::int64_t count_;
  PopulationRecipe recipe_;
  std::vector<Vector> vecs_;
  std::vector<SymMatrix> mats_;
  std::vector<SymTensor3> tens_;
  Vector mean_vec_;
  SymMatrix mean_mat_;
  SymTensor3 mean_ten_;
  double sigma_ = 0.0;
  double sigma_analytic_ = 0.0;
  double sigma_probed_ = 0.0;
};

namespace detail {

// Certified covering grid of the unit sphere in R^3 with chord covering
// radius <= delta: latitude rings at (i+1/2)*delta with ceil(2*pi*sin/delta)
// points each.  For any unit y there is a grid point p with
// |y - p| <= |dpsi| + sin(psi_ring)*|dtheta| <= delta/2 + delta/2.
inline std::vector<Vector> sphere_cover_3d(double delta) {
  if (!(delta > 0.0) || delta > 1.0)
    throw std::invalid_argument("sphere_cover_3d: delta must be in (0, 1]");
  const double pi = 3.14159265358979323846;
  std::vector<Vector> pts;
  const int rings = static_cast<int>(std::ceil(pi / delta));
  for (int i = 0; i < rings; ++i) {
    const double psi = (i + 0.5) * delta;
    const double s = std::sin(std::min(psi, pi));
    const double c = std::cos(std::min(psi, pi));
    const int m = std::max(1, static_cast<int>(std::ceil(2.0 * pi * s / delta)));
    for (int j = 0; j < m; ++j) {
      const double theta = 2.0 * pi * (j + 0.5) / m;
      Vector p(3);
      p[0] = s * std::cos(theta);
      p[1] = s * std::sin(theta);
      p[2] = c;
      pts.push_back(std::move(p));
    }
  }
  return pts;
}

// Unique monomials y_a*y_b*y_c (a<=b<=c) with symmetry multiplicities, so a
// third-order form evaluates as a dot product against per-point monomial
// tables.
struct CubicMonomials {
  std::vector<std::array<int, 3>> index;
  std::vector<double> multiplicity;
};

inline CubicMonomials cubic_monomials(int dim) {
  CubicMonomials m;
  for (int a = 0; a < dim; ++a)
    for (int b = a; b < dim; ++b)
      for (int c = b; c < dim; ++c) {
        double mult = 6.0;           // 3! distinct orderings
        if (a == b && b == c) mult = 1.0;
        else if (a == b || b == c) mult = 3.0;
        m.index.push_back({a, b, c});
        m.multiplicity.push_back(mult);
      }
  return m;
}

}  // namespace detail

struct TailSimOptions {
  int power_restarts = 8;     // spectral lower-bound restarts per trial
  double power_tol = 1e-8;
  bool grid_oracle = false;   // certified two-sided norms (order 3, dim 3 only)
  double grid_delta = 0.05;   // chord covering radius of the oracle grid
};

// One simulated tail curve: empirical exceedance frequencies with Wilson 99%
// intervals against the closed-form bound, plus the per-trial deviation norms
// in the bound's own normalization (sample mean for without-replacement, raw
// sum for i.i.d. draws) and in mean normalization for cross-scheme intuition.
struct TailEstimate {
  std::vector<double> t_grid;
  std::vector<double> empirical_freq;
  std::vector<double> wilson_upper;
  std::vector<double> wilson_half;
  std::vector<double> bound_value;
  std::vector<char> informative;          // bound_value < 1
  std::vector<double> deviations;         // per trial, theorem normalization
  std::vector<double> mean_deviations;    // per trial, mean normalization
  std::vector<double> deviations_lower;   // grid oracle mode: power-iteration lower bounds
  std::int64_t trials = 0;
  std::int64_t n = 0;
  SampleScheme scheme = SampleScheme::WithoutReplacement;
  std::uint64_t seed = 0;
  TailBound bound;
};

// Seed stream for trial j of a simulation seeded with `seed`.
inline std::uint64_t trial_seed(std::uint64_t seed, std::int64_t trial) {
  return derive_seed(seed, 0xD1A1, static_cast<std::uint64_t>(trial));
}

// The closed-form tail bound matching a (population, n, scheme) triple:
// matrix families for order 2, tensor families otherwise, finite-population
// variants without replacement.
inline TailBound population_bound(const TensorPopulation& pop, std::int64_t n,
                                  SampleScheme scheme) {
  const bool wor = scheme == SampleScheme::WithoutReplacement;
  const TailKind kind =
      pop.order() == 2 ? (wor ? TailKind::MatrixWithoutReplacement : TailKind::MatrixIid)
                       : (wor ? TailKind::TensorWithoutReplacement : TailKind::TensorIid);
  std::vector<int> dims(static_cast<std::size_t>(pop.order()), pop.dim());
  return tail_bound(kind, std::move(dims), pop.sigma(), n, wor ? pop.size() : 0);
}

// Draws `n` members per trial under `scheme`, forms the deviation from the
// exact expectation in the normalization of the matching closed-form bound
// (sample mean without replacement, raw sum with replacement), measures its
// norm, and tabulates exceedance frequencies over t_grid.  Trials run
// concurrently on per-trial seed streams; aggregation is a serial pass in
// trial order, so results are identical for every worker count.
inline TailEstimate simulate_tail(const TensorPopulation& pop, std::int64_t n,
                                  SampleScheme scheme, std::int64_t trials,
                                  const std::vector<double>& t_grid, std::uint64_t seed,
                                  const TailSimOptions& opt = {}) {
  if (trials < 1000) throw std::invalid_argument("simulate_tail: trials must be >= 1000");
  if (n < 1) throw std::invalid_argument("simulate_tail: n must be >= 1");
  const std::int64_t N = pop.size();
  const bool wor = scheme == SampleScheme::WithoutReplacement;
  if (wor && n > N)
    throw std::invalid_argument(
        "simulate_tail: scheme/population mismatch (without-replacement draw larger than the "
        "population)");
  if (t_grid.empty()) throw std::invalid_argument("simulate_tail: t_grid must be nonempty");
  for (std::size_t j = 0; j < t_grid.size(); ++j) {
    if (!std::isfinite(t_grid[j]) || t_grid[j] < 0.0)
      throw std::invalid_argument("simulate_tail: t_grid values must be finite and >= 0");
    if (j > 0 && t_grid[j] <= t_grid[j - 1])
      throw std::invalid_argument("simulate_tail: t_grid must be strictly increasing");
  }
  const int d = pop.dim();
  const int order = pop.order();
  if (opt.grid_oracle && (order != 3 || d != 3))
    throw std::invalid_argument("simulate_tail: grid oracle supports order 3, dim 3 only");

  TailEstimate est;
  est.t_grid = t_grid;
  est.trials = trials;
  est.n = n;
  est.scheme = scheme;
  est.seed = seed;
  est.bound = population_bound(pop, n, scheme);

  // Oracle tables: monomial values per grid point, so each trial evaluates
  // the cubic form as one dot product per point.
  std::vector<Vector> grid;
  detail::CubicMonomials mono;
  std::vector<double> mono_table;  // grid-major [point][monomial]
  if (opt.grid_oracle) {
    grid = detail::sphere_cover_3d(opt.grid_delta);
    mono = detail::cubic_monomials(d);
    mono_table.resize(grid.size() * mono.index.size());
    for (std::size_t p = 0; p < grid.size(); ++p)
      for (std::size_t m = 0; m < mono.index.size(); ++m) {
        const auto& ix = mono.index[m];
        mono_table[p * mono.index.size() + m] =
            mono.multiplicity[m] * grid[p][ix[0]] * grid[p][ix[1]] * grid[p][ix[2]];
      }
  }

  est.deviations.assign(static_cast<std::size_t>(trials), 0.0);
  est.mean_deviations.assign(static_cast<std::size_t>(trials), 0.0);
  if (opt.grid_oracle) est.deviations_lower.assign(static_cast<std::size_t>(trials), 0.0);

  parallel_for(trials, [&](std::int64_t trial) {
    const std::uint64_t ts = trial_seed(seed, trial);
    const std::vector<int> idx = sample_indices(N, n, scheme, ts);
    const double nn = static_cast<double>(n);
    double norm_theorem = 0.0;
    double norm_mean = 0.0;
    switch (order) {
      case 1: {
        Vector sum = Vector::Zero(d);
        for (int i : idx) sum += pop.vectors()[static_cast<std::size_t>(i)];
        const Vector dev = wor ? Vector(sum / nn - pop.mean_vector())
                               : Vector(sum - nn * pop.mean_vector());
        norm_theorem = dev.norm();
        norm_mean = wor ? norm_theorem : norm_theorem / nn;
        break;
      }
      case 2: {
        SymMatrix dev(d);
        for (int i : idx) dev.add_scaled(pop.matrices()[static_cast<std::size_t>(i)], wor ? 1.0 / nn : 1.0);
        dev.add_scaled(pop.mean_matrix(), wor ? -1.0 : -nn);
        norm_theorem = sym_operator_norm(dev);
        norm_mean = wor ? norm_theorem : norm_theorem / nn;
        break;
      }
      default: {
        SymTensor3 dev(d);
        for (int i : idx) dev.add_scaled(pop.tensors()[static_cast<std::size_t>(i)], wor ? 1.0 / nn : 1.0);
        dev.add_scaled(pop.mean_tensor(), wor ? -1.0 : -nn);
        if (opt.grid_oracle) {
          std::vector<double> coef(mono.index.size());
          for (std::size_t m = 0; m < mono.index.size(); ++m) {
            const auto& ix = mono.index[m];
            coef[m] = dev(ix[0], ix[1], ix[2]);
          }
          double grid_max = 0.0;
          const std::size_t nm = mono.index.size();
          for (std::size_t p = 0; p < grid.size(); ++p) {
            double v = 0.0;
            const double* row = &mono_table[p * nm];
            for (std::size_t m = 0; m < nm; ++m) v += coef[m] * row[m];
            grid_max = std::max(grid_max, std::abs(v));
          }
          // |T[y]^3 - T[p]^3| <= 3 ||T||_F |y - p| for unit y, p.
          norm_theorem = grid_max + 3.0 * dev.frobenius_norm() * opt.grid_delta;
          est.deviations_lower[static_cast<std::size_t>(trial)] =
              spectral_norm_lower(dev, opt.power_restarts, opt.power_tol,
                                  derive_seed(ts, 0x909))
                  .value;
        } else {
          norm_theorem = spectral_norm_lower(dev, opt.power_restarts, opt.power_tol,
                                             derive_seed(ts, 0x909))
                             .value;
        }
        norm_mean = wor ? norm_theorem : norm_theorem / nn;
        break;
      }
    }
    est.deviations[static_cast<std::size_t>(trial)] = norm_theorem;
    est.mean_deviations[static_cast<std::size_t>(trial)] = norm_mean;
  });

  est.empirical_freq.reserve(t_grid.size());
  est.wilson_upper.reserve(t_grid.size());
  est.wilson_half.reserve(t_grid.size());
  est.bound_value.reserve(t_grid.size());
  est.informative.reserve(t_grid.size());
  for (double t : t_grid) {
    std::int64_t count = 0;
    for (double dev : est.deviations) count += dev >= t ? 1 : 0;
    const double freq = static_cast<double>(count) / static_cast<double>(trials);
    const WilsonInterval w = wilson_interval(count, trials, kWilsonZ99);
    const double b = est.bound(t);
    est.empirical_freq.push_back(freq);
    est.wilson_upper.push_back(w.upper);
    est.wilson_half.push_back(w.half);
    est.bound_value.push_back(b);
    est.informative.push_back(b < 1.0 ? 1 : 0);
  }
  return est;
}

// Largest violation of "frequency minus Wilson half-width <= bound" over the
// informative grid points (negative or zero means the estimate is sound).
inline double max_soundness_gap(const TailEstimate& e) {
  double gap = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < e.t_grid.size(); ++j) {
    if (!e.informative[j]) continue;
    gap = std::max(gap, e.empirical_freq[j] - e.wilson_half[j] - e.bound_value[j]);
  }
  return gap;
}

struct DominanceCheck {
  double mean_without = 0.0;
  double mean_with = 0.0;
  double zscore = 0.0;   // (mean_without - mean_with) / se of the difference
  bool dominated = false;  // mean_without <= mean_with at one-sided 99%
};

// Empirical check that without-replacement deviations are dominated by
// with-replacement deviations at the same n, via mean-normalized per-trial
// norms (the only normalization comparable across the two schemes).
inline DominanceCheck dominance_check(const TailEstimate& without_rep,
                                      const TailEstimate& with_rep) {
  if (without_rep.scheme != SampleScheme::WithoutReplacement ||
      with_rep.scheme != SampleScheme::WithReplacement)
    throw std::invalid_argument("dominance_check: pass (without, with) replacement estimates");
  auto stats = [](const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= std::max(1.0, n - 1.0);
    return std::pair<double, double>(mean, var / n);
  };
  const auto [mu_wor, se2_wor] = stats(without_rep.mean_deviations);
  const auto [mu_wr, se2_wr] = stats(with_rep.mean_deviations);
  DominanceCheck c;
  c.mean_without = mu_wor;
  c.mean_with = mu_wr;
  const double se = std::sqrt(se2_wor + se2_wr);
  c.zscore = se > 0.0 ? (mu_wor - mu_wr) / se : (mu_wor > mu_wr ? kZ99OneSided + 1.0 : 0.0);
  c.dominated = c.zscore <= kZ99OneSided;
  return c;
}

// Smallest t where the bound drops below 1 (becomes informative): bisection
// on the monotone bound function.  Returns 0 when the bound is informative
// for every positive t (exhaustive without-replacement sampling) and +inf
// when it is informative nowhere.
inline double bound_crossover(const TailBound& bound) {
  // NaN bound values (degenerate parameters) count as uninformative.
  const auto informative = [&bound](double t) { return bound(t) < 1.0; };
  if (informative(1e-300)) return 0.0;
  double lo = 0.0;
  double hi = 1.0;
  while (!informative(hi)) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) return std::numeric_limits<double>::infinity();
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (informative(mid) ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

// Log-spaced grid across [crossover/4, 4*crossover], the window where the
// bound transitions from vacuous to informative.
inline std::vector<double> default_t_grid(const TailBound& bound, int points = 9) {
  if (points < 2) throw std::invalid_argument("default_t_grid: need at least 2 points");
  const double cross = bound_crossover(bound);
  if (!(cross > 0.0) || !std::isfinite(cross))
    throw std::invalid_argument("default_t_grid: bound has no positive finite crossover");
  const double lo = std::log(cross / 4.0);
  const double hi = std::log(cross * 4.0);
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(points));
  for (int j = 0; j < points; ++j)
    grid.push_back(std::exp(lo + (hi - lo) * j / (points - 1)));
  return grid;
}

}  // namespace stm
