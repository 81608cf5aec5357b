#pragma once

// Sample-size calculators for the sub-sampled derivative estimates, index
// samplers (with/without replacement), the sub-sampled estimator itself, and
// the closed-form tensor/matrix tail bounds the calculators descend from.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "stm/problems.hpp"
#include "stm/rng.hpp"

namespace stm {

enum class SampleScheme { WithReplacement, WithoutReplacement };

inline std::string to_string(SampleScheme s) {
  return s == SampleScheme::WithReplacement ? "with_replacement" : "without_replacement";
}

// Accuracy multipliers for the three derivative estimates: the gradient must
// land within kappa_g * eps, the Hessian within kappa_b * eps^(2/3) (along the
// step), the tensor within kappa_t * eps^(1/3).  Defaults are the values the
// step-size lemmas fix.
struct ConditionKappas {
  double g = 0.25;
  double b = 0.25;
  double t = 0.5;
};

// Range bounds entering the Hoeffding-style tail bounds: sigma_g bounds each
// component gradient's norm (L_f), sigma_b each Hessian's (L_g), and sigma_t
// the tensor range, taken symmetric: b - a = 2 L_b.
struct NoiseRanges {
  double sigma_g = 0.0;
  double sigma_b = 0.0;
  double sigma_t = 0.0;
};

inline NoiseRanges noise_from_lipschitz(const LipschitzConstants& lip) {
  NoiseRanges r;
  r.sigma_g = lip.f;
  r.sigma_b = lip.g;
  r.sigma_t = 2.0 * lip.b;
  return r;
}

struct PlanInputs {
  double eps = 0.0;
  double delta = 0.0;
  ConditionKappas kappas;
  NoiseRanges sigmas;
  int d = 0;
  std::int64_t N = 0;  // 0 = infinite population (with-replacement plans)
};

struct SamplePlan {
  std::int64_t n_g = 1;
  std::int64_t n_b = 1;
  std::int64_t n_t = 1;
  SampleScheme scheme = SampleScheme::WithoutReplacement;
  PlanInputs inputs;
  // Raw (pre-ceiling, pre-clamp) formula values, kept for diagnostics.
  double raw_g = 0.0;
  double raw_b = 0.0;
  double raw_t = 0.0;
  // Set when the size was clamped to the population: the estimate is exact.
  bool exact_g = false;
  bool exact_b = false;
  bool exact_t = false;
};

// k0 = 2k/log(3/2) for order k = 3, the combinatorial constant in the tensor
// tail bounds' dimensional prefactor k0^(3d).
inline constexpr int kTensorOrder = 3;
inline double tensor_k0() { return 2.0 * kTensorOrder / std::log(1.5); }

namespace detail {

inline void check_plan_inputs(double eps, double delta, const ConditionKappas& k,
                              const NoiseRanges& s, int d) {
  if (!(eps > 0.0) || eps > 1.0) throw std::invalid_argument("sample plan: eps must be in (0, 1]");
  if (!(delta > 0.0) || delta > 1.0) throw std::invalid_argument("sample plan: delta must be in (0, 1]");
  if (!(k.g > 0.0) || !(k.b > 0.0) || !(k.t > 0.0))
    throw std::invalid_argument("sample plan: kappas must be positive");
  if (s.sigma_g < 0.0 || s.sigma_b < 0.0 || s.sigma_t < 0.0)
    throw std::invalid_argument("sample plan: sigmas must be nonnegative");
  if (d < 1) throw std::invalid_argument("sample plan: dimension must be positive");
}

inline std::int64_t ceil_size(double raw) {
  if (!(raw > 1.0)) return 1;
  if (raw >= 9.0e18) return std::numeric_limits<std::int64_t>::max();
  return static_cast<std::int64_t>(std::ceil(raw));
}

// log(2 k0^(3d) / delta): the tensor bound's union over k0^(3d) grid points.
inline double tensor_log_term(int d, double delta) {
  return std::log(2.0) + 3.0 * d * std::log(tensor_k0()) - std::log(delta);
}

}  // namespace detail

// Sizes for sampling without replacement from a population of N components.
// The finite-population factor only helps, so sizes never exceed N; clamping
// to N makes that estimate exact.
inline SamplePlan plan_without_replacement(double eps, double delta, const ConditionKappas& kappas,
                                           const NoiseRanges& sigmas, int d, std::int64_t N) {
  detail::check_plan_inputs(eps, delta, kappas, sigmas, d);
  if (N < 1) throw std::invalid_argument("plan_without_replacement: N must be >= 1");
  SamplePlan plan;
  plan.scheme = SampleScheme::WithoutReplacement;
  plan.inputs = {eps, delta, kappas, sigmas, d, N};

  const double L1 = std::log(2.0 * d / delta);
  const double Lt = detail::tensor_log_term(d, delta);
  const double tg = kappas.g * eps;
  const double tb = kappas.b * std::pow(eps, 2.0 / 3.0);
  const double tt = kappas.t * std::cbrt(eps);
  const double sg2 = sigmas.sigma_g * sigmas.sigma_g;
  const double sb2 = sigmas.sigma_b * sigmas.sigma_b;
  const double st2 = sigmas.sigma_t * sigmas.sigma_t;

  plan.raw_g = 16.0 * sg2 * L1 / (tg * tg + (8.0 * sg2 / static_cast<double>(N)) * L1);
  plan.raw_b = 16.0 * sb2 * L1 / (tb * tb + (8.0 * sb2 / static_cast<double>(N)) * L1);
  plan.raw_t = 4.0 * st2 * Lt / (tt * tt + (2.0 * st2 / static_cast<double>(N)) * Lt);

  plan.n_g = std::min<std::int64_t>(detail::ceil_size(plan.raw_g), N);
  plan.n_b = std::min<std::int64_t>(detail::ceil_size(plan.raw_b), N);
  plan.n_t = std::min<std::int64_t>(detail::ceil_size(plan.raw_t), N);
  plan.exact_g = plan.n_g == N;
  plan.exact_b = plan.n_b == N;
  plan.exact_t = plan.n_t == N;
  return plan;
}

// Sizes for i.i.d. sampling with replacement (infinite-population bounds; no
// N clamp here — the caller clamps when applying to a finite sum).
inline SamplePlan plan_with_replacement(double eps, double delta, const ConditionKappas& kappas,
                                        const NoiseRanges& sigmas, int d) {
  detail::check_plan_inputs(eps, delta, kappas, sigmas, d);
  SamplePlan plan;
  plan.scheme = SampleScheme::WithReplacement;
  plan.inputs = {eps, delta, kappas, sigmas, d, 0};

  const double L1 = std::log(static_cast<double>(d) / delta);
  const double Lt = detail::tensor_log_term(d, delta);
  const double tg = kappas.g * eps;
  const double tb = kappas.b * std::pow(eps, 2.0 / 3.0);
  const double tt = kappas.t * std::cbrt(eps);

  plan.raw_g = 8.0 * sigmas.sigma_g * sigmas.sigma_g * L1 / (tg * tg);
  plan.raw_b = 8.0 * sigmas.sigma_b * sigmas.sigma_b * L1 / (tb * tb);
  plan.raw_t = 2.0 * sigmas.sigma_t * sigmas.sigma_t * Lt / (tt * tt);

  plan.n_g = detail::ceil_size(plan.raw_g);
  plan.n_b = detail::ceil_size(plan.raw_b);
  plan.n_t = detail::ceil_size(plan.raw_t);
  return plan;
}

// n indices from {0..N-1}: distinct via partial Fisher-Yates shuffle for
// WithoutReplacement, i.i.d. uniform for WithReplacement.  Deterministic
// given seed.
inline std::vector<int> sample_indices(std::int64_t N, std::int64_t n, SampleScheme scheme,
                                       std::uint64_t seed) {
  if (N < 1) throw std::invalid_argument("sample_indices: N must be >= 1");
  if (n < 1) throw std::invalid_argument("sample_indices: n must be >= 1");
  Rng rng(seed);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  if (scheme == SampleScheme::WithoutReplacement) {
    if (n > N) throw std::invalid_argument("sample_indices: n > N without replacement");
    std::vector<int> pool(static_cast<std::size_t>(N));
    std::iota(pool.begin(), pool.end(), 0);
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(N - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i)
      out.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(N))));
  }
  return out;
}

// Sub-sampled derivative estimate: the three index sets are drawn
// independently (per-purpose derived seeds), and each estimate is the
// arithmetic mean over its own set.  The bundle's value is the mean over the
// gradient set (diagnostic only; the driver always uses exact values).
inline DerivativeBundle estimate_derivatives(const FiniteSumProblem& problem, const Vector& x,
                                             const SamplePlan& plan, std::uint64_t seed) {
  const std::int64_t N = problem.components();
  const auto draw = [&](std::int64_t n, std::uint64_t tag) {
    return sample_indices(N, n, plan.scheme, derive_seed(seed, tag));
  };
  const std::vector<int> sg = draw(plan.n_g, 0x67);
  const std::vector<int> sb = draw(plan.n_b, 0x62);
  const std::vector<int> st = draw(plan.n_t, 0x74);

  const DerivativeBundle eg = mean_over_indices(problem, sg, x, 1);
  DerivativeBundle out;
  out.value = eg.value;
  out.grad = eg.grad;
  out.hess = std::move(*mean_over_indices(problem, sb, x, 2).hess);
  out.third = std::move(*mean_over_indices(problem, st, x, 3).third);
  return out;
}

// Closed-form tail bounds on derivative-estimate deviations.
//   TensorWithoutReplacement: k0^(sum d_i) * 2 exp(-t^2 n^2 / (2 sigma^2 (n+1)(1-n/N)))
//       for the deviation of the sample MEAN under without-replacement draws
//       (the n^2 in the numerator only cancels a mean's 1/n at this scale).
//   TensorIid:                k0^(sum d_i) * 2 exp(-t^2 / (2 n sigma^2))
//       for the deviation of the raw SUM of n i.i.d. tensors.
//   MatrixWithoutReplacement: (d1+d2) exp(-n t^2 / (8 sigma^2 (1+1/n)(1-n/N)))
//       for the deviation of the sample MEAN of matrices.
//   MatrixIid:                d * exp(-t^2 / (8 sigma^2))
//       for the deviation of the raw SUM of matrices.
enum class TailKind { TensorWithoutReplacement, TensorIid, MatrixWithoutReplacement, MatrixIid };

struct TailBound {
  TailKind kind = TailKind::TensorIid;
  std::vector<int> dims;  // one entry per tensor mode (k of them) / matrix side
  double sigma = 1.0;     // range bound on one summand
  std::int64_t n = 1;     // sample count
  std::int64_t N = 0;     // population (without-replacement kinds only)

  // log of the displayed bound; +inf never occurs, -inf encodes a zero bound.
  double log_value(double t) const {
    const double sum_dims = static_cast<double>(std::accumulate(dims.begin(), dims.end(), 0));
    const double nn = static_cast<double>(n);
    double log_prefactor = 0.0;
    double exponent = 0.0;
    switch (kind) {
      case TailKind::TensorWithoutReplacement: {
        log_prefactor = sum_dims * std::log(tensor_k0()) + std::log(2.0);
        const double depletion = 1.0 - nn / static_cast<double>(N);
        if (t > 0.0 && depletion <= 0.0) return -std::numeric_limits<double>::infinity();
        if (t > 0.0)
          exponent = -(t * t * nn * nn) / (2.0 * sigma * sigma * (nn + 1.0) * depletion);
        break;
      }
      case TailKind::TensorIid:
        log_prefactor = sum_dims * std::log(tensor_k0()) + std::log(2.0);
        exponent = -(t * t) / (2.0 * nn * sigma * sigma);
        break;
      case TailKind::MatrixWithoutReplacement: {
        log_prefactor = std::log(sum_dims);
        const double depletion = 1.0 - nn / static_cast<double>(N);
        if (t > 0.0 && depletion <= 0.0) return -std::numeric_limits<double>::infinity();
        if (t > 0.0)
          exponent = -(nn * t * t) / (8.0 * sigma * sigma * (1.0 + 1.0 / nn) * depletion);
        break;
      }
      case TailKind::MatrixIid:
        log_prefactor = std::log(sum_dims);
        exponent = -(t * t) / (8.0 * sigma * sigma);
        break;
    }
    return log_prefactor + exponent;
  }

  // The bound as a probability: min(exp(log_value), 1).
  double operator()(double t) const {
    const double lv = log_value(t);
    if (lv >= 0.0) return 1.0;
    return std::exp(lv);
  }

  bool vacuous(double t) const { return log_value(t) >= 0.0; }
};

inline TailBound tail_bound(TailKind kind, std::vector<int> dims, double sigma, std::int64_t n,
                            std::int64_t N = 0) {
  if (dims.empty()) throw std::invalid_argument("tail_bound: dims must be nonempty");
  for (int di : dims)
    if (di < 1) throw std::invalid_argument("tail_bound: dims must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("tail_bound: sigma must be positive");
  if (n < 1) throw std::invalid_argument("tail_bound: n must be >= 1");
  const bool wor =
      kind == TailKind::TensorWithoutReplacement || kind == TailKind::MatrixWithoutReplacement;
  if (wor && N < n) throw std::invalid_argument("tail_bound: need N >= n without replacement");
  TailBound b;
  b.kind = kind;
  b.dims = std::move(dims);
  b.sigma = sigma;
  b.n = n;
  b.N = N;
  return b;
}

}  // namespace stm
