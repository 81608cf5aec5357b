#pragma once

// Approximate minimizer of the regularized fourth-order model m(s).  The
// returned step satisfies the acceptance test
//     m(s) < m(0)  and  chi_{m,i}(s) <= theta * |s|^{4-i},  i = 1..3,
// or is a best-effort point with status MaxIter.  Machinery: a warm start from
// the exact solution of the T=0 regularized quadratic subproblem (secular
// equation in the eigenbasis), modified-Newton descent with Armijo
// backtracking, and escape steps along negative-curvature eigenvectors or
// third-order certificates when the higher-order tests fail.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "stm/criticality.hpp"
#include "stm/eigensolve.hpp"
#include "stm/linalg.hpp"
#include "stm/model.hpp"
#include "stm/rng.hpp"

namespace stm {

enum class SubsolveStatus { Converged, MaxIter, StalledAtZero };

inline const char* to_string(SubsolveStatus s) {
  switch (s) {
    case SubsolveStatus::Converged: return "converged";
    case SubsolveStatus::MaxIter: return "max_iter";
    case SubsolveStatus::StalledAtZero: return "stalled_at_zero";
  }
  return "unknown";
}

struct SubsolveResult {
  Vector s;
  double model_value = 0.0;
  CriticalityTriple chi_m;  // measures of the model at the returned step
  int iterations = 0;       // outer-loop iterations
  int gradient_evals = 0;   // model-gradient evaluations (the budgeted resource)
  SubsolveStatus status = SubsolveStatus::MaxIter;
};

namespace detail {

// Real roots of c3 x^3 + c2 x^2 + c1 x + c0 (c3 != 0), Cardano/trigonometric,
// each polished by two Newton steps.
inline std::vector<double> real_cubic_roots(double c3, double c2, double c1, double c0) {
  const double a = c2 / c3, b = c1 / c3, c = c0 / c3;
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  const double shift = -a / 3.0;
  const double disc = 0.25 * q * q + p * p * p / 27.0;
  std::vector<double> roots;
  if (disc > 0.0) {
    const double sq = std::sqrt(disc);
    roots.push_back(std::cbrt(-0.5 * q + sq) + std::cbrt(-0.5 * q - sq) + shift);
  } else if (disc == 0.0) {
    const double u = std::cbrt(-0.5 * q);
    roots.push_back(2.0 * u + shift);
    roots.push_back(-u + shift);
  } else {
    const double r = std::sqrt(-p * p * p / 27.0);
    const double phi = std::acos(std::clamp(-0.5 * q / r, -1.0, 1.0));
    const double mag = 2.0 * std::sqrt(-p / 3.0);
    for (int k = 0; k < 3; ++k)
      roots.push_back(mag * std::cos((phi + 2.0 * M_PI * k) / 3.0) + shift);
  }
  for (double& x : roots)
    for (int it = 0; it < 2; ++it) {
      const double f = ((c3 * x + c2) * x + c1) * x + c0;
      const double df = (3.0 * c3 * x + 2.0 * c2) * x + c1;
      if (df != 0.0) x -= f / df;
    }
  return roots;
}

// Candidate minimizers of g's + s'Bs/2 + (sigma/4)|s|^4 via the secular
// equation |s(r)| = r with s(r) = -(B + sigma r^2 I)^{-1} g on the branch
// lambda_min + sigma r^2 >= 0.  The eigenvalue-cluster ("hard") case returns
// both signed fill-ins along the bottom eigenvector.
inline std::vector<Vector> secular_candidates(const Vector& g, const EigenSym& eb, double sigma) {
  const int d = static_cast<int>(g.size());
  const Vector gh = eb.vectors.transpose() * g;
  const double lmin = eb.values[0];
  const auto sh_at = [&](double r) {
    Vector sh(d);
    for (int i = 0; i < d; ++i) {
      const double den = eb.values[i] + sigma * r * r;
      sh[i] = (std::abs(den) > 1e-300) ? -gh[i] / den : 0.0;
    }
    return sh;
  };
  const auto norm_at = [&](double r) { return sh_at(r).norm(); };

  const double r_branch = lmin < 0.0 ? std::sqrt(-lmin / sigma) : 0.0;
  const double lo0 = r_branch > 0.0 ? r_branch * (1.0 + 1e-12) + 1e-18 : 0.0;

  std::vector<Vector> out;
  if (norm_at(lo0) >= lo0) {
    // Easy case: the residual |s(r)| - r is positive at the branch point and
    // eventually negative; bisect.
    double lo = lo0;
    double hi = std::max(1.0, 2.0 * lo + 1.0);
    while (norm_at(hi) >= hi) hi *= 2.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (norm_at(mid) >= mid)
        lo = mid;
      else
        hi = mid;
    }
    out.push_back(eb.vectors * sh_at(0.5 * (lo + hi)));
  } else if (r_branch > 0.0) {
    // Hard case: no gradient mass on the bottom eigenspace; fill the missing
    // norm along the bottom eigenvector, both signs.
    const double span = std::max(1.0, std::abs(eb.values[d - 1] - lmin));
    Vector sh(d);
    double partial = 0.0;
    for (int i = 0; i < d; ++i) {
      const double den = eb.values[i] + sigma * r_branch * r_branch;
      sh[i] = (eb.values[i] - lmin > 1e-10 * span) ? -gh[i] / den : 0.0;
      partial += sh[i] * sh[i];
    }
    const double tau = std::sqrt(std::max(0.0, r_branch * r_branch - partial));
    for (const double sgn : {1.0, -1.0}) {
      Vector shc = sh;
      shc[0] += sgn * tau;
      out.push_back(eb.vectors * shc);
    }
  } else {
    out.push_back(eb.vectors * sh_at(0.0));
  }
  return out;
}

// Backtracking escape along +-v from s: halve alpha from alpha0, pick the
// smaller of the two signs at each scale, accept the first strict decrease.
inline std::optional<std::pair<Vector, double>> escape_step(const QuarticModel& model, const Vector& s,
                                                            const Vector& v, double m_s) {
  double alpha = 1.0 / std::sqrt(model.sigma());
  for (int j = 0; j < 60; ++j, alpha *= 0.5) {
    const Vector sp = s + alpha * v;
    const Vector sm = s - alpha * v;
    const double mp = model.eval(sp);
    const double mm = model.eval(sm);
    const bool plus = mp <= mm;
    const double mb = plus ? mp : mm;
    if (mb < m_s) return std::make_pair(plus ? sp : sm, mb);
  }
  return std::nullopt;
}

inline std::optional<std::pair<Vector, double>> armijo_step(const QuarticModel& model, const Vector& s,
                                                            double m_s, const Vector& g,
                                                            const Vector& dir) {
  const double slope = g.dot(dir);  // strictly negative for a descent direction
  double alpha = 1.0;
  for (int j = 0; j < 60; ++j, alpha *= 0.5) {
    const Vector sn = s + alpha * dir;
    const double mn = model.eval(sn);
    if (mn <= m_s + 1e-4 * alpha * slope) return std::make_pair(sn, mn);
  }
  return std::nullopt;
}

}  // namespace detail

// Minimize the model until the acceptance test holds.  `budget` counts
// model-gradient evaluations.  `model_value_trace`, when given, receives the
// model value at every outer iterate (it is always non-increasing).
inline SubsolveResult subsolve(const QuarticModel& model, double theta, double zeta,
                               int budget = 500, std::uint64_t seed = 0,
                               std::vector<double>* model_value_trace = nullptr) {
  if (!(theta > 0.0)) throw std::invalid_argument("subsolve: theta must be > 0");
  if (!(zeta >= 0.0)) throw std::invalid_argument("subsolve: zeta must be >= 0");
  if (budget < 1) throw std::invalid_argument("subsolve: budget must be >= 1");

  const int d = model.dim();
  const double m0 = model.f0();

  // ---- warm start: best of {0, line minimizers along the bottom eigenvector,
  // secular solutions of the T-free subproblem} under the full model value.
  const EigenSym eb = jacobi_eigensym(model.B());
  std::vector<Vector> starts;
  starts.push_back(Vector::Zero(d));
  if (eb.values[0] < 0.0) {
    const Vector v = eb.vectors.col(0);
    const double gv = model.g().dot(v);
    const double bv = model.B().quad(v);
    const double tv = model.T().contract3(v);
    // stationary points of the 1-D restriction t -> m(t v)
    for (const double t : detail::real_cubic_roots(model.sigma(), 0.5 * tv, bv, gv)) {
      if (std::isfinite(t)) starts.push_back(t * v);
    }
  }
  for (Vector& c : detail::secular_candidates(model.g(), eb, model.sigma()))
    if (c.allFinite()) starts.push_back(std::move(c));

  Vector s = starts.front();
  double m_s = m0;
  for (const Vector& c : starts) {
    const double mc = model.eval(c);
    if (mc < m_s) {
      s = c;
      m_s = mc;
    }
  }

  SubsolveResult res;
  res.status = SubsolveStatus::MaxIter;
  if (model_value_trace) model_value_trace->push_back(m_s);

  int ge = 0;
  int it = 0;
  while (ge < budget) {
    ++it;
    const Vector g = model.grad(s);
    ++ge;
    const double ns = s.norm();
    const SymMatrix hess = model.hess(s);
    const EigenSym eig = jacobi_eigensym(hess);
    const double chi2 = std::max(0.0, -eig.values[0]);

    const bool c1 = g.norm() <= theta * ns * ns * ns;
    const bool c2 = chi2 <= theta * ns * ns;

    const auto advance = [&](const std::pair<Vector, double>& step) {
      s = step.first;
      m_s = step.second;
      if (model_value_trace) model_value_trace->push_back(m_s);
    };

    if (c1 && c2) {
      const ThirdForm form = model.third_form(s);
      const SpectralEstimate probe = constrained_max_abs_cubic(
          hess, form, zeta, 4, 1e-10, derive_seed(seed, 0xC3, static_cast<std::uint64_t>(it)));
      if (probe.value <= theta * ns) {
        if (ns == 0.0) {
          // g = 0 exactly, B PSD, and no third-order mass at the origin: the
          // model is already critical there and m(s) < m(0) is unattainable.
          res.s = s;
          res.model_value = m_s;
          res.chi_m = CriticalityTriple{0.0, chi2, probe.value, probe.certificate};
          res.iterations = it;
          res.gradient_evals = ge;
          res.status = SubsolveStatus::StalledAtZero;
          return res;
        }
        // Full-strength re-check before declaring success.
        const SpectralEstimate ver = constrained_max_abs_cubic(
            hess, form, zeta, 16, 1e-10, derive_seed(seed, 0xF16A1, static_cast<std::uint64_t>(it)));
        if (ver.value <= theta * ns) {
          res.s = s;
          res.model_value = m_s;
          res.chi_m = CriticalityTriple{g.norm(), chi2, ver.value, ver.certificate};
          res.iterations = it;
          res.gradient_evals = ge;
          res.status = SubsolveStatus::Converged;
          return res;
        }
        // The stronger search found a violating direction: escape along it.
        if (ver.certificate.size() > 0) {
          const auto step = detail::escape_step(model, s, ver.certificate, m_s);
          if (step) {
            advance(*step);
            continue;
          }
        }
        break;  // no usable escape: best effort
      }
      if (probe.certificate.size() > 0) {
        const auto step = detail::escape_step(model, s, probe.certificate, m_s);
        if (step) {
          advance(*step);
          continue;
        }
      }
      break;
    }

    if (!c1) {
      // Modified-Newton direction: flip/floor the eigenvalues to a positive-
      // definite preconditioner, so the direction is always descent.
      const double nu = 1e-8 * std::max(1.0, std::abs(eig.values[d - 1]));
      Vector dir = Vector::Zero(d);
      for (int i = 0; i < d; ++i) {
        const Vector v = eig.vectors.col(i);
        dir -= (v.dot(g) / std::max(std::abs(eig.values[i]), nu)) * v;
      }
      const auto step = detail::armijo_step(model, s, m_s, g, dir);
      if (step) {
        advance(*step);
        continue;
      }
      // Gradient numerically stuck: fall back to curvature escape if any.
    }

    if (!c2 || !c1) {
      if (eig.values[0] < 0.0) {
        const auto step = detail::escape_step(model, s, eig.vectors.col(0), m_s);
        if (step) {
          advance(*step);
          continue;
        }
      }
      if (!c2) break;  // negative curvature present but numerically unusable
      // c1 failed and neither Newton nor curvature moved: try third-order.
      const ThirdForm form = model.third_form(s);
      const SpectralEstimate probe = constrained_max_abs_cubic(
          hess, form, zeta, 4, 1e-10, derive_seed(seed, 0xC3, static_cast<std::uint64_t>(it)));
      if (probe.certificate.size() > 0) {
        const auto step = detail::escape_step(model, s, probe.certificate, m_s);
        if (step) {
          advance(*step);
          continue;
        }
      }
      break;
    }
  }

  // Best effort: report honest measures at the final iterate.
  const Vector g = model.grad(s);
  const SymMatrix hess = model.hess(s);
  const ThirdForm form = model.third_form(s);
  const SpectralEstimate est =
      constrained_max_abs_cubic(hess, form, zeta, 16, 1e-10, derive_seed(seed, 0x8E50));
  res.s = s;
  res.model_value = m_s;
  res.chi_m = CriticalityTriple{g.norm(), criticality_chi2(hess), est.value, est.certificate};
  res.iterations = it;
  res.gradient_evals = ge;
  res.status = SubsolveStatus::MaxIter;
  return res;
}

}  // namespace stm
