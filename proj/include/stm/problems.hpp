#pragma once

// Finite-sum test objectives f(x) = (1/n) sum_i f_i(x) with closed-form
// derivatives up to order three and analytically known Lipschitz constants.
// Problems are immutable after construction; component evaluation is pure and
// safe to call concurrently.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stm/linalg.hpp"
#include "stm/parallel.hpp"
#include "stm/rng.hpp"
#include "stm/tensor.hpp"

namespace stm {

// Derivatives of one component (or of the full objective) at a point, filled
// up to the requested order: value always, grad for order >= 1, hess for
// order >= 2, third for order >= 3.
struct DerivativeBundle {
  double value = 0.0;
  Vector grad;
  std::optional<SymMatrix> hess;
  std::optional<SymTensor3> third;
};

// L_f bounds |f_i| variation, L_g the gradient's, L_b the Hessian's, L_t the
// third derivative's (each in the operator norm of its order), valid for all
// components on the ball of radius reference_radius around the origin.
struct LipschitzConstants {
  double f = 0.0;
  double g = 0.0;
  double b = 0.0;
  double t = 0.0;
};

class FiniteSumProblem {
 public:
  using ComponentFn = std::function<DerivativeBundle(int, const Vector&, int)>;
  using FullFn = std::function<DerivativeBundle(const Vector&, int)>;

  FiniteSumProblem(std::string name, int n, int d, LipschitzConstants lipschitz, double f_low,
                   double reference_radius, ComponentFn component, FullFn full = nullptr)
      : name_(std::move(name)),
        n_(n),
        d_(d),
        lipschitz_(lipschitz),
        f_low_(f_low),
        reference_radius_(reference_radius),
        component_(std::move(component)),
        full_(std::move(full)) {
    if (n_ < 1) throw std::invalid_argument("FiniteSumProblem: need at least one component");
    if (d_ < 1) throw std::invalid_argument("FiniteSumProblem: dimension must be positive");
    if (!(reference_radius_ > 0.0))
      throw std::invalid_argument("FiniteSumProblem: reference radius must be positive");
    if (!component_) throw std::invalid_argument("FiniteSumProblem: missing component evaluator");
  }

  const std::string& name() const { return name_; }
  int components() const { return n_; }
  int dim() const { return d_; }
  const LipschitzConstants& lipschitz() const { return lipschitz_; }
  double f_low() const { return f_low_; }
  double reference_radius() const { return reference_radius_; }

  // Derivatives of component i at x, filled up to `order` in [0, 3].
  DerivativeBundle component(int i, const Vector& x, int order) const {
    if (i < 0 || i >= n_) throw std::out_of_range("FiniteSumProblem: component index");
    check_point(x, order);
    return component_(i, x, order);
  }

  // Exact derivatives of the full objective (the mean over all components).
  DerivativeBundle full(const Vector& x, int order) const {
    check_point(x, order);
    if (full_) return full_(x, order);
    return mean_over_all(x, order);
  }

 private:
  void check_point(const Vector& x, int order) const {
    if (x.size() != d_) throw std::invalid_argument("FiniteSumProblem: point has wrong dimension");
    if (order < 0 || order > 3) throw std::invalid_argument("FiniteSumProblem: order must be in [0, 3]");
  }

  DerivativeBundle mean_over_all(const Vector& x, int order) const;

  std::string name_;
  int n_;
  int d_;
  LipschitzConstants lipschitz_;
  double f_low_;
  double reference_radius_;
  ComponentFn component_;
  FullFn full_;
};

namespace detail {

inline DerivativeBundle zero_bundle(int d, int order) {
  DerivativeBundle b;
  if (order >= 1) b.grad = Vector::Zero(d);
  if (order >= 2) b.hess = SymMatrix(d);
  if (order >= 3) b.third = SymTensor3(d);
  return b;
}

inline void add_bundle(DerivativeBundle& acc, const DerivativeBundle& c, int order) {
  acc.value += c.value;
  if (order >= 1) acc.grad += c.grad;
  if (order >= 2) acc.hess->add_scaled(*c.hess, 1.0);
  if (order >= 3) acc.third->add_scaled(*c.third, 1.0);
}

inline void scale_bundle(DerivativeBundle& b, double a, int order) {
  b.value *= a;
  if (order >= 1) b.grad *= a;
  if (order >= 2) b.hess->scale(a);
  if (order >= 3) b.third->scale(a);
}

}  // namespace detail

// Mean of component derivative bundles over an explicit index list (repeats
// allowed).  The summation tree is fixed by the list alone, so the result is
// bit-identical for every worker count.
inline DerivativeBundle mean_over_indices(const FiniteSumProblem& p, const std::vector<int>& indices,
                                          const Vector& x, int order) {
  if (indices.empty()) throw std::invalid_argument("mean_over_indices: empty index list");
  const int d = p.dim();
  auto zero = [&] { return detail::zero_bundle(d, order); };
  DerivativeBundle sum = parallel_block_reduce<DerivativeBundle>(
      static_cast<std::int64_t>(indices.size()), 64, zero,
      [&](DerivativeBundle& acc, std::int64_t j) {
        detail::add_bundle(acc, p.component(indices[static_cast<std::size_t>(j)], x, order), order);
      },
      [&](DerivativeBundle& total, const DerivativeBundle& part) {
        detail::add_bundle(total, part, order);
      });
  detail::scale_bundle(sum, 1.0 / static_cast<double>(indices.size()), order);
  return sum;
}

inline DerivativeBundle FiniteSumProblem::mean_over_all(const Vector& x, int order) const {
  auto zero = [&] { return detail::zero_bundle(d_, order); };
  DerivativeBundle sum = parallel_block_reduce<DerivativeBundle>(
      n_, 64, zero,
      [&](DerivativeBundle& acc, std::int64_t i) {
        detail::add_bundle(acc, component_(static_cast<int>(i), x, order), order);
      },
      [&](DerivativeBundle& total, const DerivativeBundle& part) {
        detail::add_bundle(total, part, order);
      });
  detail::scale_bundle(sum, 1.0 / static_cast<double>(n_), order);
  return sum;
}

// f_i(x) = cos(a_i'x) + (lambda/2)|x|^2 with unit directions a_i.  Smooth,
// non-convex, every derivative rank-one plus a diagonal shift:
//   grad f_i = -sin(a_i'x) a_i + lambda x
//   hess f_i = -cos(a_i'x) a_i a_i' + lambda I
//   third f_i = sin(a_i'x) a_i (x) a_i (x) a_i
// Unit a_i give L_g = 1 + lambda, L_b = 1, L_t = 1; |grad f_i| <= 1 + lambda R
// on the reference ball of radius R.  f >= -1 everywhere (lambda >= 0).
inline FiniteSumProblem make_cosine_sum(int n, int d, std::uint64_t seed, double lambda,
                                        double reference_radius = 10.0) {
  if (lambda < 0.0) throw std::invalid_argument("make_cosine_sum: lambda must be >= 0");
  if (n < 1 || d < 1) throw std::invalid_argument("make_cosine_sum: need n >= 1, d >= 1");
  auto dirs = std::make_shared<std::vector<Vector>>();
  dirs->reserve(static_cast<std::size_t>(n));
  Rng rng(derive_seed(seed, 0xC051E50Full));
  for (int i = 0; i < n; ++i) dirs->push_back(random_unit_vector(d, rng));
  const std::shared_ptr<const std::vector<Vector>> a = std::move(dirs);

  FiniteSumProblem::ComponentFn comp = [a, lambda, d](int i, const Vector& x, int order) {
    const Vector& ai = (*a)[static_cast<std::size_t>(i)];
    const double u = ai.dot(x);
    DerivativeBundle b;
    b.value = std::cos(u) + 0.5 * lambda * x.squaredNorm();
    if (order >= 1) b.grad = -std::sin(u) * ai + lambda * x;
    if (order >= 2) {
      SymMatrix h(d);
      h.add_outer(ai, -std::cos(u));
      h.add_scaled_identity(lambda);
      b.hess = std::move(h);
    }
    if (order >= 3) {
      SymTensor3 t(d);
      t.add_scaled_rank1(ai, std::sin(u));
      b.third = std::move(t);
    }
    return b;
  };

  LipschitzConstants lip;
  lip.f = 1.0 + lambda * reference_radius;
  lip.g = 1.0 + lambda;
  lip.b = 1.0;
  lip.t = 1.0;
  return FiniteSumProblem("cosine_sum", n, d, lip, -1.0, reference_radius, std::move(comp));
}

// f_i(x) = (1/2)|x - b_i|^2.  Strongly convex with third derivatives
// identically zero; the minimizer is the centroid of the b_i and the optimal
// value is known in closed form, so every criticality measure vanishes there.
inline FiniteSumProblem make_quadratic_sum(int n, int d, std::uint64_t seed,
                                           double reference_radius = 10.0) {
  if (n < 1 || d < 1) throw std::invalid_argument("make_quadratic_sum: need n >= 1, d >= 1");
  auto pts = std::make_shared<std::vector<Vector>>();
  pts->reserve(static_cast<std::size_t>(n));
  Rng rng(derive_seed(seed, 0x0B5E55EDull));
  for (int i = 0; i < n; ++i) pts->push_back(random_gaussian_vector(d, rng));
  const std::shared_ptr<const std::vector<Vector>> b = std::move(pts);

  Vector centroid = Vector::Zero(d);
  double max_norm = 0.0;
  double mean_sq = 0.0;
  for (const Vector& bi : *b) {
    centroid += bi;
    max_norm = std::max(max_norm, bi.norm());
    mean_sq += bi.squaredNorm();
  }
  centroid /= static_cast<double>(n);
  mean_sq /= static_cast<double>(n);
  // f(x) = (1/2)|x - centroid|^2 + f_low with f_low = (mean|b_i|^2 - |centroid|^2)/2.
  const double f_low = 0.5 * (mean_sq - centroid.squaredNorm());

  FiniteSumProblem::ComponentFn comp = [b, d](int i, const Vector& x, int order) {
    const Vector& bi = (*b)[static_cast<std::size_t>(i)];
    DerivativeBundle out;
    out.value = 0.5 * (x - bi).squaredNorm();
    if (order >= 1) out.grad = x - bi;
    if (order >= 2) out.hess = SymMatrix::identity(d);
    if (order >= 3) out.third = SymTensor3(d);
    return out;
  };
  FiniteSumProblem::FullFn full = [centroid, f_low, d](const Vector& x, int order) {
    DerivativeBundle out;
    out.value = 0.5 * (x - centroid).squaredNorm() + f_low;
    if (order >= 1) out.grad = x - centroid;
    if (order >= 2) out.hess = SymMatrix::identity(d);
    if (order >= 3) out.third = SymTensor3(d);
    return out;
  };

  LipschitzConstants lip;
  lip.f = reference_radius + max_norm;
  lip.g = 1.0;
  lip.b = 0.0;
  lip.t = 0.0;
  return FiniteSumProblem("quadratic_sum", n, d, lip, f_low, reference_radius, std::move(comp),
                          std::move(full));
}

namespace detail {

// Supremum bounds for the scalar pieces of the logistic objective, used to
// assemble its Lipschitz constants.
//   loss(u) = log(1 + e^-u):      |loss''| <= 1/4, |loss'''| <= 1/(6 sqrt 3),
//                                 |loss''''| <= 1/8, |loss'| <= 1.
//   reg(t) = t^2/(1 + t^2):       |reg'| <= 9/(8 sqrt 3), |reg''| <= 2,
//                                 |reg'''| <= kRegThirdMax, |reg''''| <= 24.
inline constexpr double kRegThirdMax = 4.668559284155214;  // sup_t |reg'''(t)|
inline constexpr double kRegFourthMax = 24.0;              // attained at t = 0

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

inline double softplus_neg(double u) {  // log(1 + e^-u), stable for both signs
  if (u >= 0.0) return std::log1p(std::exp(-u));
  return -u + std::log1p(std::exp(u));
}

}  // namespace detail

// Binary logistic loss over unit feature vectors a_i with alternating labels
// y_i, plus a separable bounded non-convex regularizer:
//   f_i(x) = log(1 + exp(-y_i a_i'x)) + lambda * sum_j x_j^2/(1 + x_j^2).
// Both pieces are non-negative, so 0 lower-bounds f.  All derivatives follow
// from the scalar chain rule; the regularizer contributes a diagonal to the
// Hessian and a super-diagonal to the third-derivative tensor.
inline FiniteSumProblem make_nonconvex_logistic(int n, int d, std::uint64_t seed, double lambda,
                                                double reference_radius = 10.0) {
  if (lambda < 0.0) throw std::invalid_argument("make_nonconvex_logistic: lambda must be >= 0");
  if (n < 1 || d < 1) throw std::invalid_argument("make_nonconvex_logistic: need n >= 1, d >= 1");
  auto feats = std::make_shared<std::vector<Vector>>();
  feats->reserve(static_cast<std::size_t>(n));
  Rng rng(derive_seed(seed, 0x106157Cull));
  for (int i = 0; i < n; ++i) feats->push_back(random_unit_vector(d, rng));
  const std::shared_ptr<const std::vector<Vector>> a = std::move(feats);

  FiniteSumProblem::ComponentFn comp = [a, lambda, d](int i, const Vector& x, int order) {
    const Vector& ai = (*a)[static_cast<std::size_t>(i)];
    const double yi = (i % 2 == 0) ? 1.0 : -1.0;  // alternating labels
    const double u = yi * ai.dot(x);
    const double s = detail::sigmoid(u);
    DerivativeBundle out;
    out.value = detail::softplus_neg(u);
    if (lambda != 0.0)
      for (int j = 0; j < d; ++j) {
        const double t = x[j];
        out.value += lambda * t * t / (1.0 + t * t);
      }
    if (order >= 1) {
      const double lp = s - 1.0;  // loss'(u)
      out.grad = (lp * yi) * ai;
      if (lambda != 0.0)
        for (int j = 0; j < d; ++j) {
          const double t = x[j];
          const double q = 1.0 + t * t;
          out.grad[j] += lambda * 2.0 * t / (q * q);  // reg'(t)
        }
    }
    if (order >= 2) {
      const double lpp = s * (1.0 - s);  // loss''(u); y_i^2 = 1
      SymMatrix h(d);
      h.add_outer(ai, lpp);
      if (lambda != 0.0)
        for (int j = 0; j < d; ++j) {
          const double t = x[j];
          const double q = 1.0 + t * t;
          h.set(j, j, h(j, j) + lambda * (2.0 - 6.0 * t * t) / (q * q * q));  // reg''(t)
        }
      out.hess = std::move(h);
    }
    if (order >= 3) {
      const double lppp = s * (1.0 - s) * (1.0 - 2.0 * s);  // loss'''(u); y_i^3 = y_i
      SymTensor3 tt(d);
      tt.add_scaled_rank1(ai, lppp * yi);
      if (lambda != 0.0)
        for (int j = 0; j < d; ++j) {
          const double t = x[j];
          const double q = 1.0 + t * t;
          tt.set(j, j, j, tt(j, j, j) + lambda * 24.0 * t * (t * t - 1.0) / (q * q * q * q));  // reg'''(t)
        }
      out.third = std::move(tt);
    }
    return out;
  };

  LipschitzConstants lip;
  lip.f = 1.0 + lambda * (9.0 / (8.0 * std::sqrt(3.0))) * std::sqrt(static_cast<double>(d));
  lip.g = 0.25 + 2.0 * lambda;
  lip.b = 1.0 / (6.0 * std::sqrt(3.0)) + lambda * detail::kRegThirdMax;
  lip.t = 0.125 + lambda * detail::kRegFourthMax;
  return FiniteSumProblem("nonconvex_logistic", n, d, lip, 0.0, reference_radius, std::move(comp));
}

// Name-based factory used by the CLI config.
inline FiniteSumProblem make_problem(const std::string& name, int n, int d, std::uint64_t seed,
                                     double lambda) {
  if (name == "cosine_sum") return make_cosine_sum(n, d, seed, lambda);
  if (name == "quadratic_sum") return make_quadratic_sum(n, d, seed);
  if (name == "nonconvex_logistic") return make_nonconvex_logistic(n, d, seed, lambda);
  throw std::invalid_argument("make_problem: unknown problem '" + name + "'");
}

}  // namespace stm
