#pragma once

// Dense symmetric third-order tensor with contractions and a certified
// spectral-norm lower bound via multi-start shifted symmetric power
// iteration.  The power iteration core operates on an abstract cubic form so
// the same routine (and seed discipline) serves both materialized tensors and
// implicit model third derivatives, optionally restricted to a subspace.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "stm/linalg.hpp"
#include "stm/rng.hpp"

namespace stm {

class SymTensor3 {
 public:
  SymTensor3() : d_(0) {}
  explicit SymTensor3(int d)
      : d_(validate_dim(d)), e_(static_cast<std::size_t>(d) * d * d, 0.0) {}

  int dim() const { return d_; }

  double operator()(int i, int j, int k) const { return e_[idx(i, j, k)]; }

  // Writes all 6 permutations so symmetry holds by construction.
  void set(int i, int j, int k, double v) {
    e_[idx(i, j, k)] = v;
    e_[idx(i, k, j)] = v;
    e_[idx(j, i, k)] = v;
    e_[idx(j, k, i)] = v;
    e_[idx(k, i, j)] = v;
    e_[idx(k, j, i)] = v;
  }

  void add_scaled(const SymTensor3& o, double a) {
    require_same_dim(o);
    for (std::size_t t = 0; t < e_.size(); ++t) e_[t] += a * o.e_[t];
  }

  void scale(double a) {
    for (double& x : e_) x *= a;
  }

  // T += c * a ⊗ a ⊗ a, written in one pass (the update is symmetric entrywise).
  void add_scaled_rank1(const Vector& a, double c) {
    require_dim(a);
    std::size_t t = 0;
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < d_; ++j) {
        const double cij = c * a[i] * a[j];
        for (int k = 0; k < d_; ++k, ++t) e_[t] += cij * a[k];
      }
  }

  SymTensor3 minus(const SymTensor3& o) const {
    require_same_dim(o);
    SymTensor3 r = *this;
    for (std::size_t t = 0; t < e_.size(); ++t) r.e_[t] -= o.e_[t];
    return r;
  }

  static SymTensor3 rank1(const Vector& a) {
    SymTensor3 t(static_cast<int>(a.size()));
    for (int i = 0; i < t.d_; ++i)
      for (int j = i; j < t.d_; ++j)
        for (int k = j; k < t.d_; ++k) t.set(i, j, k, a[i] * a[j] * a[k]);
    return t;
  }

  // M(i,j) = sum_k T(i,j,k) s_k
  SymMatrix contract1(const Vector& s) const {
    require_dim(s);
    SymMatrix m(d_);
    for (int i = 0; i < d_; ++i) {
      for (int j = i; j < d_; ++j) {
        double acc = 0.0;
        const double* row = &e_[idx(i, j, 0)];
        for (int k = 0; k < d_; ++k) acc += row[k] * s[k];
        m.set(i, j, acc);
      }
    }
    return m;
  }

  // v_i = sum_{j,k} T(i,j,k) s_j s_k
  Vector contract2(const Vector& s) const {
    require_dim(s);
    Vector v = Vector::Zero(d_);
    for (int i = 0; i < d_; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d_; ++j) {
        const double sj = s[j];
        if (sj == 0.0) continue;
        const double* row = &e_[idx(i, j, 0)];
        double inner = 0.0;
        for (int k = 0; k < d_; ++k) inner += row[k] * s[k];
        acc += sj * inner;
      }
      v[i] = acc;
    }
    return v;
  }

  // sum_{i,j,k} T(i,j,k) s_i s_j s_k
  double contract3(const Vector& s) const { return contract2(s).dot(s); }

  double abs_entry_sum() const {
    double s = 0.0;
    for (double x : e_) s += std::abs(x);
    return s;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (double x : e_) s += x * x;
    return std::sqrt(s);
  }

 private:
  static int validate_dim(int d) {
    if (d <= 0) throw std::invalid_argument("SymTensor3: dim must be positive");
    return d;
  }
  std::size_t idx(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * d_ + j) * d_ + k;
  }
  void require_dim(const Vector& s) const {
    if (s.size() != d_) throw std::invalid_argument("SymTensor3: dim mismatch");
  }
  void require_same_dim(const SymTensor3& o) const {
    if (o.d_ != d_) throw std::invalid_argument("SymTensor3: dim mismatch");
  }

  int d_;
  std::vector<double> e_;
};

// Abstract symmetric cubic form X: supplies y -> X[y]^2 (vector) and a bound
// on the Frobenius norm used to pick a monotonicity-safe power-iteration
// shift.  X[y]^3 = <X[y]^2, y>.
struct ThirdForm {
  int dim = 0;
  std::function<Vector(const Vector&)> square_contract;
  double frobenius_bound = 0.0;

  double cubic(const Vector& y) const { return square_contract(y).dot(y); }
};

inline ThirdForm as_form(const SymTensor3& t) {
  ThirdForm f;
  f.dim = t.dim();
  f.square_contract = [&t](const Vector& y) { return t.contract2(y); };
  f.frobenius_bound = t.frobenius_norm();
  return f;
}

struct SpectralEstimate {
  double value = 0.0;
  Vector certificate;  // unit vector attaining |X[y]^3| = value
  bool converged = true;
};

// Flip sign so the first nonzero coordinate is positive; |X[y]^3| is even in
// y, so this canonical form is free and makes reductions deterministic.
inline Vector canonical_sign(Vector y) {
  for (int i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0) {
      if (y[i] < 0.0) y = -y;
      break;
    }
  }
  return y;
}

inline bool lex_greater(const Vector& a, const Vector& b) {
  for (int i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return a.size() > b.size();
}

// Multi-start shifted symmetric power iteration maximizing |X[y]^3| over unit
// y, optionally restricted to span(basis) (orthonormal columns).  Returns a
// guaranteed lower bound: the best |X[y]^3| over all iterates visited.
// Deterministic given seed; restarts use per-index derived seeds so enlarging
// the restart count only extends the start set.
inline SpectralEstimate power_max_abs_cubic(const ThirdForm& x, const std::optional<Matrix>& basis,
                                            int restarts, double tol, std::uint64_t seed,
                                            int max_iter = 500) {
  if (restarts < 1) throw std::invalid_argument("power_max_abs_cubic: restarts must be >= 1");
  if (tol <= 0.0) throw std::invalid_argument("power_max_abs_cubic: tol must be > 0");
  const int d = x.dim;
  const int sub = basis ? static_cast<int>(basis->cols()) : d;

  SpectralEstimate best;
  best.value = 0.0;
  best.certificate = Vector::Zero(d);
  if (sub > 0) {
    Vector e0 = basis ? Vector(basis->col(0)) : Vector(Vector::Unit(d, 0));
    best.certificate = canonical_sign(e0);
  }
  if (sub == 0) return best;

  const double alpha = 2.0 * x.frobenius_bound + tol;

  auto project = [&](const Vector& v) -> Vector {
    if (!basis) return v;
    return (*basis) * (basis->transpose() * v);
  };

  auto consider = [&](double absval, const Vector& y) {
    if (absval > best.value || (absval == best.value && lex_greater(canonical_sign(y), best.certificate))) {
      best.value = absval;
      best.certificate = canonical_sign(y);
    }
  };

  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    Vector y;
    if (basis) {
      const Vector c = random_unit_vector(sub, rng);
      y = (*basis) * c;
    } else {
      y = random_unit_vector(d, rng);
    }
    double val = x.cubic(y);
    // Work on the branch maximizing sign*X[y]^3 with sign fixed at the start.
    const double branch = (val >= 0.0) ? 1.0 : -1.0;
    consider(std::abs(val), y);

    bool restart_converged = false;
    int plateau_run = 0;
    for (int it = 0; it < max_iter; ++it) {
      Vector z = branch * x.square_contract(y) + alpha * y;
      z = project(z);
      const double zn = z.norm();
      if (zn < 1e-300) break;  // degenerate (zero form); value 0 already recorded
      z /= zn;
      const double step = (z - y).norm();
      y = z;
      const double prev_val = val;
      val = x.cubic(y);
      consider(std::abs(val), y);
      if (step <= tol) {
        restart_converged = true;
        break;
      }
      // The shifted ascent makes branch*val monotone and bounded, so a
      // persistent value plateau means this start has settled even if the
      // iterate is still drifting along a near-flat ridge.
      plateau_run = (std::abs(val - prev_val) <= tol * std::max(1.0, std::abs(val))) ? plateau_run + 1 : 0;
      if (plateau_run >= 3) {
        restart_converged = true;
        break;
      }
    }
    if (!restart_converged) best.converged = false;
  }
  return best;
}

// Lower bound on the tensor spectral norm sup_{|y|=1} |T[y]^3|.
inline SpectralEstimate spectral_norm_lower(const SymTensor3& t, int restarts = 16,
                                            double tol = 1e-10, std::uint64_t seed = 0) {
  return power_max_abs_cubic(as_form(t), std::nullopt, restarts, tol, seed);
}

}  // namespace stm
