#pragma once

// The quartic-regularized third-order local model
//   m(s) = f0 + g's + (1/2) s'Bs + (1/6) T[s]^3 + (sigma/4) |s|^4
// and its exact derivatives in s.  Instances are immutable; evaluation is pure.

#include <cmath>
#include <stdexcept>
#include <utility>

#include "stm/linalg.hpp"
#include "stm/tensor.hpp"

namespace stm {

class QuarticModel {
 public:
  QuarticModel(double f0, Vector g, SymMatrix B, SymTensor3 T, double sigma)
      : f0_(f0), g_(std::move(g)), B_(std::move(B)), T_(std::move(T)), sigma_(sigma) {
    if (!(sigma_ > 0.0)) throw std::invalid_argument("QuarticModel: sigma must be positive");
    const int d = static_cast<int>(g_.size());
    if (d < 1) throw std::invalid_argument("QuarticModel: empty gradient");
    if (B_.dim() != d || T_.dim() != d)
      throw std::invalid_argument("QuarticModel: inconsistent dimensions");
  }

  int dim() const { return static_cast<int>(g_.size()); }
  double f0() const { return f0_; }
  const Vector& g() const { return g_; }
  const SymMatrix& B() const { return B_; }
  const SymTensor3& T() const { return T_; }
  double sigma() const { return sigma_; }

  // Third-order part only: phi(s) = f0 + g's + (1/2) s'Bs + (1/6) T[s]^3.
  double eval_phi(const Vector& s) const {
    require_dim(s);
    return f0_ + g_.dot(s) + 0.5 * B_.quad(s) + T_.contract3(s) / 6.0;
  }

  // Full model value m(s) = phi(s) + (sigma/4)|s|^4.
  double eval(const Vector& s) const {
    return eval_phi(s) + quartic_term(s);
  }

  double quartic_term(const Vector& s) const {
    const double n2 = s.squaredNorm();
    return 0.25 * sigma_ * n2 * n2;
  }

  // grad m(s) = g + Bs + (1/2) T[s]^2 + sigma |s|^2 s.
  Vector grad(const Vector& s) const {
    require_dim(s);
    return g_ + B_ * s + 0.5 * T_.contract2(s) + sigma_ * s.squaredNorm() * s;
  }

  // hess m(s) = B + T[s] + sigma (|s|^2 I + 2 s s').
  SymMatrix hess(const Vector& s) const {
    require_dim(s);
    SymMatrix h = B_;
    h.add_scaled(T_.contract1(s), 1.0);
    h.add_scaled_identity(sigma_ * s.squaredNorm());
    h.add_outer(s, 2.0 * sigma_);
    return h;
  }

  // Materialized third derivative: T plus the quartic term's contribution
  // with entries 2 sigma (s_k d_ij + s_j d_ik + s_i d_jk).
  SymTensor3 third_tensor(const Vector& s) const {
    require_dim(s);
    SymTensor3 out = T_;
    const int d = dim();
    const double c = 2.0 * sigma_;
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j)
        for (int k = j; k < d; ++k) {
          const double add = c * ((j == k ? s[i] : 0.0) + (i == k ? s[j] : 0.0) + (i == j ? s[k] : 0.0));
          if (add != 0.0) out.set(i, j, k, out(i, j, k) + add);
        }
    return out;
  }

  // Implicit third derivative for contraction-only consumers: evaluates
  // (grad^3 m(s))[y]^2 = T[y]^2 + sigma (4 (s'y) y + 2 |y|^2 s) without
  // materializing the d^3 tensor.  The Frobenius bound adds the quartic
  // part's exact norm 2 sigma sqrt(3d+6) |s| to T's.  The returned form
  // borrows T from this model and must not outlive it.
  ThirdForm third_form(const Vector& s) const {
    require_dim(s);
    ThirdForm f;
    f.dim = dim();
    const double sigma = sigma_;
    const Vector sv = s;
    const SymTensor3& T = T_;
    f.square_contract = [&T, sigma, sv](const Vector& y) -> Vector {
      return T.contract2(y) + sigma * (4.0 * sv.dot(y) * y + 2.0 * y.squaredNorm() * sv);
    };
    f.frobenius_bound =
        T_.frobenius_norm() + 2.0 * sigma_ * std::sqrt(3.0 * dim() + 6.0) * s.norm();
    return f;
  }

 private:
  void require_dim(const Vector& s) const {
    if (s.size() != g_.size()) throw std::invalid_argument("QuarticModel: step has wrong dimension");
  }

  double f0_;
  Vector g_;
  SymMatrix B_;
  SymTensor3 T_;
  double sigma_;
};

}  // namespace stm
