#pragma once

// Dense vector/matrix plumbing on top of Eigen, plus a symmetric-matrix type
// whose storage is symmetric by construction (write-through of both mirror
// entries), so downstream code never has to re-symmetrize.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "stm/rng.hpp"

namespace stm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class SymMatrix {
 public:
  SymMatrix() : d_(0) {}
  explicit SymMatrix(int d) : d_(d), m_(Matrix::Zero(d, d)) {
    if (d <= 0) throw std::invalid_argument("SymMatrix: dim must be positive");
  }

  static SymMatrix identity(int d) {
    SymMatrix s(d);
    s.m_ = Matrix::Identity(d, d);
    return s;
  }

  // Accepts an exactly- or nearly-symmetric dense matrix; mirror entries are
  // averaged so the invariant holds bit-exactly.
  static SymMatrix from_dense(const Matrix& a) {
    if (a.rows() != a.cols() || a.rows() == 0) throw std::invalid_argument("SymMatrix: square matrix required");
    SymMatrix s(static_cast<int>(a.rows()));
    for (int i = 0; i < s.d_; ++i) {
      s.m_(i, i) = a(i, i);
      for (int j = 0; j < i; ++j) {
        const double v = 0.5 * (a(i, j) + a(j, i));
        s.m_(i, j) = v;
        s.m_(j, i) = v;
      }
    }
    return s;
  }

  int dim() const { return d_; }
  double operator()(int i, int j) const { return m_(i, j); }

  void set(int i, int j, double v) {
    m_(i, j) = v;
    m_(j, i) = v;
  }

  void add_scaled(const SymMatrix& o, double a) {
    require_same_dim(o);
    m_ += a * o.m_;
  }

  void scale(double a) { m_ *= a; }

  void add_scaled_identity(double a) { m_.diagonal().array() += a; }

  // rank-1 symmetric update: self += a * v vᵀ
  void add_outer(const Vector& v, double a) {
    if (v.size() != d_) throw std::invalid_argument("SymMatrix::add_outer: dim mismatch");
    m_.noalias() += a * v * v.transpose();
    // restore exact mirror equality (v*vᵀ is symmetric in exact arithmetic,
    // and Eigen evaluates both triangles identically, but be explicit)
    for (int i = 0; i < d_; ++i)
      for (int j = 0; j < i; ++j) m_(j, i) = m_(i, j);
  }

  Vector operator*(const Vector& v) const { return m_ * v; }

  double quad(const Vector& y) const { return y.dot(m_ * y); }

  const Matrix& dense() const { return m_; }

  SymMatrix scaled(double a) const {
    SymMatrix r = *this;
    r.m_ *= a;
    return r;
  }

  SymMatrix minus(const SymMatrix& o) const {
    require_same_dim(o);
    SymMatrix r = *this;
    r.m_ -= o.m_;
    return r;
  }

  double frobenius_norm() const { return m_.norm(); }

 private:
  void require_same_dim(const SymMatrix& o) const {
    if (o.d_ != d_) throw std::invalid_argument("SymMatrix: dim mismatch");
  }
  int d_;
  Matrix m_;
};

inline Vector random_unit_vector(int d, Rng& rng) {
  Vector v(d);
  double nrm = 0.0;
  do {
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    nrm = v.norm();
  } while (nrm < 1e-12);
  return v / nrm;
}

inline Vector random_gaussian_vector(int d, Rng& rng) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace stm
