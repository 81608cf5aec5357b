#pragma once

// In-repo dense symmetric eigensolver: cyclic Jacobi rotations.  Intended for
// desk-scale matrices (d <= 200).  Returns eigenvalues in ascending order
// with matching orthonormal eigenvector columns.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "stm/linalg.hpp"

namespace stm {

struct EigenSym {
  Vector values;   // ascending
  Matrix vectors;  // column i pairs with values[i]
};

inline EigenSym jacobi_eigensym(const SymMatrix& sym, double tol = 1e-13, int max_sweeps = 100) {
  const int d = sym.dim();
  Matrix a = sym.dense();
  Matrix v = Matrix::Identity(d, d);

  auto off_norm = [&]() {
    double s = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };

  const double scale = std::max(a.norm(), 1e-300);
  int sweep = 0;
  while (off_norm() > tol * scale) {
    if (++sweep > max_sweeps) {
      throw std::runtime_error("jacobi_eigensym: no convergence after " + std::to_string(max_sweeps) +
                               " sweeps (off-diagonal " + std::to_string(off_norm()) + ", scale " +
                               std::to_string(scale) + ")");
    }
    for (int p = 0; p < d - 1; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300 * scale) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- Jᵀ A J with the (p,q) rotation, applied to full rows/cols.
        for (int i = 0; i < d; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < d; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a(i, i) < a(j, j); });

  EigenSym out;
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (int i = 0; i < d; ++i) {
    out.values[i] = a(order[i], order[i]);
    out.vectors.col(i) = v.col(order[i]);
  }
  return out;
}

// Spectral (operator) norm of a symmetric matrix: max |eigenvalue|.
inline double sym_operator_norm(const SymMatrix& m) {
  if (m.dim() == 0) return 0.0;
  const EigenSym e = jacobi_eigensym(m);
  return std::max(std::abs(e.values[0]), std::abs(e.values[m.dim() - 1]));
}

}  // namespace stm
