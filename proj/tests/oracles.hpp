// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations, kept independent of the library code
// paths they check.
#pragma once

#include "quantemu/common.hpp"

#include <vector>

namespace oracles {

using quantemu::Matrix;
using quantemu::Vector;

// Plain (unscaled) Taylor series for e^M in extended precision.
inline Matrix taylor_exp_extended(const Matrix& m, int terms) {
  const int n = int(m.rows());
  std::vector<long double> a(std::size_t(n * n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a[std::size_t(i * n + j)] = (long double)m(i, j);

  std::vector<long double> sum(std::size_t(n * n), 0.0L);
  std::vector<long double> term(std::size_t(n * n), 0.0L);
  for (int i = 0; i < n; ++i) {
    sum[std::size_t(i * n + i)] = 1.0L;
    term[std::size_t(i * n + i)] = 1.0L;
  }
  std::vector<long double> next(std::size_t(n * n));
  for (int k = 1; k <= terms; ++k) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        long double acc = 0.0L;
        for (int l = 0; l < n; ++l)
          acc += term[std::size_t(i * n + l)] * a[std::size_t(l * n + j)];
        next[std::size_t(i * n + j)] = acc / (long double)k;
      }
    term = next;
    for (std::size_t idx = 0; idx < sum.size(); ++idx) sum[idx] += term[idx];
  }

  Matrix out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = double(sum[std::size_t(i * n + j)]);
  return out;
}

// Trapezoid quadrature of the zero-order-hold input map B_d = int_0^h e^{A(h-s)} B ds.
inline Matrix trapezoid_input_map(const Matrix& a, const Matrix& b, double h, int panels) {
  const double dt = h / panels;
  Matrix acc = Matrix::Zero(b.rows(), b.cols());
  for (int i = 0; i <= panels; ++i) {
    const double s = dt * i;
    const Matrix f = taylor_exp_extended(a * (h - s), 60) * b;
    const double w = (i == 0 || i == panels) ? 0.5 : 1.0;
    acc += w * f;
  }
  return acc * dt;
}

// Classic fourth-order Runge-Kutta for x' = Hx over [0, t_final].
inline Vector rk4_flow(const Matrix& h_matrix, const Vector& x0, double t_final, double dt) {
  Vector x = x0;
  double t = 0.0;
  while (t < t_final - 1e-15) {
    const double step = std::min(dt, t_final - t);
    const Vector k1 = h_matrix * x;
    const Vector k2 = h_matrix * (x + 0.5 * step * k1);
    const Vector k3 = h_matrix * (x + 0.5 * step * k2);
    const Vector k4 = h_matrix * (x + step * k3);
    x += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += step;
  }
  return x;
}

// Linear scan nearest neighbor; equidistant points resolve to the lowest index.
struct ScanResult {
  int index = -1;
  double dist2 = 0.0;
};

inline ScanResult linear_scan_nearest(const std::vector<Vector>& points, const Vector& v) {
  ScanResult best;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d2 = (points[i] - v).squaredNorm();
    if (best.index < 0 || d2 < best.dist2) {
      best.index = int(i);
      best.dist2 = d2;
    }
  }
  return best;
}

}  // namespace oracles
