// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/common.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>

namespace quantemu {

constexpr double kDefaultExpTol = 1e-12;

/**
 * Matrix exponential by scaling-and-squaring with a truncated Taylor series.
 *
 * The argument is scaled by an exact power of two until its induced infinity
 * norm is at most 1/4, the series is summed until the term norm drops below
 * a threshold derived from `tol` (tightened to absorb error growth through
 * the squaring stage), and the result is squared back up.
 */
inline Matrix matrix_exponential(const Matrix& m, double tol = kDefaultExpTol) {
  require(m.rows() == m.cols(), "matrix_exponential: matrix must be square");
  require(tol > 0.0, "matrix_exponential: tol must be positive");
  const Eigen::Index n = m.rows();

  const double norm = inf_norm(m);
  int s = 0;
  while (norm / std::exp2(double(s)) > 0.25) ++s;
  const Matrix x = m / std::exp2(double(s));

  // With ||x|| <= 1/4 the tail after term k is < 1.34 * ||term_{k+1}||, and
  // each squaring roughly doubles the absolute error.
  const double stop = std::max(tol / std::exp2(double(s + 2)), 1e-300);

  Matrix sum = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  const int max_terms = 300;
  int k = 1;
  for (; k <= max_terms; ++k) {
    term = (term * x) / double(k);
    sum += term;
    if (max_abs(term) <= stop) break;
  }
  if (k > max_terms) throw std::runtime_error("matrix_exponential: series did not converge");

  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

/// Closed-loop continuous dynamics x' = Hx.  The stability check is exact for
/// n <= 2 (characteristic polynomial) and a sufficient spectral-radius bound on
/// e^H obtained by repeated squaring otherwise.
class ContinuousLti {
 public:
  explicit ContinuousLti(Matrix h_matrix, bool require_stable = false)
      : h_(std::move(h_matrix)) {
    require(h_.rows() == h_.cols(), "ContinuousLti: H must be square");
    require(all_finite(h_), "ContinuousLti: H must be finite");
    if (require_stable) {
      require(is_hurwitz(h_), "ContinuousLti: H is not verifiably Hurwitz");
      stable_ = true;
    }
  }

  const Matrix& H() const { return h_; }
  Eigen::Index n() const { return h_.rows(); }
  bool stable() const { return stable_; }

  static bool is_hurwitz(const Matrix& h) {
    const Eigen::Index n = h.rows();
    if (n == 1) return h(0, 0) < 0.0;
    if (n == 2) {
      // Both roots of z^2 - tr z + det lie strictly left of the axis iff
      // tr < 0 and det > 0.
      return h.trace() < 0.0 && h.determinant() > 0.0;
    }
    // rho(e^H) < 1 iff max Re(lambda) < 0, and rho(M) <= ||M^k||^(1/k).
    Matrix p = matrix_exponential(h);
    for (int j = 0; j < 40; ++j) {
      const double norm = inf_norm(p);
      if (norm < 1.0) return true;
      if (!p.allFinite() || norm > 1e120) return false;
      p = p * p;
    }
    return false;
  }

 private:
  Matrix h_;
  bool stable_ = false;
};

/// Zero-order-hold discretization of a continuous pair (A, B).
struct DiscretizedSystem {
  Matrix A_d;  ///< e^{Ah}
  Matrix B_d;  ///< integral of e^{A(h-s)} B over one step
  double h = 0.0;

  Eigen::Index n() const { return A_d.rows(); }
  Eigen::Index m() const { return B_d.cols(); }
};

/// Exact discretization via the exponential of the augmented block matrix
/// [[A, B], [0, 0]] scaled by h; the top blocks of the result are (A_d, B_d).
inline DiscretizedSystem discretize(const Matrix& a, const Matrix& b, double h,
                                    double tol = kDefaultExpTol) {
  require(a.rows() == a.cols(), "discretize: A must be square");
  require(b.rows() == a.rows(), "discretize: A and B must have matching row counts");
  require(h > 0.0, "discretize: step size must be positive");
  const Eigen::Index n = a.rows();
  const Eigen::Index m = b.cols();

  Matrix aug = Matrix::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = a;
  aug.topRightCorner(n, m) = b;
  const Matrix e = matrix_exponential(aug * h, tol);

  DiscretizedSystem d;
  d.A_d = e.topLeftCorner(n, n);
  d.B_d = e.topRightCorner(n, m);
  d.h = h;
  return d;
}

namespace detail {

// Process-wide cache for e^{Hh}, keyed by the matrix entries and (h, tol).
// Concurrent reads are fine; inserts are serialized.
inline const Matrix& cached_flow(const Matrix& h_matrix, double h, double tol) {
  static std::shared_mutex mu;
  static std::map<std::vector<double>, std::unique_ptr<Matrix>> cache;

  std::vector<double> key(h_matrix.data(), h_matrix.data() + h_matrix.size());
  key.push_back(double(h_matrix.rows()));
  key.push_back(h);
  key.push_back(tol);

  {
    std::shared_lock lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return *it->second;
  }
  std::unique_lock lock(mu);
  auto it = cache.find(key);
  if (it == cache.end()) {
    it = cache.emplace(std::move(key),
                       std::make_unique<Matrix>(matrix_exponential(h_matrix * h, tol)))
             .first;
  }
  return *it->second;
}

}  // namespace detail

/// One reference step x -> e^{Hh} x.  The exponential is cached per (H, h).
inline Vector reference_step(const Vector& x, const ContinuousLti& sys, double h,
                             double tol = kDefaultExpTol) {
  require(x.size() == sys.n(), "reference_step: state dimension mismatch");
  require(h > 0.0, "reference_step: step size must be positive");
  return detail::cached_flow(sys.H(), h, tol) * x;
}

/// One quantized step x -> A_d x + B_d u with u in {-1,0,1}^m.
inline Vector quantized_step(const Vector& x_qs, const Pattern& u,
                             const DiscretizedSystem& disc) {
  require(x_qs.size() == disc.n(), "quantized_step: state dimension mismatch");
  require(Eigen::Index(u.size()) == disc.m(), "quantized_step: pattern dimension mismatch");
  for (int c : u)
    require(c == -1 || c == 0 || c == 1, "quantized_step: pattern entries must be in {-1,0,1}");
  return disc.A_d * x_qs + disc.B_d * pattern_to_vector(u);
}

/// Dense rollout of either system; label records which one it is.
struct Trajectory {
  enum class Label { reference, quantized };

  std::vector<Vector> states;
  double h = 0.0;
  Label label = Label::reference;

  Eigen::Index n() const { return states.empty() ? 0 : states.front().size(); }
  std::size_t steps() const { return states.size(); }
};

/// States x(k) = (e^{Hh})^k x0 for k = 0..T.
inline Trajectory simulate_reference(const Vector& x0, const ContinuousLti& sys, double h,
                                     int t_steps) {
  require(x0.size() == sys.n(), "simulate_reference: state dimension mismatch");
  require(t_steps >= 1, "simulate_reference: need at least one step");
  Trajectory traj;
  traj.h = h;
  traj.label = Trajectory::Label::reference;
  traj.states.reserve(std::size_t(t_steps) + 1);
  traj.states.push_back(x0);
  Vector x = x0;
  for (int k = 0; k < t_steps; ++k) {
    x = reference_step(x, sys, h);
    traj.states.push_back(x);
  }
  return traj;
}

}  // namespace quantemu
