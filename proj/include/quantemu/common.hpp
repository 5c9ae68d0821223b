// SPDX-License-Identifier: Apache-2.0
//
// quantemu: emulation of stable LTI systems by discrete-time dynamics driven
// through ternary-quantized input channels.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace quantemu {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Ternary activation pattern, one entry per input channel, each in {-1,0,1}.
using Pattern = std::vector<int>;

using Rng = std::mt19937_64;

/// Largest absolute coefficient (the max-norm used for tolerances).
inline double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// Induced infinity norm (max absolute row sum).
inline double inf_norm(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().rowwise().sum().maxCoeff();
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

inline Vector pattern_to_vector(const Pattern& u) {
  Vector v(static_cast<Eigen::Index>(u.size()));
  for (std::size_t i = 0; i < u.size(); ++i) v[static_cast<Eigen::Index>(i)] = u[i];
  return v;
}

inline int pattern_support(const Pattern& u) {
  int s = 0;
  for (int c : u) s += (c != 0);
  return s;
}

/// Rollouts abort once the state norm passes this bound.
constexpr double kDivergenceNorm = 1e6;

/// Index of the largest coefficient; ties resolve to the lowest index.
inline int argmax(const Vector& v) {
  require(v.size() > 0, "argmax: empty vector");
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = int(i);
  return best;
}

/// Largest coefficient among the allowed indices; ties resolve to the first
/// (lowest) allowed index.
inline int masked_argmax(const Vector& v, const std::vector<int>& allowed) {
  require(!allowed.empty(), "masked_argmax: no allowed indices");
  int best = allowed.front();
  for (int idx : allowed) {
    require(idx >= 0 && idx < v.size(), "masked_argmax: index out of range");
    if (v[idx] > v[best]) best = idx;
  }
  return best;
}

/// FNV-1a, used for config fingerprints in run manifests.
inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace quantemu
