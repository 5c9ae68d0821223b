// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/common.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>

namespace quantemu {

/// Materialization cap for pattern enumeration: 3^15.
constexpr std::uint64_t kPatternCap = 14348907;

inline std::uint64_t pattern_count(int m) {
  require(m >= 1, "pattern_count: need at least one channel");
  std::uint64_t c = 1;
  for (int i = 0; i < m; ++i) c *= 3;
  return c;
}

/// Pattern for a given base-3 counter value: digit i of the counter maps to
/// coordinate i via 0 -> -1, 1 -> 0, 2 -> 1 (coordinate 0 varies fastest).
inline Pattern pattern_at(int m, std::uint64_t counter) {
  Pattern u(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    u[std::size_t(i)] = int(counter % 3) - 1;
    counter /= 3;
  }
  return u;
}

/// Streaming enumeration of {-1,0,1}^m in base-3 counting order.
class PatternStream {
 public:
  explicit PatternStream(int m) : m_(m), count_(pattern_count(m)) {}

  bool next(Pattern& u) {
    if (i_ >= count_) return false;
    u = pattern_at(m_, i_++);
    return true;
  }

  std::uint64_t remaining() const { return count_ - i_; }

 private:
  int m_;
  std::uint64_t count_;
  std::uint64_t i_ = 0;
};

/// Materializes all 3^m patterns; callers with larger m must stream instead.
inline std::vector<Pattern> enumerate_patterns(int m, std::uint64_t cap = kPatternCap) {
  const std::uint64_t count = pattern_count(m);
  if (count > cap)
    throw std::invalid_argument("enumerate_patterns: 3^m exceeds the materialization cap");
  std::vector<Pattern> all;
  all.reserve(count);
  PatternStream stream(m);
  Pattern u;
  while (stream.next(u)) all.push_back(u);
  return all;
}

/// Set of input channels currently forced to zero.
struct DropoutMask {
  std::set<int> dropped;

  DropoutMask() = default;
  explicit DropoutMask(std::initializer_list<int> channels) : dropped(channels) {}
  explicit DropoutMask(const std::vector<int>& channels)
      : dropped(channels.begin(), channels.end()) {}

  bool empty() const { return dropped.empty(); }
  std::size_t size() const { return dropped.size(); }
  bool contains(int channel) const { return dropped.count(channel) != 0; }

  void validate(int m) const {
    for (int c : dropped)
      require(c >= 0 && c < m, "DropoutMask: channel index out of range");
  }
};

inline Pattern apply_dropout(const Pattern& u, const DropoutMask& mask) {
  mask.validate(int(u.size()));
  Pattern out = u;
  for (int c : mask.dropped) out[std::size_t(c)] = 0;
  return out;
}

/// Per-step dropout schedule for rollouts.
struct DropoutPolicy {
  enum class Mode { none, fixed, random_k };

  Mode mode = Mode::none;
  DropoutMask fixed_mask;
  int k = 0;  // channels dropped per step in random_k mode

  static DropoutPolicy none() { return {}; }
  static DropoutPolicy fixed(DropoutMask mask) {
    DropoutPolicy p;
    p.mode = Mode::fixed;
    p.fixed_mask = std::move(mask);
    return p;
  }
  static DropoutPolicy random_k_per_step(int k) {
    require(k >= 0, "DropoutPolicy: k must be nonnegative");
    DropoutPolicy p;
    p.mode = Mode::random_k;
    p.k = k;
    return p;
  }

  /// Fresh mask for one step; random_k draws k distinct channels uniformly.
  DropoutMask next(int m, Rng& rng) const {
    switch (mode) {
      case Mode::none:
        return {};
      case Mode::fixed:
        fixed_mask.validate(m);
        return fixed_mask;
      case Mode::random_k: {
        require(k <= m, "DropoutPolicy: cannot drop more channels than exist");
        std::vector<int> idx(static_cast<std::size_t>(m));
        std::iota(idx.begin(), idx.end(), 0);
        DropoutMask mask;
        for (int i = 0; i < k; ++i) {
          std::uniform_int_distribution<int> pick(i, m - 1);
          std::swap(idx[std::size_t(i)], idx[std::size_t(pick(rng))]);
          mask.dropped.insert(idx[std::size_t(i)]);
        }
        return mask;
      }
    }
    return {};
  }
};

/**
 * Deduplicated set of reachable one-step directions {B_d u : u admissible}.
 *
 * Directions are stored in order of first appearance during base-3 pattern
 * enumeration; that order is the canonical index used for tie-breaking
 * everywhere.  Each direction keeps one representative pattern, preferring
 * minimal support and then lexicographic order.
 */
struct DirectionAlphabet {
  std::vector<Vector> directions;
  std::vector<Pattern> representatives;
  double dedup_tol = 1e-9;
  int zero_index = -1;

  std::size_t size() const { return directions.size(); }

  std::optional<int> index_of(const Vector& v, double tol) const {
    for (std::size_t i = 0; i < directions.size(); ++i)
      if (max_abs(directions[i] - v) <= tol) return int(i);
    return std::nullopt;
  }
};

constexpr double kDefaultDedupTol = 1e-9;

/// Builds the alphabet of B_d under a dropout mask.  Enumeration runs over the
/// free channels only, so the cap applies to 3^(m - |mask|).
inline DirectionAlphabet build_alphabet(const Matrix& b_d, const DropoutMask& mask = {},
                                        double dedup_tol = kDefaultDedupTol,
                                        std::uint64_t cap = kPatternCap) {
  const int m = int(b_d.cols());
  require(m >= 1, "build_alphabet: need at least one channel");
  require(dedup_tol >= 0.0, "build_alphabet: dedup tolerance must be nonnegative");
  mask.validate(m);

  std::vector<int> free_channels;
  for (int c = 0; c < m; ++c)
    if (!mask.contains(c)) free_channels.push_back(c);

  DirectionAlphabet alphabet;
  alphabet.dedup_tol = dedup_tol;

  auto consider = [&](const Pattern& u) {
    const Vector d = b_d * pattern_to_vector(u);
    if (auto idx = alphabet.index_of(d, dedup_tol)) {
      Pattern& rep = alphabet.representatives[std::size_t(*idx)];
      const int s_new = pattern_support(u);
      const int s_old = pattern_support(rep);
      if (s_new < s_old || (s_new == s_old && u < rep)) {
        rep = u;
        // Keep the stored direction bit-identical to B_d * representative.
        alphabet.directions[std::size_t(*idx)] = d;
      }
    } else {
      alphabet.directions.push_back(d);
      alphabet.representatives.push_back(u);
    }
  };

  if (free_channels.empty()) {
    consider(Pattern(std::size_t(m), 0));
  } else {
    const int m_free = int(free_channels.size());
    if (pattern_count(m_free) > cap)
      throw std::invalid_argument("build_alphabet: 3^(m-|mask|) exceeds the enumeration cap");
    PatternStream stream(m_free);
    Pattern reduced;
    Pattern full(std::size_t(m), 0);
    while (stream.next(reduced)) {
      for (int i = 0; i < m_free; ++i) full[std::size_t(free_channels[std::size_t(i)])] = reduced[std::size_t(i)];
      consider(full);
    }
  }

  const Vector zero = Vector::Zero(b_d.rows());
  if (auto idx = alphabet.index_of(zero, dedup_tol)) alphabet.zero_index = *idx;
  return alphabet;
}

struct NearestDirection {
  Vector direction;
  int index = -1;
};

/// Euclidean-nearest direction (the mapping rule M); equidistant candidates
/// resolve to the lowest canonical index.
inline NearestDirection nearest_direction(const DirectionAlphabet& alphabet, const Vector& v,
                                          bool exclude_zero = false) {
  require(!alphabet.directions.empty(), "nearest_direction: empty alphabet");
  int best = -1;
  double best_d2 = 0.0;
  for (std::size_t i = 0; i < alphabet.directions.size(); ++i) {
    if (exclude_zero && int(i) == alphabet.zero_index) continue;
    const double d2 = (alphabet.directions[i] - v).squaredNorm();
    if (best < 0 || d2 < best_d2) {
      best = int(i);
      best_d2 = d2;
    }
  }
  require(best >= 0, "nearest_direction: no candidates after zero exclusion");
  return {alphabet.directions[std::size_t(best)], best};
}

/// Indices of the canonical alphabet that remain reachable under a mask.
inline std::vector<int> available_indices(const DirectionAlphabet& canonical,
                                          const DirectionAlphabet& masked) {
  std::vector<int> out;
  out.reserve(masked.size());
  for (std::size_t i = 0; i < canonical.size(); ++i)
    if (masked.index_of(canonical.directions[i], canonical.dedup_tol)) out.push_back(int(i));
  return out;
}

}  // namespace quantemu
