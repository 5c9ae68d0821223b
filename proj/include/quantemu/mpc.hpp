// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/alphabet.hpp"
#include "quantemu/lti.hpp"

#include <limits>

namespace quantemu {

enum class SearchMode { exhaustive, branch_and_bound };

struct MpcConfig {
  int N = 2;  // horizon
  Matrix P;   // terminal state weight
  Matrix Q;   // stage state weight
  Matrix R;   // input weight
  SearchMode search = SearchMode::branch_and_bound;
  std::uint64_t node_budget = 1'000'000;
  // Literal single-term reading of the input penalty: charge R on the last
  // stage input only instead of every stage.
  bool terminal_input_penalty_only = false;

  void validate(Eigen::Index n, Eigen::Index m) const {
    require(N >= 1, "MpcConfig: horizon must be at least 1");
    auto check_spd = [](const Matrix& w, Eigen::Index dim, const char* name) {
      require(w.rows() == dim && w.cols() == dim, std::string("MpcConfig: bad dimension for ") + name);
      require(w.isApprox(w.transpose(), 1e-12), std::string("MpcConfig: ") + name + " not symmetric");
      Eigen::LLT<Matrix> llt(w);
      require(llt.info() == Eigen::Success,
              std::string("MpcConfig: ") + name + " not positive definite");
    };
    check_spd(P, n, "P");
    check_spd(Q, n, "Q");
    check_spd(R, m, "R");
  }
};

struct MpcSolution {
  std::vector<Pattern> inputs;  // representative pattern per stage
  double cost = 0.0;
  Vector first_direction;
  int first_index = -1;  // index into the alphabet the search ran over
};

namespace detail {

inline double quad(const Vector& v, const Matrix& w) { return v.dot(w * v); }

// Reference states x_ref(0..N); all cost routines consume the same rollout so
// their partial sums stay bit-identical.
inline std::vector<Vector> reference_horizon(const Vector& x_ref0, const ContinuousLti& sys,
                                             double h, int n_steps) {
  std::vector<Vector> xr;
  xr.reserve(std::size_t(n_steps) + 1);
  xr.push_back(x_ref0);
  for (int n = 0; n < n_steps; ++n) xr.push_back(reference_step(xr.back(), sys, h));
  return xr;
}

inline bool input_penalized(const MpcConfig& cfg, int stage) {
  return !cfg.terminal_input_penalty_only || stage == cfg.N - 1;
}

}  // namespace detail

/**
 * Finite-horizon emulation cost
 *
 *   J = sum_n |x_n - x_ref(n)|^2_Q  +  |x_N - x_ref(N)|^2_P  +  input penalty,
 *
 * where the quantized state rolls by (A_d, B_d) and the reference by e^{Hh}.
 * The input penalty |u_n|^2_R is charged per stage by default.
 */
inline double mpc_cost(const std::vector<Pattern>& inputs, const Vector& x_qs0,
                       const Vector& x_ref0, const DiscretizedSystem& disc,
                       const ContinuousLti& sys, const MpcConfig& cfg) {
  require(int(inputs.size()) == cfg.N, "mpc_cost: need exactly N inputs");
  require(x_qs0.size() == disc.n() && x_ref0.size() == sys.n(), "mpc_cost: dimension mismatch");

  const std::vector<Vector> xr = detail::reference_horizon(x_ref0, sys, disc.h, cfg.N);
  double j = 0.0;
  Vector x = x_qs0;
  for (int n = 0; n < cfg.N; ++n) {
    j += detail::quad(x - xr[std::size_t(n)], cfg.Q);
    if (detail::input_penalized(cfg, n))
      j += detail::quad(pattern_to_vector(inputs[std::size_t(n)]), cfg.R);
    x = disc.A_d * x + disc.B_d * pattern_to_vector(inputs[std::size_t(n)]);
  }
  j += detail::quad(x - xr[std::size_t(cfg.N)], cfg.P);
  return j;
}

namespace detail {

struct SearchContext {
  const DirectionAlphabet* alphabet;
  const DiscretizedSystem* disc;
  const MpcConfig* cfg;
  std::vector<Vector> xr;
  std::vector<double> r_cost;  // per action, input penalty of the representative
  std::uint64_t nodes = 0;
  double incumbent = std::numeric_limits<double>::infinity();
  std::vector<int> best;
  std::vector<int> current;
};

// Depth-first search in canonical action order.  The accumulated prefix cost
// is a valid lower bound (all remaining terms are nonnegative), so pruning on
// prefix >= incumbent cannot discard a strictly better sequence, and the
// first-found strict minimum preserves the lexicographic tie-break of the
// exhaustive scan.
inline void branch_and_bound_rec(SearchContext& ctx, int depth, const Vector& x, double j_prefix) {
  const MpcConfig& cfg = *ctx.cfg;
  if (depth == cfg.N) {
    const double j = j_prefix + quad(x - ctx.xr[std::size_t(cfg.N)], cfg.P);
    if (j < ctx.incumbent) {
      ctx.incumbent = j;
      ctx.best = ctx.current;
    }
    return;
  }
  const double jq = j_prefix + quad(x - ctx.xr[std::size_t(depth)], cfg.Q);
  if (jq >= ctx.incumbent) return;
  for (std::size_t i = 0; i < ctx.alphabet->size(); ++i) {
    const double ji = input_penalized(cfg, depth) ? jq + ctx.r_cost[i] : jq;
    if (ji >= ctx.incumbent) continue;
    if (++ctx.nodes > cfg.node_budget)
      throw std::runtime_error("solve_mpc: branch-and-bound node budget exceeded");
    ctx.current[std::size_t(depth)] = int(i);
    branch_and_bound_rec(ctx, depth + 1, Vector(ctx.disc->A_d * x + ctx.alphabet->directions[i]),
                         ji);
  }
}

}  // namespace detail

/// Globally minimal J over (direction alphabet)^N; ties resolve to the
/// lexicographically smallest direction-index sequence.
inline MpcSolution solve_mpc(const Vector& x_qs, const Vector& x_ref,
                             const DiscretizedSystem& disc, const ContinuousLti& sys,
                             const MpcConfig& cfg, const DirectionAlphabet& alphabet) {
  cfg.validate(disc.n(), disc.m());
  require(!alphabet.directions.empty(), "solve_mpc: empty alphabet");
  require(x_qs.size() == disc.n() && x_ref.size() == sys.n(), "solve_mpc: dimension mismatch");

  const std::size_t k_actions = alphabet.size();

  detail::SearchContext ctx;
  ctx.alphabet = &alphabet;
  ctx.disc = &disc;
  ctx.cfg = &cfg;
  ctx.xr = detail::reference_horizon(x_ref, sys, disc.h, cfg.N);
  ctx.r_cost.reserve(k_actions);
  for (const Pattern& rep : alphabet.representatives)
    ctx.r_cost.push_back(detail::quad(pattern_to_vector(rep), cfg.R));
  ctx.current.assign(std::size_t(cfg.N), 0);

  if (cfg.search == SearchMode::branch_and_bound) {
    detail::branch_and_bound_rec(ctx, 0, x_qs, 0.0);
  } else {
    // Exhaustive odometer over all K^N sequences, scanned in lexicographic
    // index order with the same per-stage accumulation as the recursion.
    double total_seqs = std::pow(double(k_actions), double(cfg.N));
    if (total_seqs > double(cfg.node_budget))
      throw std::runtime_error("solve_mpc: exhaustive search exceeds the node budget");
    std::vector<int> seq(std::size_t(cfg.N), 0);
    while (true) {
      double j = 0.0;
      Vector x = x_qs;
      for (int n = 0; n < cfg.N; ++n) {
        j += detail::quad(x - ctx.xr[std::size_t(n)], cfg.Q);
        if (detail::input_penalized(cfg, n)) j += ctx.r_cost[std::size_t(seq[std::size_t(n)])];
        x = disc.A_d * x + alphabet.directions[std::size_t(seq[std::size_t(n)])];
      }
      j += detail::quad(x - ctx.xr[std::size_t(cfg.N)], cfg.P);
      if (j < ctx.incumbent) {
        ctx.incumbent = j;
        ctx.best = seq;
      }
      int pos = cfg.N - 1;
      while (pos >= 0 && seq[std::size_t(pos)] + 1 == int(k_actions)) seq[std::size_t(pos--)] = 0;
      if (pos < 0) break;
      ++seq[std::size_t(pos)];
    }
  }

  MpcSolution sol;
  sol.cost = ctx.incumbent;
  sol.first_index = ctx.best.front();
  sol.first_direction = alphabet.directions[std::size_t(sol.first_index)];
  sol.inputs.reserve(std::size_t(cfg.N));
  for (int idx : ctx.best) sol.inputs.push_back(alphabet.representatives[std::size_t(idx)]);
  return sol;
}

/// Convenience overload that derives the alphabet from (B_d, mask).
inline MpcSolution solve_mpc(const Vector& x_qs, const Vector& x_ref,
                             const DiscretizedSystem& disc, const ContinuousLti& sys,
                             const MpcConfig& cfg, const DropoutMask& mask = {}) {
  return solve_mpc(x_qs, x_ref, disc, sys, cfg, build_alphabet(disc.B_d, mask));
}

struct MpcRollout {
  Trajectory quantized;
  Trajectory reference;
  std::vector<Pattern> inputs;
  std::vector<int> dir_indices;  // canonical-alphabet index of each applied direction
  std::vector<double> costs;
  std::vector<DropoutMask> masks;
};

/// Receding horizon: solve at each step, apply only the first input, advance
/// both systems.  The dropout policy supplies a fresh mask per step.
inline MpcRollout mpc_rollout(const Vector& x0, int t_steps, const DiscretizedSystem& disc,
                              const ContinuousLti& sys, const MpcConfig& cfg,
                              const DropoutPolicy& policy = {}, std::uint64_t seed = 0) {
  require(t_steps >= 1, "mpc_rollout: need at least one step");
  const DirectionAlphabet canonical = build_alphabet(disc.B_d);

  MpcRollout out;
  out.quantized.h = disc.h;
  out.quantized.label = Trajectory::Label::quantized;
  out.reference.h = disc.h;
  out.reference.label = Trajectory::Label::reference;
  out.quantized.states.push_back(x0);
  out.reference.states.push_back(x0);

  Rng rng(seed);
  Vector x_qs = x0;
  Vector x_ref = x0;
  for (int k = 0; k < t_steps; ++k) {
    const DropoutMask mask = policy.next(int(disc.m()), rng);
    const DirectionAlphabet alphabet =
        mask.empty() ? canonical : build_alphabet(disc.B_d, mask, canonical.dedup_tol);
    const MpcSolution sol = solve_mpc(x_qs, x_ref, disc, sys, cfg, alphabet);

    const auto canon_idx = canonical.index_of(sol.first_direction, canonical.dedup_tol);
    require(canon_idx.has_value(), "mpc_rollout: applied direction missing from canonical alphabet");

    x_qs = disc.A_d * x_qs + sol.first_direction;
    x_ref = reference_step(x_ref, sys, disc.h);
    if (x_qs.norm() > kDivergenceNorm)
      throw std::runtime_error("mpc_rollout: quantized state diverged (norm > 1e6)");

    out.quantized.states.push_back(x_qs);
    out.reference.states.push_back(x_ref);
    out.inputs.push_back(sol.inputs.front());
    out.dir_indices.push_back(*canon_idx);
    out.costs.push_back(sol.cost);
    out.masks.push_back(mask);
  }
  return out;
}

}  // namespace quantemu
