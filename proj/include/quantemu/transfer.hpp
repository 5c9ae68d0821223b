// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/dqn.hpp"
#include "quantemu/kdtree.hpp"
#include "quantemu/supervised.hpp"

namespace quantemu {

/// Invertible state-space transform z = Ox together with its block-diagonal
/// lift acting on packed feature/state vectors [a ; b] -> [O^{-1}a ; O^{-1}b].
struct TransferMap {
  Matrix O;
  Matrix O_inv;
  Matrix lift;      // blkdiag(O^{-1}, O^{-1})
  Matrix lift_inv;  // blkdiag(O, O)

  Eigen::Index n() const { return O.rows(); }

  static TransferMap from(const Matrix& o) {
    require(o.rows() == o.cols(), "TransferMap: O must be square");
    const Eigen::Index n = o.rows();
    const double scale = std::max(1.0, std::pow(max_abs(o), double(n)));
    require(std::abs(o.determinant()) > 1e-12 * scale, "TransferMap: O is singular");

    TransferMap map;
    map.O = o;
    map.O_inv = o.inverse();
    require(max_abs(map.O * map.O_inv - Matrix::Identity(n, n)) < 1e-10,
            "TransferMap: inverse check failed");

    map.lift = Matrix::Zero(2 * n, 2 * n);
    map.lift.topLeftCorner(n, n) = map.O_inv;
    map.lift.bottomRightCorner(n, n) = map.O_inv;
    map.lift_inv = Matrix::Zero(2 * n, 2 * n);
    map.lift_inv.topLeftCorner(n, n) = map.O;
    map.lift_inv.bottomRightCorner(n, n) = map.O;
    return map;
  }
};

/// H_o = O H O^{-1}, the similar system seen in the transformed coordinates.
inline Matrix conjugate_system(const Matrix& h, const Matrix& o) {
  require(h.rows() == h.cols() && h.rows() == o.rows(), "conjugate_system: dimension mismatch");
  const TransferMap map = TransferMap::from(o);
  return map.O * h * map.O_inv;
}

/// True iff {O d : d in alphabet} equals the alphabet as a set within tol,
/// matched greedily with each target direction used once.
inline bool is_alphabet_invariant(const Matrix& o, const DirectionAlphabet& alphabet,
                                  double tol = 1e-9) {
  require(!alphabet.directions.empty(), "is_alphabet_invariant: empty alphabet");
  std::vector<bool> used(alphabet.size(), false);
  for (const Vector& d : alphabet.directions) {
    const Vector t = o * d;
    bool matched = false;
    for (std::size_t j = 0; j < alphabet.size(); ++j) {
      if (used[j]) continue;
      if (max_abs(alphabet.directions[j] - t) <= tol) {
        used[j] = true;
        matched = true;
        break;
      }
    }
    if (!matched) return false;
  }
  return true;
}

/// Folds the lift into the first affine layer: the returned network satisfies
/// q_new(s_o) = q(blkdiag(O^{-1},O^{-1}) s_o) exactly up to rounding.
inline Mlp transform_q_weights(const Mlp& q_net, const TransferMap& map) {
  require(q_net.layer_count() >= 1, "transform_q_weights: empty network");
  require(q_net.input_dim() == map.lift.rows(),
          "transform_q_weights: first layer does not accept the lifted state");
  Mlp out = clone_weights(q_net);
  auto& layers = out.mutable_layers();
  layers[0].W = layers[0].W * map.lift;
  return out;
}

/// Base policy wrapped with the coordinate transform and the mapping rule M.
struct TransferredPolicy {
  enum class BaseKind { classifier, q_network };

  Mlp model;
  BaseKind kind = BaseKind::q_network;
  DirectionAlphabet alphabet;  // action set of the quantized plant
  TransferMap map;
  bool invariant = false;     // set at construction from the alphabet
  bool exclude_zero = true;   // zero direction is not an M candidate
  KdTree tree;                // backs nearest-direction lookups

  static TransferredPolicy make(Mlp base_model, BaseKind kind, const DirectionAlphabet& alphabet,
                                const TransferMap& map, bool exclude_zero = true) {
    require(base_model.input_dim() == map.lift.rows(),
            "TransferredPolicy: base model input dim must be 2n");
    require(base_model.output_dim() == Eigen::Index(alphabet.size()),
            "TransferredPolicy: base model output must index the alphabet");
    TransferredPolicy tp;
    tp.model = std::move(base_model);
    tp.kind = kind;
    tp.alphabet = alphabet;
    tp.map = map;
    tp.exclude_zero = exclude_zero;
    tp.invariant = is_alphabet_invariant(map.O, alphabet, alphabet.dedup_tol);
    tp.tree = KdTree::build(alphabet.directions);
    if (exclude_zero && alphabet.zero_index >= 0) tp.tree = tp.tree.remove(alphabet.zero_index);
    return tp;
  }
};

struct TransferStep {
  Vector d_star;       // applied direction, a member of the alphabet
  int index = -1;      // canonical index of d_star
  Vector d_o_raw;      // O * F(lifted features), before correction
  double correction_norm = 0.0;
  bool corrected = false;
};

namespace detail {

inline KdTree remove_indices(KdTree tree, const std::vector<int>& indices) {
  for (int idx : indices)
    if (tree.contains(idx)) tree = tree.remove(idx);
  return tree;
}

}  // namespace detail

/**
 * One transferred decision: lift-transform the features into the base
 * coordinates, evaluate the base policy, rotate the predicted direction back
 * by O, and snap it to the alphabet with the mapping rule M.  The snap is
 * skipped when the alphabet is invariant and the raw direction is already a
 * member.  `unavailable` lists canonical indices dropped for this step; the
 * rule then queries a tree with those nodes removed.
 */
inline TransferStep transfer_policy_step(const TransferredPolicy& tp, const Vector& f_o,
                                         const std::vector<int>& unavailable = {}) {
  require(f_o.size() == tp.map.lift.rows(), "transfer_policy_step: feature dimension mismatch");
  const Vector f = tp.map.lift * f_o;
  const int base_index = argmax(forward(tp.model, f));
  const Vector d = tp.alphabet.directions[std::size_t(base_index)];

  TransferStep step;
  step.d_o_raw = tp.map.O * d;

  // Under an invariant alphabet the rotated prediction is already a member
  // and the mapping rule M is skipped entirely (so a zero prediction passes
  // through; the zero exclusion applies only when M runs).
  const bool masked = !unavailable.empty();
  if (tp.invariant && !masked) {
    if (auto idx = tp.alphabet.index_of(step.d_o_raw, tp.alphabet.dedup_tol)) {
      step.index = *idx;
      step.d_star = tp.alphabet.directions[std::size_t(*idx)];
      step.correction_norm = (step.d_star - step.d_o_raw).norm();
      return step;
    }
  }

  const KdTree tree = masked ? detail::remove_indices(tp.tree, unavailable) : tp.tree;
  require(tree.size() > 0, "transfer_policy_step: no candidate directions remain");
  const auto hit = tree.query(step.d_o_raw);
  step.index = hit.index;
  step.d_star = hit.point;
  step.correction_norm = (step.d_star - step.d_o_raw).norm();
  step.corrected = true;
  return step;
}

struct TransferReportRow {
  int state_id = 0;
  bool agree = false;
  int base_dir_index = -1;
  int transferred_dir_index = -1;
  double nn_correction_norm = 0.0;
};

struct TheoremReport {
  double agreement_rate = 0.0;
  std::vector<TransferReportRow> rows;
};

/**
 * Argmax form of the optimal-policy transfer claim: under an alphabet-invariant
 * transform, the weight-absorbed network must select, at every state s_o, the
 * direction O * pi(blkdiag(O^{-1},O^{-1}) s_o) where pi is the base greedy
 * policy.  With consistent tie-breaking the agreement rate is 1.
 */
inline TheoremReport verify_theorem1(const DqnAgent& agent, const TransferMap& map,
                                     const std::vector<Vector>& states) {
  require(is_alphabet_invariant(map.O, agent.alphabet, agent.alphabet.dedup_tol),
          "verify_theorem1: alphabet is not invariant under O");
  require(!states.empty(), "verify_theorem1: need at least one state");

  const Mlp transformed = transform_q_weights(agent.q_net, map);

  // The reference route follows the claim literally, with the block-diagonal
  // lift rebuilt from O itself; a corrupted map.lift then shows up as
  // disagreement instead of cancelling out of both routes.
  const Eigen::Index n = map.n();
  Matrix reference_lift = Matrix::Zero(2 * n, 2 * n);
  reference_lift.topLeftCorner(n, n) = map.O_inv;
  reference_lift.bottomRightCorner(n, n) = map.O_inv;

  TheoremReport report;
  std::size_t agreements = 0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Vector& s_o = states[i];
    const int transferred_base = argmax(forward(transformed, s_o));
    const int direct_base = argmax(forward(agent.q_net, Vector(reference_lift * s_o)));

    // Both routes produce the new-problem direction O * directions[index];
    // agreement of the indices is agreement of the decisions.
    TransferReportRow row;
    row.state_id = int(i);
    row.base_dir_index = direct_base;
    row.transferred_dir_index = transferred_base;
    row.agree = transferred_base == direct_base;
    const Vector target = map.O * agent.alphabet.directions[std::size_t(direct_base)];
    row.nn_correction_norm =
        (map.O * agent.alphabet.directions[std::size_t(transferred_base)] - target).norm();
    agreements += row.agree ? 1 : 0;
    report.rows.push_back(row);
  }
  report.agreement_rate = double(agreements) / double(states.size());
  return report;
}

/// Trajectory of the transferred policy against the new reference flow, with
/// the per-step mapping-rule report alongside.
struct TransferRollout {
  PolicyRollout rollout;
  std::vector<TransferStep> steps;
};

inline TransferRollout transfer_rollout(const TransferredPolicy& tp, const Vector& x0, int t_steps,
                                        const DiscretizedSystem& disc,
                                        const ContinuousLti& new_sys, const FeatureSpec& spec,
                                        const DropoutPolicy& policy = {}, std::uint64_t seed = 0) {
  TransferRollout out;
  std::optional<Vector> prev;
  out.rollout = detail::run_policy_rollout(
      x0, t_steps, disc, new_sys, tp.alphabet, policy, seed,
      [&](const Vector& x_qs, const Vector& x_ref, const Vector& x_ref_next,
          const std::vector<int>& avail) {
        Vector f_o;
        if (tp.kind == TransferredPolicy::BaseKind::q_network) {
          f_o = EmulationState::from_states(x_qs, x_ref).packed();
        } else {
          f_o = extract_features(x_qs, x_ref, x_ref_next,
                                 prev.has_value() ? prev : std::optional<Vector>(x_qs), spec,
                                 disc.h);
          prev = x_qs;
        }
        std::vector<int> unavailable;
        if (avail.size() != tp.alphabet.size()) {
          std::vector<bool> ok(tp.alphabet.size(), false);
          for (int idx : avail) ok[std::size_t(idx)] = true;
          for (std::size_t i = 0; i < ok.size(); ++i)
            if (!ok[i]) unavailable.push_back(int(i));
        }
        TransferStep step = transfer_policy_step(tp, f_o, unavailable);
        const int chosen = step.index;
        out.steps.push_back(std::move(step));
        return chosen;
      });
  return out;
}

struct WarmStartComparison {
  DqnAgent warm;
  DqnAgent cold;
  double warm_mean_error = 0.0;  // mean terminal emulation error over the eval starts
  double cold_mean_error = 0.0;
  std::vector<double> warm_errors;
  std::vector<double> cold_errors;
};

/// Trains a copied-parameter agent and a freshly initialized one on the new
/// problem for the same number of episodes with identical environment
/// randomness, then evaluates both greedily from the given starts.
inline WarmStartComparison warm_start_train(const DqnAgent& base, const DiscretizedSystem& disc,
                                            const ContinuousLti& new_sys, int episodes,
                                            int steps_per_episode, std::uint64_t seed,
                                            const std::vector<Vector>& eval_starts, int eval_steps) {
  require(!eval_starts.empty(), "warm_start_train: need evaluation starts");

  WarmStartComparison cmp;
  cmp.warm = base;
  cmp.warm.target_net = clone_weights(cmp.warm.q_net);
  cmp.warm.epsilon = base.hyper.epsilon_start;

  cmp.cold = make_dqn_agent(disc.n(), base.alphabet,
                            [&] {
                              std::vector<int> hidden;
                              for (std::size_t l = 0; l + 1 < base.q_net.layer_count(); ++l)
                                hidden.push_back(int(base.q_net.layers()[l].W.rows()));
                              return hidden;
                            }(),
                            seed, base.hyper);
  require(cmp.cold.q_net.input_dim() == cmp.warm.q_net.input_dim() &&
              cmp.cold.q_net.output_dim() == cmp.warm.q_net.output_dim(),
          "warm_start_train: architecture mismatch");

  if (episodes > 0) {
    train(cmp.warm, disc, new_sys, episodes, steps_per_episode, {}, seed);
    train(cmp.cold, disc, new_sys, episodes, steps_per_episode, {}, seed);
  }

  for (const Vector& x0 : eval_starts) {
    cmp.warm_errors.push_back(
        greedy_rollout(cmp.warm, disc, new_sys, x0, eval_steps).terminal_error());
    cmp.cold_errors.push_back(
        greedy_rollout(cmp.cold, disc, new_sys, x0, eval_steps).terminal_error());
  }
  for (double e : cmp.warm_errors) cmp.warm_mean_error += e / double(cmp.warm_errors.size());
  for (double e : cmp.cold_errors) cmp.cold_mean_error += e / double(cmp.cold_errors.size());
  return cmp;
}

}  // namespace quantemu
