// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/alphabet.hpp"
#include "quantemu/lti.hpp"

namespace quantemu {

/// Closed-loop rollout of a learned policy against the reference flow.
struct PolicyRollout {
  Trajectory quantized;
  Trajectory reference;
  std::vector<int> dir_indices;  // canonical alphabet index applied at each step
  std::vector<DropoutMask> masks;
  std::vector<double> step_errors;  // ||x_qs - x_ref||^2 after each step

  double terminal_state_norm() const { return quantized.states.back().norm(); }
  double terminal_error() const {
    return (quantized.states.back() - reference.states.back()).norm();
  }
  double max_tracking_error() const {
    double worst = 0.0;
    for (std::size_t k = 0; k < quantized.states.size(); ++k)
      worst = std::max(worst, (quantized.states[k] - reference.states[k]).norm());
    return worst;
  }
};

namespace detail {

/// Drives one policy rollout; `choose` maps (x_qs, x_ref, x_ref_next,
/// available canonical indices) to the canonical index to apply.
template <typename ChooseFn>
PolicyRollout run_policy_rollout(const Vector& x0, int t_steps, const DiscretizedSystem& disc,
                                 const ContinuousLti& sys, const DirectionAlphabet& canonical,
                                 const DropoutPolicy& policy, std::uint64_t seed,
                                 ChooseFn&& choose) {
  require(t_steps >= 1, "rollout: need at least one step");
  PolicyRollout out;
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
    std::vector<int> avail;
    if (mask.empty()) {
      avail.resize(canonical.size());
      for (std::size_t i = 0; i < canonical.size(); ++i) avail[i] = int(i);
    } else {
      avail = available_indices(canonical,
                                build_alphabet(disc.B_d, mask, canonical.dedup_tol));
    }
    const Vector x_ref_next = reference_step(x_ref, sys, disc.h);
    const int idx = choose(x_qs, x_ref, x_ref_next, avail);
    require(idx >= 0 && idx < int(canonical.size()), "rollout: policy chose an invalid index");

    x_qs = disc.A_d * x_qs + canonical.directions[std::size_t(idx)];
    x_ref = x_ref_next;
    if (x_qs.norm() > kDivergenceNorm)
      throw std::runtime_error("rollout: quantized state diverged (norm > 1e6)");

    out.quantized.states.push_back(x_qs);
    out.reference.states.push_back(x_ref);
    out.dir_indices.push_back(idx);
    out.masks.push_back(mask);
    out.step_errors.push_back((x_qs - x_ref).squaredNorm());
  }
  return out;
}

}  // namespace detail

}  // namespace quantemu
