// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/nn.hpp"
#include "quantemu/rollout.hpp"

#include <algorithm>
#include <numbers>

namespace quantemu {

/// Markov state of the emulation problem: the tracking error paired with the
/// reference location, packed as s = [e ; x_ref].
struct EmulationState {
  Vector e;      // x_ref - x_qs
  Vector x_ref;

  static EmulationState from_states(const Vector& x_qs, const Vector& x_ref) {
    require(x_qs.size() == x_ref.size(), "EmulationState: dimension mismatch");
    return {x_ref - x_qs, x_ref};
  }

  static EmulationState from_packed(const Vector& s) {
    require(s.size() % 2 == 0, "EmulationState: packed state must have even dimension");
    const Eigen::Index n = s.size() / 2;
    return {s.head(n), s.tail(n)};
  }

  Vector packed() const {
    Vector s(2 * e.size());
    s.head(e.size()) = e;
    s.tail(e.size()) = x_ref;
    return s;
  }

  Vector x_qs() const { return x_ref - e; }
};

struct MemoryCue {
  EmulationState s;
  int d_index = 0;
  double r = 0.0;
  EmulationState s_next;
};

/// Ring buffer of memory cues; the oldest cue is evicted first.
class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity) : capacity_(capacity) {
    require(capacity >= 1, "ReplayMemory: capacity must be positive");
  }

  void push(MemoryCue cue) {
    if (cues_.size() < capacity_) {
      cues_.push_back(std::move(cue));
    } else {
      cues_[head_] = std::move(cue);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return cues_.size(); }
  std::size_t capacity() const { return capacity_; }
  const MemoryCue& at(std::size_t i) const { return cues_[i]; }

  /// Uniform sample with replacement.
  std::vector<const MemoryCue*> sample(std::size_t count, Rng& rng) const {
    require(!cues_.empty(), "ReplayMemory: cannot sample from empty memory");
    std::uniform_int_distribution<std::size_t> pick(0, cues_.size() - 1);
    std::vector<const MemoryCue*> batch(count);
    for (auto& slot : batch) slot = &cues_[pick(rng)];
    return batch;
  }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<MemoryCue> cues_;
};

enum class RewardMode {
  literal,     // r_t = -||e(t)||^2, the action-independent reading
  next_error,  // r_t = -||e(t+1)||^2 (default)
};

struct DqnHyper {
  double gamma = 0.9;
  double epsilon_start = 1.0;
  double epsilon_min = 0.05;
  double anneal_fraction = 0.6;  // fraction of total steps over which epsilon decays
  int sync_period = 50;          // gradient steps between target-network copies
  std::size_t capacity = 10000;
  int batch = 64;
  AdamHyper adam;
  RewardMode reward_mode = RewardMode::next_error;

  void validate() const {
    require(gamma > 0.0 && gamma < 1.0, "DqnHyper: gamma must be in (0,1)");
    require(epsilon_start >= 0.0 && epsilon_start <= 1.0, "DqnHyper: epsilon in [0,1]");
    require(epsilon_min >= 0.0 && epsilon_min <= epsilon_start, "DqnHyper: epsilon_min invalid");
    require(sync_period >= 1, "DqnHyper: sync period must be positive");
    require(batch >= 1, "DqnHyper: batch size must be positive");
  }
};

/// Q-learning agent over the direction alphabet; the Q-network maps the packed
/// 2n state to one value per canonical direction.
struct DqnAgent {
  Mlp q_net;
  Mlp target_net;
  DirectionAlphabet alphabet;
  DqnHyper hyper;
  double epsilon = 1.0;

  Eigen::Index state_dim() const { return q_net.input_dim(); }
  int num_actions() const { return int(alphabet.size()); }
};

inline DqnAgent make_dqn_agent(Eigen::Index n, const DirectionAlphabet& alphabet,
                               const std::vector<int>& hidden, std::uint64_t seed,
                               const DqnHyper& hyper = {}) {
  hyper.validate();
  require(!alphabet.directions.empty(), "make_dqn_agent: empty alphabet");
  std::vector<int> dims;
  dims.push_back(int(2 * n));
  for (int w : hidden) dims.push_back(w);
  dims.push_back(int(alphabet.size()));
  std::vector<Activation> acts(hidden.size(), Activation::relu);
  acts.push_back(Activation::linear);

  DqnAgent agent;
  agent.q_net = Mlp(dims, acts, seed);
  agent.target_net = clone_weights(agent.q_net);
  agent.alphabet = alphabet;
  agent.hyper = hyper;
  agent.epsilon = hyper.epsilon_start;
  return agent;
}

/// One environment transition: the quantized system applies the chosen
/// direction while the reference flows by e^{Hh}.
inline std::pair<EmulationState, double> env_transition(const EmulationState& s, int d_index,
                                                        const DirectionAlphabet& alphabet,
                                                        const DiscretizedSystem& disc,
                                                        const ContinuousLti& sys,
                                                        RewardMode reward_mode) {
  require(d_index >= 0 && d_index < int(alphabet.size()), "env_transition: invalid index");
  const Vector x_qs_next =
      disc.A_d * s.x_qs() + alphabet.directions[std::size_t(d_index)];
  const Vector x_ref_next = reference_step(s.x_ref, sys, disc.h);
  EmulationState next{x_ref_next - x_qs_next, x_ref_next};
  const double r = reward_mode == RewardMode::literal ? -s.e.squaredNorm()
                                                      : -next.e.squaredNorm();
  return {std::move(next), r};
}

/// Epsilon-greedy action over the available directions; the greedy branch is
/// the masked argmax of the Q-values with lowest-index ties.
inline int select_action(const DqnAgent& agent, const EmulationState& s,
                         const std::vector<int>& available, Rng& rng) {
  require(!available.empty(), "select_action: no available directions");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < agent.epsilon) {
    std::uniform_int_distribution<std::size_t> pick(0, available.size() - 1);
    return available[pick(rng)];
  }
  return masked_argmax(forward(agent.q_net, s.packed()), available);
}

struct DqnLoss {
  double value = 0.0;   // batch mean of max{l_DQN, l_MSBE}
  double l_dqn = 0.0;   // batch mean of the target-network branch
  double l_msbe = 0.0;  // batch mean of the Bellman-residual branch
  Gradients grads;
};

/**
 * Convergence-guaranteed loss: per cue,
 *
 *   l_DQN  = (r + gamma * max_d' Q_target(s', d') - Q(s, d))^2
 *   l_MSBE = (r + gamma * max_d' Q(s', d')        - Q(s, d))^2
 *
 * and the trained quantity is the batch mean of max{l_DQN, l_MSBE}.  The
 * gradient always flows through Q(s, d); it additionally flows through the
 * online max over s' exactly when l_MSBE is the active branch (subgradient of
 * the max; ties take the l_DQN branch, which adds no extra flow).
 */
inline DqnLoss compute_loss(const DqnAgent& agent,
                            const std::vector<const MemoryCue*>& batch) {
  require(!batch.empty(), "compute_loss: empty batch");
  const Eigen::Index b = Eigen::Index(batch.size());
  const Eigen::Index sd = agent.state_dim();

  Matrix s(sd, b), s_next(sd, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    s.col(j) = batch[std::size_t(j)]->s.packed();
    s_next.col(j) = batch[std::size_t(j)]->s_next.packed();
  }

  ForwardCache cache_s, cache_next;
  const Matrix q_s = forward_batch(agent.q_net, s, &cache_s);
  const Matrix q_next_online = forward_batch(agent.q_net, s_next, &cache_next);
  const Matrix q_next_target = forward_batch(agent.target_net, s_next);

  DqnLoss out;
  Matrix grad_s = Matrix::Zero(q_s.rows(), b);
  Matrix grad_next = Matrix::Zero(q_s.rows(), b);
  bool msbe_active_any = false;
  const double gamma = agent.hyper.gamma;
  const double inv_b = 1.0 / double(b);

  for (Eigen::Index j = 0; j < b; ++j) {
    const MemoryCue& cue = *batch[std::size_t(j)];
    const double q_sd = q_s(cue.d_index, j);
    const double max_target = q_next_target.col(j).maxCoeff();
    const int online_arg = argmax(q_next_online.col(j));
    const double max_online = q_next_online(online_arg, j);

    const double res_dqn = cue.r + gamma * max_target - q_sd;
    const double res_msbe = cue.r + gamma * max_online - q_sd;
    const double l_dqn = res_dqn * res_dqn;
    const double l_msbe = res_msbe * res_msbe;

    out.l_dqn += l_dqn * inv_b;
    out.l_msbe += l_msbe * inv_b;
    if (l_dqn >= l_msbe) {
      out.value += l_dqn * inv_b;
      grad_s(cue.d_index, j) = -2.0 * res_dqn * inv_b;
    } else {
      out.value += l_msbe * inv_b;
      grad_s(cue.d_index, j) = -2.0 * res_msbe * inv_b;
      grad_next(online_arg, j) = 2.0 * gamma * res_msbe * inv_b;
      msbe_active_any = true;
    }
  }

  out.grads = backward(agent.q_net, cache_s, grad_s);
  if (msbe_active_any) out.grads.add_scaled(backward(agent.q_net, cache_next, grad_next), 1.0);
  return out;
}

struct SyncEvent {
  int grad_step = 0;
  double l_dqn = 0.0;   // evaluated right after the copy; must equal l_msbe
  double l_msbe = 0.0;
};

struct TrainLogRow {
  int episode = 0;
  int step = 0;  // global environment step
  double loss = 0.0;
  double l_dqn = 0.0;
  double l_msbe = 0.0;
  double epsilon = 0.0;
  double episode_return = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> rows;
  std::vector<double> episode_returns;
  std::vector<SyncEvent> syncs;
};

/// Uniformly random point on the unit sphere (the unit circle for n = 2).
inline Vector random_unit_start(Eigen::Index n, Rng& rng) {
  if (n == 2) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    const double a = angle(rng);
    Vector x(2);
    x << std::cos(a), std::sin(a);
    return x;
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector x(n);
  do {
    for (Eigen::Index i = 0; i < n; ++i) x(i) = gauss(rng);
  } while (x.norm() < 1e-9);
  return x / x.norm();
}

/**
 * The training loop: per step observe s_t, act epsilon-greedily, store the
 * cue, take one gradient step on a sampled minibatch, and copy the parameters
 * to the target network every `sync_period` gradient steps.  Epsilon anneals
 * linearly over `anneal_fraction` of the total environment steps.  Gradient
 * steps start once the memory holds one full minibatch.
 */
inline TrainResult train(DqnAgent& agent, const DiscretizedSystem& disc, const ContinuousLti& sys,
                         int episodes, int steps_per_episode, const std::vector<Vector>& starts,
                         std::uint64_t seed, const DropoutPolicy& dropout = {}) {
  agent.hyper.validate();
  TrainResult log;
  if (episodes <= 0) return log;
  require(steps_per_episode >= 1, "train: need at least one step per episode");

  Rng rng(seed);
  ReplayMemory memory(agent.hyper.capacity);
  AdamState adam = AdamState::zeros_like(agent.q_net);

  std::vector<int> all_actions(agent.alphabet.size());
  std::iota(all_actions.begin(), all_actions.end(), 0);

  const double total_steps = double(episodes) * double(steps_per_episode);
  const double anneal_steps = std::max(1.0, agent.hyper.anneal_fraction * total_steps);
  int global_step = 0;
  int grad_steps = 0;

  for (int episode = 0; episode < episodes; ++episode) {
    const Vector x0 = starts.empty() ? random_unit_start(disc.n(), rng)
                                     : starts[std::size_t(episode) % starts.size()];
    EmulationState s = EmulationState::from_states(x0, x0);
    double episode_return = 0.0;

    for (int t = 0; t < steps_per_episode; ++t) {
      agent.epsilon = std::max(
          agent.hyper.epsilon_min,
          agent.hyper.epsilon_start -
              (agent.hyper.epsilon_start - agent.hyper.epsilon_min) * double(global_step) /
                  anneal_steps);

      const DropoutMask mask = dropout.next(int(disc.m()), rng);
      std::vector<int> available =
          mask.empty() ? all_actions
                       : available_indices(agent.alphabet,
                                           build_alphabet(disc.B_d, mask,
                                                          agent.alphabet.dedup_tol));
      const int action = select_action(agent, s, available, rng);
      auto [s_next, r] = env_transition(s, action, agent.alphabet, disc, sys,
                                        agent.hyper.reward_mode);
      episode_return += r;
      memory.push({s, action, r, s_next});
      s = std::move(s_next);
      ++global_step;

      TrainLogRow row;
      row.episode = episode;
      row.step = global_step;
      row.epsilon = agent.epsilon;
      row.episode_return = episode_return;

      if (memory.size() >= std::size_t(agent.hyper.batch)) {
        const auto batch = memory.sample(std::size_t(agent.hyper.batch), rng);
        const DqnLoss loss = compute_loss(agent, batch);
        if (!std::isfinite(loss.value)) throw std::runtime_error("train: non-finite loss");
        adam_step(agent.q_net, loss.grads, adam, agent.hyper.adam);
        ++grad_steps;
        row.loss = loss.value;
        row.l_dqn = loss.l_dqn;
        row.l_msbe = loss.l_msbe;

        if (grad_steps % agent.hyper.sync_period == 0) {
          agent.target_net = clone_weights(agent.q_net);
          // With identical parameters the two branches must coincide exactly.
          const DqnLoss probe = compute_loss(agent, batch);
          if (probe.l_dqn != probe.l_msbe)
            throw std::logic_error("train: post-sync branch mismatch");
          log.syncs.push_back({grad_steps, probe.l_dqn, probe.l_msbe});
        }
      }
      log.rows.push_back(row);
    }
    log.episode_returns.push_back(episode_return);
  }
  return log;
}

/// Greedy (epsilon = 0) rollout with per-step dropout masks.
inline PolicyRollout greedy_rollout(const DqnAgent& agent, const DiscretizedSystem& disc,
                                    const ContinuousLti& sys, const Vector& x0, int t_steps,
                                    const DropoutPolicy& policy = {}, std::uint64_t seed = 0) {
  return detail::run_policy_rollout(
      x0, t_steps, disc, sys, agent.alphabet, policy, seed,
      [&](const Vector& x_qs, const Vector& x_ref, const Vector&,
          const std::vector<int>& avail) {
        const EmulationState s = EmulationState::from_states(x_qs, x_ref);
        return masked_argmax(forward(agent.q_net, s.packed()), avail);
      });
}

}  // namespace quantemu
