// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/mpc.hpp"
#include "quantemu/nn.hpp"
#include "quantemu/rollout.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

namespace quantemu {

enum class FeatureMode {
  error_and_ref_direction,    // [x_ref - x_qs ; (x_ref_next - x_ref)/h], 2n dims
  error_and_ref_location,     // [x_ref - x_qs ; x_ref], 2n dims
  error_and_both_directions,  // adds the previous quantized-step direction, 3n dims
};

struct FeatureSpec {
  FeatureMode mode = FeatureMode::error_and_ref_direction;

  Eigen::Index dim(Eigen::Index n) const {
    return mode == FeatureMode::error_and_both_directions ? 3 * n : 2 * n;
  }
};

inline const char* feature_mode_name(FeatureMode m) {
  switch (m) {
    case FeatureMode::error_and_ref_direction: return "error_and_ref_direction";
    case FeatureMode::error_and_ref_location: return "error_and_ref_location";
    case FeatureMode::error_and_both_directions: return "error_and_both_directions";
  }
  return "error_and_ref_direction";
}

inline FeatureMode feature_mode_from_name(const std::string& name) {
  if (name == "error_and_ref_direction") return FeatureMode::error_and_ref_direction;
  if (name == "error_and_ref_location") return FeatureMode::error_and_ref_location;
  if (name == "error_and_both_directions") return FeatureMode::error_and_both_directions;
  throw std::invalid_argument("unknown feature mode: " + name);
}

/// Classifier input for one emulation step.  The 3n mode needs the previous
/// quantized state to form the past step direction; at k = 0 pass the current
/// state so that direction is zero.
inline Vector extract_features(const Vector& x_qs, const Vector& x_ref, const Vector& x_ref_next,
                               const std::optional<Vector>& x_qs_prev, const FeatureSpec& spec,
                               double h) {
  const Eigen::Index n = x_qs.size();
  require(x_ref.size() == n && x_ref_next.size() == n, "extract_features: dimension mismatch");
  require(h > 0.0, "extract_features: step size must be positive");

  Vector f(spec.dim(n));
  f.head(n) = x_ref - x_qs;
  switch (spec.mode) {
    case FeatureMode::error_and_ref_direction:
      f.tail(n) = (x_ref_next - x_ref) / h;
      break;
    case FeatureMode::error_and_ref_location:
      f.tail(n) = x_ref;
      break;
    case FeatureMode::error_and_both_directions:
      require(x_qs_prev.has_value() && x_qs_prev->size() == n,
              "extract_features: 3n mode requires the previous quantized state");
      f.segment(n, n) = (x_ref_next - x_ref) / h;
      f.tail(n) = (x_qs - *x_qs_prev) / h;
      break;
  }
  return f;
}

struct Sample {
  Vector features;
  int label = 0;  // canonical alphabet index
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  Eigen::Index feature_dim() const { return samples.empty() ? 0 : samples.front().features.size(); }
};

/// Runs one MPC rollout per start and records (features, applied-direction)
/// pairs; the result is shuffled with the seed.
inline Dataset generate_dataset(const std::vector<Vector>& starts, int t_steps,
                                const DiscretizedSystem& disc, const ContinuousLti& sys,
                                const MpcConfig& cfg, const FeatureSpec& spec,
                                std::uint64_t seed) {
  Dataset data;
  if (t_steps == 0) return data;
  require(t_steps >= 1, "generate_dataset: negative step count");

  for (const Vector& x0 : starts) {
    const MpcRollout roll = mpc_rollout(x0, t_steps, disc, sys, cfg);
    for (int k = 0; k < t_steps; ++k) {
      const std::optional<Vector> prev =
          k == 0 ? std::optional<Vector>(roll.quantized.states[0])
                 : std::optional<Vector>(roll.quantized.states[std::size_t(k) - 1]);
      Sample s;
      s.features = extract_features(roll.quantized.states[std::size_t(k)],
                                    roll.reference.states[std::size_t(k)],
                                    roll.reference.states[std::size_t(k) + 1], prev, spec, disc.h);
      s.label = roll.dir_indices[std::size_t(k)];
      data.samples.push_back(std::move(s));
    }
  }

  Rng rng(seed);
  std::shuffle(data.samples.begin(), data.samples.end(), rng);
  return data;
}

// Dataset CSV: header f_0..f_{d-1},label; 17 significant digits so the decimal
// round-trip is bit-exact.
inline void write_dataset_csv(const Dataset& data, std::ostream& out) {
  require(!data.empty(), "write_dataset_csv: empty dataset");
  const Eigen::Index d = data.feature_dim();
  for (Eigen::Index i = 0; i < d; ++i) out << "f_" << i << ",";
  out << "label\n";
  char buf[64];
  for (const Sample& s : data.samples) {
    for (Eigen::Index i = 0; i < d; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", s.features[i]);
      out << buf << ",";
    }
    out << s.label << "\n";
  }
}

inline Dataset read_dataset_csv(std::istream& in) {
  Dataset data;
  std::string line;
  require(bool(std::getline(in, line)), "read_dataset_csv: missing header");
  const std::size_t dims = std::size_t(std::count(line.begin(), line.end(), ','));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    Sample s;
    s.features.resize(Eigen::Index(dims));
    for (std::size_t i = 0; i < dims; ++i) {
      require(bool(std::getline(row, cell, ',')), "read_dataset_csv: truncated row");
      s.features[Eigen::Index(i)] = std::stod(cell);
    }
    require(bool(std::getline(row, cell, ',')), "read_dataset_csv: missing label");
    s.label = std::stoi(cell);
    data.samples.push_back(std::move(s));
  }
  return data;
}

struct ClassifierConfig {
  std::vector<int> hidden = {1200, 1200, 1200};
  // One activation per layer including the output; defaults to relu hidden
  // layers with a linear logit layer.
  std::vector<Activation> activations;
  int epochs = 20;
  int batch = 64;
  AdamHyper adam;
};

struct TrainedClassifier {
  Mlp model;
  double train_accuracy = 0.0;
  std::vector<double> epoch_losses;
};

inline double evaluate(const Mlp& model, const Dataset& data) {
  require(!data.empty(), "evaluate: empty dataset");
  std::size_t hits = 0;
  for (const Sample& s : data.samples)
    if (argmax(forward(model, s.features)) == s.label) ++hits;
  return double(hits) / double(data.size());
}

/// Minimizes softmax cross-entropy with seeded minibatch shuffling.
inline TrainedClassifier train_classifier(const Dataset& data, int num_classes,
                                          const ClassifierConfig& cfg, std::uint64_t seed) {
  require(!data.empty(), "train_classifier: empty dataset");
  require(num_classes >= 2, "train_classifier: need at least two classes");
  for (const Sample& s : data.samples)
    require(s.label >= 0 && s.label < num_classes, "train_classifier: label out of range");

  std::vector<int> dims;
  dims.push_back(int(data.feature_dim()));
  for (int w : cfg.hidden) dims.push_back(w);
  dims.push_back(num_classes);

  std::vector<Activation> acts = cfg.activations;
  if (acts.empty()) {
    acts.assign(cfg.hidden.size(), Activation::relu);
    acts.push_back(Activation::linear);
  }
  require(acts.size() == dims.size() - 1, "train_classifier: one activation per layer");

  TrainedClassifier out;
  out.model = Mlp(dims, acts, seed);
  AdamState adam = AdamState::zeros_like(out.model);

  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t(0));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += std::size_t(cfg.batch)) {
      const std::size_t end = std::min(order.size(), begin + std::size_t(cfg.batch));
      const Eigen::Index b = Eigen::Index(end - begin);

      Matrix x(data.feature_dim(), b);
      for (Eigen::Index j = 0; j < b; ++j)
        x.col(j) = data.samples[order[begin + std::size_t(j)]].features;

      ForwardCache cache;
      const Matrix logits = forward_batch(out.model, x, &cache);
      Matrix grad(num_classes, b);
      double batch_loss = 0.0;
      for (Eigen::Index j = 0; j < b; ++j) {
        const LossResult r =
            loss_cross_entropy(logits.col(j), data.samples[order[begin + std::size_t(j)]].label);
        batch_loss += r.value;
        grad.col(j) = r.grad / double(b);
      }
      batch_loss /= double(b);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train_classifier: non-finite loss");
      epoch_loss += batch_loss * double(b);

      adam_step(out.model, backward(out.model, cache, grad), adam, cfg.adam);
    }
    out.epoch_losses.push_back(epoch_loss / double(data.size()));
  }

  out.train_accuracy = evaluate(out.model, data);
  return out;
}

/// Greedy classifier rollout; the argmax is restricted to directions available
/// under the per-step dropout mask.
inline PolicyRollout supervised_rollout(const Vector& x0, int t_steps, const Mlp& model,
                                        const DiscretizedSystem& disc, const ContinuousLti& sys,
                                        const DirectionAlphabet& canonical,
                                        const FeatureSpec& spec,
                                        const DropoutPolicy& policy = {},
                                        std::uint64_t seed = 0) {
  require(model.output_dim() == Eigen::Index(canonical.size()),
          "supervised_rollout: model output does not match the alphabet");
  std::optional<Vector> prev;
  return detail::run_policy_rollout(
      x0, t_steps, disc, sys, canonical, policy, seed,
      [&](const Vector& x_qs, const Vector& x_ref, const Vector& x_ref_next,
          const std::vector<int>& avail) {
        const Vector f = extract_features(
            x_qs, x_ref, x_ref_next, prev.has_value() ? prev : std::optional<Vector>(x_qs), spec,
            disc.h);
        prev = x_qs;
        return masked_argmax(forward(model, f), avail);
      });
}

}  // namespace quantemu
