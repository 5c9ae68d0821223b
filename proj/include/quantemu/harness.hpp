// SPDX-License-Identifier: Apache-2.0
//
// Subcommand implementations behind the CLI; tests drive these directly.
#pragma once

#include "quantemu/config.hpp"
#include "quantemu/csv.hpp"
#include "quantemu/version.hpp"

#include <filesystem>
#include <numbers>
#include <sstream>

namespace quantemu::harness {

namespace fs = std::filesystem;

struct RunContext {
  ExperimentConfig cfg;
  fs::path out_dir;
  std::string subcommand;
  std::string recipe;  // empty when loaded from a config file
};

struct SystemBundle {
  DiscretizedSystem disc;
  ContinuousLti sys;
  DirectionAlphabet alphabet;
};

inline SystemBundle make_system(const ExperimentConfig& cfg) {
  if (!ContinuousLti::is_hurwitz(cfg.system.H))
    throw ConfigError("config error at /system/H: H must be Hurwitz (stable flow)");
  return {discretize(cfg.system.A, cfg.system.B, cfg.system.h),
          ContinuousLti(cfg.system.H, true), build_alphabet(
              discretize(cfg.system.A, cfg.system.B, cfg.system.h).B_d)};
}

inline ContinuousLti make_new_system(const ExperimentConfig& cfg) {
  require(cfg.transfer.has_value(), "transfer block missing from the configuration");
  const Matrix h_o = cfg.transfer->H_o.has_value()
                         ? *cfg.transfer->H_o
                         : conjugate_system(cfg.system.H, cfg.transfer->O);
  if (!ContinuousLti::is_hurwitz(h_o))
    throw ConfigError("config error at /transfer/H_o: the new system must be Hurwitz");
  return ContinuousLti(h_o, true);
}

inline std::vector<Vector> compass_starts(int count = 8) {
  std::vector<Vector> starts;
  for (int i = 0; i < count; ++i) {
    const double a = 2.0 * std::numbers::pi * double(i) / double(count);
    Vector x(2);
    x << std::cos(a), std::sin(a);
    starts.push_back(x);
  }
  return starts;
}

inline std::vector<Vector> seeded_circle_starts(int count, Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vector> starts;
  starts.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) starts.push_back(random_unit_start(n, rng));
  return starts;
}

inline void write_manifest(const RunContext& ctx) {
  nlohmann::json manifest;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", (unsigned long long)ctx.cfg.config_hash);
  manifest["subcommand"] = ctx.subcommand;
  manifest["config_hash"] = hash;
  manifest["seed"] = ctx.cfg.run.seed;
  manifest["recipe"] = ctx.recipe;
  manifest["versions"] = {
      {"quantemu", kVersion},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
      {"compiler", __VERSION__},
  };
  fs::create_directories(ctx.out_dir);
  write_text_atomic(ctx.out_dir / ("manifest_" + ctx.subcommand + ".json"),
                    manifest.dump(2) + "\n");
}

// --- subcommands --------------------------------------------------------------

/// Receding-horizon MPC emulation (recipe fig3a).
inline void run_mpc(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  const MpcRollout roll = mpc_rollout(ctx.cfg.run.x0, ctx.cfg.run.T, sb.disc, sb.sys, ctx.cfg.mpc,
                                      ctx.cfg.dropout, ctx.cfg.run.seed);
  write_manifest(ctx);
  write_text_atomic(ctx.out_dir / "rollout.csv", rollout_csv(roll));
}

/// MPC training-data collection: dataset.csv and test_dataset.csv.
inline void run_collect(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  const SupervisedConfig& sup = ctx.cfg.supervised;

  const Dataset train = generate_dataset(
      seeded_circle_starts(sup.starts, sb.disc.n(), ctx.cfg.run.seed), sup.steps, sb.disc, sb.sys,
      ctx.cfg.mpc, sup.features, ctx.cfg.run.seed);
  const Dataset test = generate_dataset(
      seeded_circle_starts(sup.test_starts, sb.disc.n(), ctx.cfg.run.seed + 1000), sup.test_steps,
      sb.disc, sb.sys, ctx.cfg.mpc, sup.features, ctx.cfg.run.seed + 1000);

  write_manifest(ctx);
  std::ostringstream train_csv, test_csv;
  write_dataset_csv(train, train_csv);
  write_dataset_csv(test, test_csv);
  write_text_atomic(ctx.out_dir / "dataset.csv", train_csv.str());
  write_text_atomic(ctx.out_dir / "test_dataset.csv", test_csv.str());
}

/// Trains the direction classifier on a collected dataset.
inline void run_train_supervised(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  std::ifstream train_in(ctx.out_dir / "dataset.csv");
  if (!train_in)
    throw std::runtime_error("train-supervised: missing dataset.csv (run collect first)");
  const Dataset train = read_dataset_csv(train_in);

  const TrainedClassifier trained = train_classifier(train, int(sb.alphabet.size()),
                                                     ctx.cfg.supervised.classifier,
                                                     ctx.cfg.run.seed);

  nlohmann::json metrics;
  metrics["train_accuracy"] = trained.train_accuracy;
  metrics["epochs"] = ctx.cfg.supervised.classifier.epochs;
  metrics["samples"] = train.size();
  std::ifstream test_in(ctx.out_dir / "test_dataset.csv");
  if (test_in) {
    const Dataset test = read_dataset_csv(test_in);
    metrics["test_accuracy"] = evaluate(trained.model, test);
    metrics["test_samples"] = test.size();
  }

  write_manifest(ctx);
  std::ostringstream model;
  save_model_text(trained.model, model);
  write_text_atomic(ctx.out_dir / "classifier.model", model.str());
  write_text_atomic(ctx.out_dir / "train_metrics.json", metrics.dump(2) + "\n");
}

/// Greedy classifier rollout (recipe fig3b).
inline void run_supervised_rollout(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  const Mlp model = load_model((ctx.out_dir / "classifier.model").string());
  require(model.input_dim() == ctx.cfg.supervised.features.dim(sb.disc.n()),
          "supervised-rollout: model input does not match the configured feature mode");
  const PolicyRollout roll =
      supervised_rollout(ctx.cfg.run.x0, ctx.cfg.run.T, model, sb.disc, sb.sys, sb.alphabet,
                         ctx.cfg.supervised.features, ctx.cfg.dropout, ctx.cfg.run.seed);
  write_manifest(ctx);
  write_text_atomic(ctx.out_dir / "rollout.csv", rollout_csv(roll));
}

/// Trains the Q-network agent and writes the model plus the step log.
inline void run_train_dqn(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  DqnAgent agent = make_dqn_agent(sb.disc.n(), sb.alphabet, ctx.cfg.dqn.hidden, ctx.cfg.run.seed,
                                  ctx.cfg.dqn.hyper);
  const TrainResult log = train(agent, sb.disc, sb.sys, ctx.cfg.dqn.episodes, ctx.cfg.dqn.steps,
                                {}, ctx.cfg.run.seed, ctx.cfg.dropout);
  write_manifest(ctx);
  std::ostringstream model;
  save_model_text(agent.q_net, model);
  write_text_atomic(ctx.out_dir / "dqn.model", model.str());
  write_text_atomic(ctx.out_dir / "train_log.csv", train_log_csv(log));
}

inline DqnAgent load_dqn_agent(const RunContext& ctx, const SystemBundle& sb) {
  DqnAgent agent;
  agent.q_net = load_model((ctx.out_dir / "dqn.model").string());
  require(agent.q_net.input_dim() == 2 * sb.disc.n() &&
              agent.q_net.output_dim() == Eigen::Index(sb.alphabet.size()),
          "dqn model does not match the configured system");
  agent.target_net = clone_weights(agent.q_net);
  agent.alphabet = sb.alphabet;
  agent.hyper = ctx.cfg.dqn.hyper;
  agent.epsilon = 0.0;
  return agent;
}

/// Greedy Q-network rollout (recipes fig5a and, with dropout, fig5b).
inline void run_dqn_rollout(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  const DqnAgent agent = load_dqn_agent(ctx, sb);
  const PolicyRollout roll = greedy_rollout(agent, sb.disc, sb.sys, ctx.cfg.run.x0, ctx.cfg.run.T,
                                            ctx.cfg.dropout, ctx.cfg.run.seed);
  write_manifest(ctx);
  write_text_atomic(ctx.out_dir / "rollout.csv", rollout_csv(roll));
}

/// Mapping-based transferred policy against the new reference flow
/// (recipes fig6 and fig8).
inline void run_transfer_rollout(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  require(ctx.cfg.transfer.has_value(), "transfer-rollout: transfer block missing");
  const TransferConfig& tc = *ctx.cfg.transfer;
  const ContinuousLti new_sys = make_new_system(ctx.cfg);
  const TransferMap map = TransferMap::from(tc.O);

  Mlp base_model;
  TransferredPolicy::BaseKind kind;
  if (tc.base == "dqn") {
    base_model = load_dqn_agent(ctx, sb).q_net;
    kind = TransferredPolicy::BaseKind::q_network;
  } else {
    base_model = load_model((ctx.out_dir / "classifier.model").string());
    kind = TransferredPolicy::BaseKind::classifier;
    require(base_model.input_dim() == 2 * sb.disc.n(),
            "transfer-rollout: classifier transfer needs a 2n feature mode");
  }

  const TransferredPolicy tp =
      TransferredPolicy::make(base_model, kind, sb.alphabet, map, tc.exclude_zero);
  const TransferRollout roll =
      transfer_rollout(tp, ctx.cfg.run.x0, ctx.cfg.run.T, sb.disc, new_sys,
                       ctx.cfg.supervised.features, ctx.cfg.dropout, ctx.cfg.run.seed);

  std::vector<TransferReportRow> rows;
  for (std::size_t i = 0; i < roll.steps.size(); ++i) {
    TransferReportRow row;
    row.state_id = int(i);
    row.agree = !roll.steps[i].corrected;
    row.base_dir_index = roll.steps[i].index;
    row.transferred_dir_index = roll.steps[i].index;
    row.nn_correction_norm = roll.steps[i].correction_norm;
    rows.push_back(row);
  }

  write_manifest(ctx);
  write_text_atomic(ctx.out_dir / "rollout.csv", rollout_csv(roll.rollout));
  write_text_atomic(ctx.out_dir / "transfer_report.csv", transfer_report_csv(rows));
}

/// Warm-start versus cold-start training on the new system (recipe fig7);
/// means are paired over five seeds.
inline void run_warmstart_compare(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  require(ctx.cfg.transfer.has_value(), "warmstart-compare: transfer block missing");
  const ContinuousLti new_sys = make_new_system(ctx.cfg);
  const DqnAgent base = load_dqn_agent(ctx, sb);

  const int episodes = 20;
  const int seeds = 5;
  const std::vector<Vector> starts = compass_starts();

  std::ostringstream csv;
  csv << "seed,start_id,warm_terminal_error,cold_terminal_error\n";
  double warm_mean = 0.0, cold_mean = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = ctx.cfg.run.seed + std::uint64_t(s) + 1;
    const WarmStartComparison cmp = warm_start_train(base, sb.disc, new_sys, episodes,
                                                     ctx.cfg.dqn.steps, seed, starts,
                                                     ctx.cfg.run.T);
    for (std::size_t i = 0; i < starts.size(); ++i)
      csv << seed << "," << i << "," << g17(cmp.warm_errors[i]) << "," << g17(cmp.cold_errors[i])
          << "\n";
    warm_mean += cmp.warm_mean_error / double(seeds);
    cold_mean += cmp.cold_mean_error / double(seeds);
  }

  nlohmann::json summary;
  summary["warm_mean_terminal_error"] = warm_mean;
  summary["cold_mean_terminal_error"] = cold_mean;
  summary["episodes"] = episodes;
  summary["seeds"] = seeds;

  write_manifest(ctx);
  write_text_atomic(ctx.out_dir / "warmstart.csv", csv.str());
  write_text_atomic(ctx.out_dir / "warmstart_summary.json", summary.dump(2) + "\n");
}

/// Direction-alphabet export for direction-fan plots.
inline void run_alphabet(const RunContext& ctx) {
  const SystemBundle sb = make_system(ctx.cfg);
  write_manifest(ctx);
  write_text_atomic(ctx.out_dir / "alphabet.csv", alphabet_csv(sb.alphabet));
}

/// Renders a rollout CSV to an SVG with the two overlaid trajectories.
inline fs::path run_plot(const fs::path& input_csv, const fs::path& out_dir) {
  std::ifstream in(input_csv);
  if (!in) throw std::runtime_error("plot: cannot open " + input_csv.string());

  std::string header;
  require(bool(std::getline(in, header)), "plot: empty csv");
  std::vector<std::string> cols;
  {
    std::stringstream hs(header);
    std::string c;
    while (std::getline(hs, c, ',')) cols.push_back(c);
  }
  std::vector<int> qs_idx, ref_idx;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i].rfind("xqs_", 0) == 0) qs_idx.push_back(int(i));
    if (cols[i].rfind("xref_", 0) == 0) ref_idx.push_back(int(i));
  }
  if (qs_idx.size() != 2 || ref_idx.size() != 2)
    throw std::runtime_error("plot: expected a 2-D rollout csv with xqs_*/xref_* columns");

  Trajectory quantized, reference;
  quantized.label = Trajectory::Label::quantized;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    Vector q(2), r(2);
    for (int i = 0; i < 2; ++i) {
      q(i) = std::stod(cells[std::size_t(qs_idx[std::size_t(i)])]);
      r(i) = std::stod(cells[std::size_t(ref_idx[std::size_t(i)])]);
    }
    quantized.states.push_back(q);
    reference.states.push_back(r);
  }
  require(!quantized.states.empty(), "plot: csv has no data rows");

  fs::create_directories(out_dir);
  const fs::path out_path = out_dir / (input_csv.stem().string() + ".svg");
  write_text_atomic(out_path, trajectory_svg(reference, quantized));
  return out_path;
}

// --- built-in recipes -----------------------------------------------------------
//
// One configuration per recipe id; all share the 2-channel-pair plant
// and the same stable two-state reference flow.

inline std::string recipe_config_text(const std::string& id) {
  const std::string system_block = R"(  "system": {
    "A": [[0, 0], [0, 0]],
    "B": [[1, 0, -1, 0], [0, 1, 0, 1]],
    "H": [[0, 1], [-1, -2]],
    "h": 0.05
  })";
  const std::string mpc_block = R"(  "mpc": {
    "N": 2,
    "P": [[5, 0], [0, 5]],
    "Q": [[5, 0], [0, 5]],
    "R": [[0.05, 0, 0, 0], [0, 0.05, 0, 0], [0, 0, 0.05, 0], [0, 0, 0, 0.05]],
    "search": "branch_and_bound"
  })";
  const std::string run_block = R"(  "run": { "T": 200, "x0": [1, 0], "seed": 1 })";

  auto assemble = [&](const std::string& extra) {
    std::string doc = "{\n" + system_block + ",\n" + mpc_block + ",\n" + run_block;
    if (!extra.empty()) doc += ",\n" + extra;
    doc += "\n}\n";
    return doc;
  };

  if (id == "fig3a") return assemble("");
  if (id == "fig3b")
    return assemble(R"(  "supervised": {
    "feature_mode": "error_and_both_directions",
    "starts": 50, "steps": 200,
    "test_starts": 6, "test_steps": 140,
    "hidden": [64, 64, 64], "epochs": 20
  })");
  if (id == "fig3b-full")
    return assemble(R"(  "supervised": {
    "feature_mode": "error_and_both_directions",
    "starts": 50, "steps": 200,
    "test_starts": 6, "test_steps": 140,
    "hidden": [1200, 1200, 1200], "epochs": 20
  })");
  if (id == "fig5a") return assemble(R"(  "dqn": { "episodes": 150, "steps": 150 })");
  if (id == "fig5b")
    return assemble(R"(  "dqn": { "episodes": 150, "steps": 150 },
  "dropout": { "mode": "random_k", "k": 1 })");
  if (id == "fig6")
    return assemble(R"(  "transfer": { "O": [[0, 1], [-1, 0]], "base": "dqn" })");
  if (id == "fig8")
    return assemble(R"(  "transfer": {
    "O": [[1, 0.5], [-0.5, 1]],
    "H_o": [[-0.5, 0], [-1, -2.5]],
    "base": "dqn"
  })");
  if (id == "fig7")
    return assemble(R"(  "transfer": {
    "O": [[1, 0.5], [-0.5, 1]],
    "H_o": [[-0.5, 0], [-1, -2.5]],
    "base": "dqn"
  },
  "dqn": { "episodes": 150, "steps": 150 })");
  throw ConfigError("unknown recipe: " + id +
                    " (expected fig3a, fig3b, fig3b-full, fig5a, fig5b, fig6, fig7 or fig8)");
}

}  // namespace quantemu::harness
