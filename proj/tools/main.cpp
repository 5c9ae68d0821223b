// SPDX-License-Identifier: Apache-2.0
//
// quantemu experiment harness.  Subcommands reproduce the simulation-section
// experiments: mpc-run, collect, train-supervised, supervised-rollout,
// train-dqn, dqn-rollout, transfer-rollout, warmstart-compare, alphabet, plot.
#include "quantemu/harness.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 1;
constexpr int kExitRuntimeError = 2;

struct CommonOptions {
  std::string config_path;
  std::string recipe;
  std::string out_dir;
  std::int64_t seed = -1;
  int dropout_k = -1;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "configuration file (JSON)");
  cmd->add_option("--recipe", opt.recipe,
                  "built-in simulation recipe (fig3a, fig3b, fig3b-full, fig5a, fig5b, fig6, "
                  "fig7, fig8)");
  cmd->add_option("--out-dir", opt.out_dir, "output directory");
  cmd->add_option("--seed", opt.seed, "seed override");
  cmd->add_option("--dropout", opt.dropout_k,
                  "drop k uniformly random channels per step (overrides the config)");
}

quantemu::harness::RunContext make_context(const CommonOptions& opt, const std::string& name) {
  using quantemu::ConfigError;
  quantemu::harness::RunContext ctx;
  ctx.subcommand = name;
  ctx.recipe = opt.recipe;

  if (!opt.recipe.empty() && !opt.config_path.empty())
    throw ConfigError("give either --config or --recipe, not both");
  if (!opt.recipe.empty()) {
    ctx.cfg = quantemu::parse_config(quantemu::harness::recipe_config_text(opt.recipe));
  } else if (!opt.config_path.empty()) {
    ctx.cfg = quantemu::load_config(opt.config_path);
  } else {
    throw ConfigError("missing --config or --recipe");
  }

  if (opt.seed >= 0) ctx.cfg.run.seed = std::uint64_t(opt.seed);
  if (opt.dropout_k >= 0)
    ctx.cfg.dropout = quantemu::DropoutPolicy::random_k_per_step(opt.dropout_k);

  std::string out = ctx.cfg.run.out_dir;
  if (const char* env = std::getenv("QUANTEMU_OUT_DIR")) out = env;
  if (!opt.out_dir.empty()) out = opt.out_dir;
  ctx.out_dir = out;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantemu: quantized emulation of stable LTI systems"};
  app.require_subcommand(1);

  std::map<std::string, CommonOptions> opts;
  const std::vector<std::string> run_commands = {
      "mpc-run",      "collect",     "train-supervised", "supervised-rollout",
      "train-dqn",    "dqn-rollout", "transfer-rollout", "warmstart-compare",
      "alphabet"};
  const std::map<std::string, std::string> descriptions = {
      {"mpc-run", "receding-horizon MPC emulation rollout"},
      {"collect", "generate MPC training data"},
      {"train-supervised", "train the direction classifier"},
      {"supervised-rollout", "greedy classifier rollout"},
      {"train-dqn", "train the Q-network"},
      {"dqn-rollout", "greedy Q-network rollout"},
      {"transfer-rollout", "mapping-based transferred policy on a new system"},
      {"warmstart-compare", "warm vs cold training on a new system"},
      {"alphabet", "export the direction alphabet"},
  };
  for (const std::string& name : run_commands)
    add_common(app.add_subcommand(name, descriptions.at(name)), opts[name]);

  std::string plot_input;
  std::string plot_out_dir = ".";
  CLI::App* plot = app.add_subcommand("plot", "render a rollout CSV to SVG");
  plot->add_option("input", plot_input, "rollout csv path")->required();
  plot->add_option("--out-dir", plot_out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    using namespace quantemu::harness;
    if (plot->parsed()) {
      const auto out = run_plot(plot_input, plot_out_dir);
      std::cout << "wrote " << out.string() << "\n";
      return kExitOk;
    }
    const std::string name = app.get_subcommands().front()->get_name();
    RunContext ctx = make_context(opts.at(name), name);
    if (name == "mpc-run") run_mpc(ctx);
    else if (name == "collect") run_collect(ctx);
    else if (name == "train-supervised") run_train_supervised(ctx);
    else if (name == "supervised-rollout") run_supervised_rollout(ctx);
    else if (name == "train-dqn") run_train_dqn(ctx);
    else if (name == "dqn-rollout") run_dqn_rollout(ctx);
    else if (name == "transfer-rollout") run_transfer_rollout(ctx);
    else if (name == "warmstart-compare") run_warmstart_compare(ctx);
    else if (name == "alphabet") run_alphabet(ctx);
    std::cout << "wrote artifacts to " << ctx.out_dir.string() << "\n";
    return kExitOk;
  } catch (const quantemu::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}
