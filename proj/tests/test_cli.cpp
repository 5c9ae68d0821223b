// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "quantemu/harness.hpp"

#include <cstdlib>
#include <filesystem>

using namespace quantemu;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("quantemu_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A fast small-scale configuration for harness round-trips.
const char* kSmallConfig = R"({
  "system": {
    "A": [[0, 0], [0, 0]],
    "B": [[1, 0, -1, 0], [0, 1, 0, 1]],
    "H": [[0, 1], [-1, -2]],
    "h": 0.05
  },
  "supervised": { "starts": 2, "steps": 30, "test_starts": 1, "test_steps": 20,
                  "hidden": [16], "epochs": 10 },
  "dqn": { "episodes": 3, "steps": 40, "hidden": [16] },
  "run": { "T": 30, "x0": [1, 0], "seed": 4 }
})";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(QUANTEMU_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config parsing", "[cli]") {
  SECTION("every built-in recipe parses") {
    for (const std::string id :
         {"fig3a", "fig3b", "fig3b-full", "fig5a", "fig5b", "fig6", "fig7", "fig8"}) {
      const ExperimentConfig cfg = parse_config(harness::recipe_config_text(id));
      CHECK(cfg.system.n() == 2);
      CHECK(cfg.system.m() == 4);
      CHECK(cfg.system.h == 0.05);
      CHECK(cfg.mpc.N == 2);
    }
    CHECK_THROWS_AS(harness::recipe_config_text("fig99"), ConfigError);
  }

  SECTION("defaults fill every block except the system one") {
    const ExperimentConfig cfg = parse_config(R"({
      "system": { "A": [[0,0],[0,0]], "B": [[1,0],[0,1]], "H": [[-1,0],[0,-1]], "h": 0.1 }
    })");
    CHECK(cfg.mpc.N == 2);
    CHECK(cfg.mpc.P(0, 0) == 5.0);
    CHECK(cfg.mpc.R.rows() == 2);
    CHECK(cfg.dqn.hyper.gamma == 0.9);
    CHECK(cfg.run.T == 200);
    CHECK(cfg.run.x0(0) == 1.0);
    CHECK_FALSE(cfg.transfer.has_value());
  }

  SECTION("missing system keys are path-anchored errors") {
    CHECK_THROWS_WITH(parse_config(R"({ "system": { "A": [[0]] } })"),
                      Catch::Matchers::ContainsSubstring("/system/B"));
    CHECK_THROWS_WITH(parse_config(R"({ "run": {} })"),
                      Catch::Matchers::ContainsSubstring("system"));
  }

  SECTION("malformed JSON reports line and column") {
    CHECK_THROWS_WITH(parse_config("{\n  \"system\": oops\n}"),
                      Catch::Matchers::ContainsSubstring("line 2"));
  }

  SECTION("shape and value validation") {
    CHECK_THROWS_AS(parse_config(R"({ "system": { "A": [[0,0],[0,0]],
      "B": [[1],[1]], "H": [[0,1],[-1,-2]], "h": -0.05 } })"),
                    ConfigError);
    CHECK_THROWS_WITH(
        parse_config(R"({ "system": { "A": [[0,0],[0,0]], "B": [[1,0],[0,1]],
          "H": [[0,1],[-1,-2]], "h": 0.05 }, "mpc": { "search": "magic" } })"),
        Catch::Matchers::ContainsSubstring("/mpc/search"));
    CHECK_THROWS_WITH(
        parse_config(R"({ "system": { "A": [[0,0],[0,0]], "B": [[1,0],[0,1]],
          "H": [[0,1],[-1,-2]], "h": 0.05 }, "dropout": { "mode": "random_k", "k": 5 } })"),
        Catch::Matchers::ContainsSubstring("/dropout/k"));
  }

  SECTION("dropout and transfer blocks parse") {
    const ExperimentConfig cfg = parse_config(harness::recipe_config_text("fig8"));
    REQUIRE(cfg.transfer.has_value());
    CHECK(cfg.transfer->O(0, 1) == 0.5);
    REQUIRE(cfg.transfer->H_o.has_value());
    CHECK((*cfg.transfer->H_o)(1, 1) == -2.5);

    const ExperimentConfig drop = parse_config(harness::recipe_config_text("fig5b"));
    CHECK(drop.dropout.mode == DropoutPolicy::Mode::random_k);
    CHECK(drop.dropout.k == 1);
  }
}

TEST_CASE("harness runs are deterministic byte-for-byte", "[cli]") {
  harness::RunContext ctx;
  ctx.cfg = parse_config(kSmallConfig);
  ctx.subcommand = "mpc-run";

  const fs::path dir_a = fresh_dir("mpc_a");
  const fs::path dir_b = fresh_dir("mpc_b");
  ctx.out_dir = dir_a;
  harness::run_mpc(ctx);
  ctx.out_dir = dir_b;
  harness::run_mpc(ctx);

  CHECK(read_text(dir_a / "rollout.csv") == read_text(dir_b / "rollout.csv"));
  CHECK(read_text(dir_a / "manifest_mpc-run.json") == read_text(dir_b / "manifest_mpc-run.json"));
  CHECK(read_text(dir_a / "rollout.csv").rfind("k,t,xqs_0,xqs_1,xref_0,xref_1,dir_index,cost,"
                                               "dropped_channels\n",
                                               0) == 0);
}

TEST_CASE("collect, train, rollout chain on a small config", "[cli]") {
  harness::RunContext ctx;
  ctx.cfg = parse_config(kSmallConfig);
  const fs::path dir = fresh_dir("chain");
  ctx.out_dir = dir;

  ctx.subcommand = "collect";
  harness::run_collect(ctx);
  CHECK(fs::exists(dir / "dataset.csv"));
  CHECK(fs::exists(dir / "test_dataset.csv"));

  ctx.subcommand = "train-supervised";
  harness::run_train_supervised(ctx);
  CHECK(fs::exists(dir / "classifier.model"));
  const std::string metrics = read_text(dir / "train_metrics.json");
  CHECK(metrics.find("train_accuracy") != std::string::npos);
  CHECK(metrics.find("test_accuracy") != std::string::npos);

  ctx.subcommand = "supervised-rollout";
  harness::run_supervised_rollout(ctx);
  CHECK(fs::exists(dir / "rollout.csv"));

  ctx.subcommand = "train-dqn";
  harness::run_train_dqn(ctx);
  CHECK(fs::exists(dir / "dqn.model"));
  const std::string log = read_text(dir / "train_log.csv");
  CHECK(log.rfind("episode,step,loss,l_dqn,l_msbe,epsilon,return\n", 0) == 0);

  ctx.subcommand = "dqn-rollout";
  harness::run_dqn_rollout(ctx);
  CHECK(fs::exists(dir / "rollout.csv"));

  ctx.cfg.transfer = TransferConfig{};
  ctx.cfg.transfer->O = (Matrix(2, 2) << 0, 1, -1, 0).finished();
  ctx.subcommand = "transfer-rollout";
  harness::run_transfer_rollout(ctx);
  const std::string report = read_text(dir / "transfer_report.csv");
  CHECK(report.rfind("state_id,agree,base_dir_index,transferred_dir_index,nn_correction_norm\n",
                     0) == 0);

  ctx.subcommand = "alphabet";
  harness::run_alphabet(ctx);
  const std::string alphabet = read_text(dir / "alphabet.csv");
  CHECK(alphabet.rfind("index,d_0,d_1,rep_u_0,rep_u_1,rep_u_2,rep_u_3\n", 0) == 0);
  CHECK(std::count(alphabet.begin(), alphabet.end(), '\n') == 26);  // header + 25 rows
}

TEST_CASE("trajectory csv export", "[cli]") {
  const ContinuousLti sys((Matrix(2, 2) << 0, 1, -1, -2).finished(), true);
  Vector x0(2);
  x0 << 1.0, 0.0;
  const Trajectory traj = simulate_reference(x0, sys, 0.05, 3);
  const std::string csv = trajectory_csv(traj);
  CHECK(csv.rfind("k,t,x_0,x_1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);  // header + 4 states
  CHECK(csv.find("\n0,0,1,0\n") != std::string::npos);
  // t column carries k * h.
  CHECK(csv.find("\n2,0.1") != std::string::npos);
}

TEST_CASE("plot renders exactly two polylines", "[cli]") {
  const fs::path dir = fresh_dir("plot");
  // A two-point rollout: one step.
  const std::string csv =
      "k,t,xqs_0,xqs_1,xref_0,xref_1,dir_index,cost,dropped_channels\n"
      "0,0,1,0,1,0,6,0.1,\n"
      "1,0.05,1,0.05,0.99,-0.04,,,\n";
  write_text_atomic(dir / "tiny.csv", csv);

  const fs::path svg_path = harness::run_plot(dir / "tiny.csv", dir);
  const std::string svg = read_text(svg_path);
  std::size_t count = 0, pos = 0;
  while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
    ++count;
    pos += 9;
  }
  CHECK(count == 2);
  CHECK(svg.find("<svg") != std::string::npos);

  write_text_atomic(dir / "bad.csv", "k,t,x_0,x_1\n0,0,1,0\n");
  CHECK_THROWS_AS(harness::run_plot(dir / "bad.csv", dir), std::runtime_error);
}

TEST_CASE("cli exit codes", "[cli]") {
  const fs::path dir = fresh_dir("exit_codes");

  SECTION("ok run") {
    CHECK(run_cli("alphabet --recipe fig3a --out-dir " + (dir / "ok").string()) == 0);
  }

  SECTION("usage and config errors exit 1") {
    CHECK(run_cli("no-such-subcommand") == 1);
    CHECK(run_cli("mpc-run") == 1);  // neither --config nor --recipe
    CHECK(run_cli("mpc-run --recipe fig99") == 1);

    write_text_atomic(dir / "broken.json", "{ not json");
    CHECK(run_cli("mpc-run --config " + (dir / "broken.json").string()) == 1);

    write_text_atomic(dir / "unstable.json", R"({
      "system": { "A": [[0,0],[0,0]], "B": [[1,0],[0,1]], "H": [[1,0],[0,1]], "h": 0.05 }
    })");
    CHECK(run_cli("mpc-run --config " + (dir / "unstable.json").string()) == 1);
  }

  SECTION("runtime failures exit 2") {
    // dqn-rollout without a trained model in the output directory.
    CHECK(run_cli("dqn-rollout --recipe fig5a --out-dir " + (dir / "empty").string()) == 2);
  }

  SECTION("environment variable overrides the output directory") {
    const fs::path env_dir = dir / "from_env";
    const std::string cmd = "QUANTEMU_OUT_DIR=" + env_dir.string() + " " + QUANTEMU_CLI_PATH +
                            " alphabet --recipe fig3a >/dev/null 2>&1";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    CHECK(fs::exists(env_dir / "alphabet.csv"));
  }
}
