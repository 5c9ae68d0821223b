// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/dqn.hpp"
#include "quantemu/mpc.hpp"
#include "quantemu/supervised.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

namespace quantemu {

/// Raised for unparsable or schema-invalid configuration; the CLI maps it to
/// exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SystemConfig {
  Matrix A;
  Matrix B;
  Matrix H;
  double h = 0.0;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index m() const { return B.cols(); }
};

struct SupervisedConfig {
  FeatureSpec features;
  int starts = 50;
  int steps = 200;
  ClassifierConfig classifier;
  int test_starts = 6;
  int test_steps = 140;
};

struct DqnTrainConfig {
  std::vector<int> hidden = {200};
  DqnHyper hyper;
  int episodes = 150;
  int steps = 150;
};

struct TransferConfig {
  Matrix O;
  std::optional<Matrix> H_o;  // defaults to the conjugated system
  bool exclude_zero = true;
  std::string base = "dqn";  // which trained model the policy wraps
};

struct RunConfig {
  int T = 200;
  Vector x0;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
};

struct ExperimentConfig {
  SystemConfig system;
  MpcConfig mpc;
  SupervisedConfig supervised;
  DqnTrainConfig dqn;
  std::optional<TransferConfig> transfer;
  DropoutPolicy dropout;
  RunConfig run;
  std::uint64_t config_hash = 0;
};

namespace detail {

using Json = nlohmann::json;

inline ConfigError config_error(const std::string& path, const std::string& what) {
  return ConfigError("config error at " + path + ": " + what);
}

inline const Json& member(const Json& obj, const std::string& path, const std::string& key) {
  if (!obj.is_object()) throw config_error(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw config_error(path + "/" + key, "missing required key");
  return *it;
}

template <typename T>
T get_or(const Json& obj, const std::string& path, const std::string& key, T fallback) {
  if (!obj.is_object()) throw config_error(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception& e) {
    throw config_error(path + "/" + key, e.what());
  }
}

inline Matrix parse_matrix(const Json& j, const std::string& path, Eigen::Index rows = -1,
                           Eigen::Index cols = -1) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw config_error(path, "expected a matrix as a nested row-major list");
  const Eigen::Index r = Eigen::Index(j.size());
  const Eigen::Index c = Eigen::Index(j[0].size());
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (!j[std::size_t(i)].is_array() || Eigen::Index(j[std::size_t(i)].size()) != c)
      throw config_error(path, "ragged matrix rows");
    for (Eigen::Index k = 0; k < c; ++k) {
      const Json& cell = j[std::size_t(i)][std::size_t(k)];
      if (!cell.is_number()) throw config_error(path, "matrix entries must be numbers");
      m(i, k) = cell.get<double>();
    }
  }
  if (rows >= 0 && m.rows() != rows)
    throw config_error(path, "expected " + std::to_string(rows) + " rows");
  if (cols >= 0 && m.cols() != cols)
    throw config_error(path, "expected " + std::to_string(cols) + " columns");
  return m;
}

inline Vector parse_vector(const Json& j, const std::string& path, Eigen::Index dim = -1) {
  if (!j.is_array() || j.empty()) throw config_error(path, "expected a non-empty list");
  Vector v(Eigen::Index(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw config_error(path, "entries must be numbers");
    v[Eigen::Index(i)] = j[i].get<double>();
  }
  if (dim >= 0 && v.size() != dim)
    throw config_error(path, "expected dimension " + std::to_string(dim));
  return v;
}

inline std::string position_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

/// Parses and validates a configuration document.  The system block has no
/// defaults; every other block falls back to the built-in experiment values.
inline ExperimentConfig parse_config(const std::string& text) {
  using detail::Json;
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config parse failure at ") +
                      detail::position_of(text, e.byte > 0 ? std::size_t(e.byte - 1) : 0) + ": " +
                      e.what());
  }
  if (!doc.is_object()) throw ConfigError("config error at /: document must be an object");

  ExperimentConfig cfg;
  cfg.config_hash = fnv1a(text);

  // system block: all fields required.
  {
    const Json& sys = detail::member(doc, "", "system");
    cfg.system.A = detail::parse_matrix(detail::member(sys, "/system", "A"), "/system/A");
    if (cfg.system.A.rows() != cfg.system.A.cols())
      throw detail::config_error("/system/A", "A must be square");
    const Eigen::Index n = cfg.system.A.rows();
    cfg.system.B = detail::parse_matrix(detail::member(sys, "/system", "B"), "/system/B", n);
    cfg.system.H = detail::parse_matrix(detail::member(sys, "/system", "H"), "/system/H", n, n);
    const Json& h = detail::member(sys, "/system", "h");
    if (!h.is_number() || h.get<double>() <= 0.0)
      throw detail::config_error("/system/h", "h must be a positive number");
    cfg.system.h = h.get<double>();
  }
  const Eigen::Index n = cfg.system.n();
  const Eigen::Index m = cfg.system.m();

  // mpc block.
  {
    const Json mpc = doc.value("mpc", Json::object());
    const std::string where = "/mpc";
    cfg.mpc.N = detail::get_or(mpc, where, "N", 2);
    cfg.mpc.P = mpc.contains("P") ? detail::parse_matrix(mpc["P"], where + "/P", n, n)
                                  : Matrix(5.0 * Matrix::Identity(n, n));
    cfg.mpc.Q = mpc.contains("Q") ? detail::parse_matrix(mpc["Q"], where + "/Q", n, n)
                                  : Matrix(5.0 * Matrix::Identity(n, n));
    cfg.mpc.R = mpc.contains("R") ? detail::parse_matrix(mpc["R"], where + "/R", m, m)
                                  : Matrix(0.05 * Matrix::Identity(m, m));
    const std::string search = detail::get_or<std::string>(mpc, where, "search", "branch_and_bound");
    if (search == "exhaustive")
      cfg.mpc.search = SearchMode::exhaustive;
    else if (search == "branch_and_bound")
      cfg.mpc.search = SearchMode::branch_and_bound;
    else
      throw detail::config_error(where + "/search", "must be exhaustive or branch_and_bound");
    cfg.mpc.node_budget = detail::get_or<std::uint64_t>(mpc, where, "node_budget", 1'000'000);
    cfg.mpc.terminal_input_penalty_only =
        detail::get_or(mpc, where, "terminal_input_penalty_only", false);
    try {
      cfg.mpc.validate(n, m);
    } catch (const std::invalid_argument& e) {
      throw detail::config_error(where, e.what());
    }
  }

  // supervised block.
  {
    const Json sup = doc.value("supervised", Json::object());
    const std::string where = "/supervised";
    try {
      cfg.supervised.features.mode = feature_mode_from_name(
          detail::get_or<std::string>(sup, where, "feature_mode", "error_and_ref_direction"));
    } catch (const std::invalid_argument& e) {
      throw detail::config_error(where + "/feature_mode", e.what());
    }
    cfg.supervised.starts = detail::get_or(sup, where, "starts", 50);
    cfg.supervised.steps = detail::get_or(sup, where, "steps", 200);
    cfg.supervised.test_starts = detail::get_or(sup, where, "test_starts", 6);
    cfg.supervised.test_steps = detail::get_or(sup, where, "test_steps", 140);
    cfg.supervised.classifier.hidden =
        detail::get_or(sup, where, "hidden", std::vector<int>{1200, 1200, 1200});
    if (sup.contains("activations")) {
      cfg.supervised.classifier.activations.clear();
      for (const auto& a : sup["activations"]) {
        try {
          cfg.supervised.classifier.activations.push_back(
              activation_from_name(a.get<std::string>()));
        } catch (const std::exception& e) {
          throw detail::config_error(where + "/activations", e.what());
        }
      }
    }
    cfg.supervised.classifier.epochs = detail::get_or(sup, where, "epochs", 20);
    cfg.supervised.classifier.batch = detail::get_or(sup, where, "batch", 64);
    cfg.supervised.classifier.adam.lr = detail::get_or(sup, where, "lr", 1e-3);
  }

  // dqn block.
  {
    const Json dqn = doc.value("dqn", Json::object());
    const std::string where = "/dqn";
    cfg.dqn.hidden = detail::get_or(dqn, where, "hidden", std::vector<int>{200});
    cfg.dqn.hyper.gamma = detail::get_or(dqn, where, "gamma", 0.9);
    cfg.dqn.hyper.epsilon_start = detail::get_or(dqn, where, "epsilon_start", 1.0);
    cfg.dqn.hyper.epsilon_min = detail::get_or(dqn, where, "epsilon_min", 0.05);
    cfg.dqn.hyper.anneal_fraction = detail::get_or(dqn, where, "anneal_fraction", 0.6);
    cfg.dqn.hyper.sync_period = detail::get_or(dqn, where, "sync_period", 50);
    cfg.dqn.hyper.capacity = detail::get_or<std::size_t>(dqn, where, "capacity", 10000);
    cfg.dqn.hyper.batch = detail::get_or(dqn, where, "batch", 64);
    cfg.dqn.hyper.adam.lr = detail::get_or(dqn, where, "lr", 1e-3);
    const std::string reward = detail::get_or<std::string>(dqn, where, "reward_mode", "next_error");
    if (reward == "literal")
      cfg.dqn.hyper.reward_mode = RewardMode::literal;
    else if (reward == "next_error")
      cfg.dqn.hyper.reward_mode = RewardMode::next_error;
    else
      throw detail::config_error(where + "/reward_mode", "must be literal or next_error");
    cfg.dqn.episodes = detail::get_or(dqn, where, "episodes", 150);
    cfg.dqn.steps = detail::get_or(dqn, where, "steps", 150);
    try {
      cfg.dqn.hyper.validate();
    } catch (const std::invalid_argument& e) {
      throw detail::config_error(where, e.what());
    }
  }

  // transfer block (optional).
  if (doc.contains("transfer")) {
    const Json& tr = doc["transfer"];
    const std::string where = "/transfer";
    TransferConfig t;
    t.O = detail::parse_matrix(detail::member(tr, where, "O"), where + "/O", n, n);
    if (tr.contains("H_o")) t.H_o = detail::parse_matrix(tr["H_o"], where + "/H_o", n, n);
    t.exclude_zero = detail::get_or(tr, where, "exclude_zero", true);
    t.base = detail::get_or<std::string>(tr, where, "base", "dqn");
    if (t.base != "dqn" && t.base != "classifier")
      throw detail::config_error(where + "/base", "must be dqn or classifier");
    cfg.transfer = std::move(t);
  }

  // dropout block.
  {
    const Json drop = doc.value("dropout", Json::object());
    const std::string where = "/dropout";
    const std::string mode = detail::get_or<std::string>(drop, where, "mode", "none");
    if (mode == "none") {
      cfg.dropout = DropoutPolicy::none();
    } else if (mode == "fixed") {
      const std::vector<int> channels =
          detail::get_or(drop, where, "channels", std::vector<int>{});
      DropoutMask mask(channels);
      try {
        mask.validate(int(m));
      } catch (const std::invalid_argument& e) {
        throw detail::config_error(where + "/channels", e.what());
      }
      cfg.dropout = DropoutPolicy::fixed(mask);
    } else if (mode == "random_k") {
      const int k = detail::get_or(drop, where, "k", 1);
      if (k < 0 || k > int(m)) throw detail::config_error(where + "/k", "k out of range");
      cfg.dropout = DropoutPolicy::random_k_per_step(k);
    } else {
      throw detail::config_error(where + "/mode", "must be none, fixed or random_k");
    }
  }

  // run block.
  {
    const Json run = doc.value("run", Json::object());
    const std::string where = "/run";
    cfg.run.T = detail::get_or(run, where, "T", 200);
    if (cfg.run.T < 1) throw detail::config_error(where + "/T", "T must be at least 1");
    cfg.run.x0 = run.contains("x0") ? detail::parse_vector(run["x0"], where + "/x0", n)
                                    : [&] {
                                        Vector x = Vector::Zero(n);
                                        x(0) = 1.0;
                                        return x;
                                      }();
    cfg.run.seed = detail::get_or<std::uint64_t>(run, where, "seed", 0);
    cfg.run.out_dir = detail::get_or<std::string>(run, where, "out_dir", "out");
  }

  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config error: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace quantemu
