// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "quantemu/dqn.hpp"
#include "quantemu/mpc.hpp"
#include "quantemu/rollout.hpp"
#include "quantemu/transfer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace quantemu {

/// Shortest decimal form that round-trips a double exactly.
inline std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes through a temporary file and renames into place.
inline void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// --- CSV emitters ------------------------------------------------------------

/// Header k,t,x_0..x_{n-1}, one row per step.
inline std::string trajectory_csv(const Trajectory& traj) {
  require(!traj.states.empty(), "trajectory_csv: empty trajectory");
  std::ostringstream out;
  out << "k,t";
  for (Eigen::Index i = 0; i < traj.n(); ++i) out << ",x_" << i;
  out << "\n";
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    out << k << "," << g17(double(k) * traj.h);
    for (Eigen::Index i = 0; i < traj.n(); ++i) out << "," << g17(traj.states[k][i]);
    out << "\n";
  }
  return out.str();
}

inline std::string mask_field(const DropoutMask& mask) {
  std::string s;
  for (int c : mask.dropped) {
    if (!s.empty()) s += ';';
    s += std::to_string(c);
  }
  return s;
}

namespace detail {

// Shared layout for rollout exports; the action columns are empty on the
// final row, which carries only the terminal states.
inline std::string rollout_csv_impl(const Trajectory& quantized, const Trajectory& reference,
                                    const std::vector<int>& dir_indices,
                                    const std::vector<double>& costs,
                                    const std::vector<DropoutMask>& masks) {
  const Eigen::Index n = quantized.n();
  std::ostringstream out;
  out << "k,t";
  for (Eigen::Index i = 0; i < n; ++i) out << ",xqs_" << i;
  for (Eigen::Index i = 0; i < n; ++i) out << ",xref_" << i;
  out << ",dir_index,cost,dropped_channels\n";
  for (std::size_t k = 0; k < quantized.states.size(); ++k) {
    out << k << "," << g17(double(k) * quantized.h);
    for (Eigen::Index i = 0; i < n; ++i) out << "," << g17(quantized.states[k][i]);
    for (Eigen::Index i = 0; i < n; ++i) out << "," << g17(reference.states[k][i]);
    if (k < dir_indices.size()) {
      out << "," << dir_indices[k] << "," << g17(costs[k]) << "," << mask_field(masks[k]);
    } else {
      out << ",,,";
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace detail

/// Header k,t,xqs_*,xref_*,dir_index,cost,dropped_channels; cost is the
/// receding-horizon objective of the step.
inline std::string rollout_csv(const MpcRollout& roll) {
  return detail::rollout_csv_impl(roll.quantized, roll.reference, roll.dir_indices, roll.costs,
                                  roll.masks);
}

/// Same layout as the MPC export; the cost column carries the squared
/// tracking error after the step.
inline std::string rollout_csv(const PolicyRollout& roll) {
  return detail::rollout_csv_impl(roll.quantized, roll.reference, roll.dir_indices,
                                  roll.step_errors, roll.masks);
}

/// Header index,d_0..d_{n-1},rep_u_0..rep_u_{m-1}.
inline std::string alphabet_csv(const DirectionAlphabet& alphabet) {
  require(!alphabet.directions.empty(), "alphabet_csv: empty alphabet");
  const Eigen::Index n = alphabet.directions.front().size();
  const std::size_t m = alphabet.representatives.front().size();
  std::ostringstream out;
  out << "index";
  for (Eigen::Index i = 0; i < n; ++i) out << ",d_" << i;
  for (std::size_t i = 0; i < m; ++i) out << ",rep_u_" << i;
  out << "\n";
  for (std::size_t idx = 0; idx < alphabet.size(); ++idx) {
    out << idx;
    for (Eigen::Index i = 0; i < n; ++i) out << "," << g17(alphabet.directions[idx][i]);
    for (std::size_t i = 0; i < m; ++i) out << "," << alphabet.representatives[idx][i];
    out << "\n";
  }
  return out.str();
}

/// Header episode,step,loss,l_dqn,l_msbe,epsilon,return.
inline std::string train_log_csv(const TrainResult& log) {
  std::ostringstream out;
  out << "episode,step,loss,l_dqn,l_msbe,epsilon,return\n";
  for (const TrainLogRow& r : log.rows)
    out << r.episode << "," << r.step << "," << g17(r.loss) << "," << g17(r.l_dqn) << ","
        << g17(r.l_msbe) << "," << g17(r.epsilon) << "," << g17(r.episode_return) << "\n";
  return out.str();
}

/// Header state_id,agree,base_dir_index,transferred_dir_index,nn_correction_norm.
inline std::string transfer_report_csv(const std::vector<TransferReportRow>& rows) {
  std::ostringstream out;
  out << "state_id,agree,base_dir_index,transferred_dir_index,nn_correction_norm\n";
  for (const TransferReportRow& r : rows)
    out << r.state_id << "," << (r.agree ? 1 : 0) << "," << r.base_dir_index << ","
        << r.transferred_dir_index << "," << g17(r.nn_correction_norm) << "\n";
  return out.str();
}

// --- SVG ----------------------------------------------------------------------

/// Renders the reference and quantized trajectories as two overlaid polylines
/// with equal axis scaling.
inline std::string trajectory_svg(const Trajectory& reference, const Trajectory& quantized,
                                  int width = 640, int height = 640) {
  require(reference.n() == 2 && quantized.n() == 2, "trajectory_svg: only 2-D states render");
  require(!reference.states.empty() && !quantized.states.empty(),
          "trajectory_svg: empty trajectory");

  double min_x = reference.states[0][0], max_x = min_x;
  double min_y = reference.states[0][1], max_y = min_y;
  auto widen = [&](const Trajectory& t) {
    for (const Vector& s : t.states) {
      min_x = std::min(min_x, s[0]);
      max_x = std::max(max_x, s[0]);
      min_y = std::min(min_y, s[1]);
      max_y = std::max(max_y, s[1]);
    }
  };
  widen(reference);
  widen(quantized);

  const double margin = 40.0;
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-9});
  const double scale = (std::min(width, height) - 2.0 * margin) / span;
  const double cx = 0.5 * (min_x + max_x);
  const double cy = 0.5 * (min_y + max_y);

  auto px = [&](double x) { return 0.5 * width + (x - cx) * scale; };
  auto py = [&](double y) { return 0.5 * height - (y - cy) * scale; };

  auto polyline = [&](const Trajectory& t, const char* color) {
    std::ostringstream p;
    p << "  <polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t k = 0; k < t.states.size(); ++k) {
      if (k > 0) p << " ";
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f,%.3f", px(t.states[k][0]), py(t.states[k][1]));
      p << buf;
    }
    p << "\"/>\n";
    return p.str();
  };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << polyline(reference, "#1f4fd8");  // reference flow
  out << polyline(quantized, "#d82f2f");  // quantized emulation
  out << "</svg>\n";
  return out.str();
}

}  // namespace quantemu
