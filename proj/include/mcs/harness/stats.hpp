#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcs/guidance.hpp"
#include "mcs/haar.hpp"
#include "mcs/harness/image_io.hpp"

namespace mcs::harness {

/// Per-snapshot convergence statistics of a trajectory.
struct StepStats {
  int t = 0;
  Measurement measurement = Measurement::none;
  /// Pixel variance of x̂₀(t) − x̂₀(final): spread of the current estimate
  /// around the value the chain converges to.
  double variance = 0.0;
  /// Pixel variance of x̂₀ itself.
  double pixel_variance = 0.0;
  /// Pixel variance of the change since the previous snapshot (absent on the first).
  std::optional<double> update_variance;
  /// ‖VHD(x̂₀)‖², single-level Haar.
  double detail_energy = 0.0;
  double loss = 0.0;
};

inline std::vector<StepStats> trajectory_stats(const Trajectory& traj) {
  const ImageGrid* final_snapshot = nullptr;
  for (const auto& s : traj.steps) {
    if (s.x0_hat) final_snapshot = &*s.x0_hat;
  }
  if (final_snapshot == nullptr) throw std::invalid_argument("trajectory_stats: trajectory has no x0 snapshots");
  const bool even = final_snapshot->height() % 2 == 0 && final_snapshot->width() % 2 == 0;

  std::vector<StepStats> out;
  const ImageGrid* prev = nullptr;
  for (const auto& s : traj.steps) {
    if (!s.x0_hat) continue;
    StepStats st;
    st.t = s.t;
    st.measurement = s.measurement;
    st.loss = s.loss;
    st.variance = pixel_variance(*s.x0_hat - *final_snapshot);
    st.pixel_variance = pixel_variance(*s.x0_hat);
    if (prev) st.update_variance = pixel_variance(*s.x0_hat - *prev);
    st.detail_energy = even ? detail_energy(*s.x0_hat) : 0.0;
    prev = &*s.x0_hat;
    out.push_back(st);
  }
  return out;
}

inline std::vector<std::string> stats_header() {
  return {"t", "measurement", "variance", "pixel_variance", "update_variance", "detail_energy", "loss"};
}

inline std::vector<std::vector<std::string>> stats_rows(const std::vector<StepStats>& stats) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : stats) {
    rows.push_back({std::to_string(s.t), to_string(s.measurement), io::format_double(s.variance),
                    io::format_double(s.pixel_variance), s.update_variance ? io::format_double(*s.update_variance) : "",
                    io::format_double(s.detail_energy), io::format_double(s.loss)});
  }
  return rows;
}

// Trajectory CSV:
//   # height=H width=W
//   t,measurement,loss,grad_norm,x0_hat
//   150,forward,0.25,1.5,0.1 0.2 ...     (x0_hat empty when no snapshot)

inline std::string trajectory_to_csv(const Trajectory& traj) {
  std::ostringstream out;
  out << "# height=" << traj.shape.height << " width=" << traj.shape.width << "\n";
  out << "t,measurement,loss,grad_norm,x0_hat\n";
  for (const auto& s : traj.steps) {
    out << s.t << ',' << to_string(s.measurement) << ',' << io::format_double(s.loss) << ','
        << io::format_double(s.grad_norm) << ',';
    if (s.x0_hat) {
      for (std::size_t i = 0; i < s.x0_hat->size(); ++i) out << (i ? " " : "") << io::format_double((*s.x0_hat)[i]);
    }
    out << '\n';
  }
  return out.str();
}

inline Trajectory trajectory_from_csv(std::istream& in, const std::string& origin = "trajectory") {
  auto fail = [&](const std::string& why) { return io::IoError(origin + ": " + why); };
  std::string line;
  Trajectory traj;
  if (!std::getline(in, line) || std::sscanf(line.c_str(), "# height=%d width=%d", &traj.shape.height, &traj.shape.width) != 2)
    throw fail("missing '# height=H width=W' header");
  if (!std::getline(in, line) || line != "t,measurement,loss,grad_norm,x0_hat") throw fail("missing column header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() == 4) cols.emplace_back();
    if (cols.size() != 5) throw fail("bad row '" + line.substr(0, 40) + "'");
    StepRecord rec;
    try {
      rec.t = std::stoi(cols[0]);
      rec.measurement = measurement_from_string(cols[1]);
      rec.loss = std::stod(cols[2]);
      rec.grad_norm = std::stod(cols[3]);
    } catch (const std::logic_error&) {
      throw fail("bad row '" + line.substr(0, 40) + "'");
    }
    if (!cols[4].empty()) {
      std::vector<double> vals;
      std::stringstream vs(cols[4]);
      std::string tok;
      while (vs >> tok) vals.push_back(std::strtod(tok.c_str(), nullptr));
      if (vals.size() != traj.shape.size()) throw fail("snapshot at t=" + cols[0] + " has the wrong size");
      rec.x0_hat = ImageGrid(traj.shape.height, traj.shape.width, std::move(vals));
    }
    if (!traj.steps.empty() && rec.t >= traj.steps.back().t) throw fail("timesteps must be strictly decreasing");
    traj.steps.push_back(std::move(rec));
  }
  return traj;
}

inline Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw io::IoError("cannot open '" + path.string() + "'");
  return trajectory_from_csv(in, path.string());
}

}  // namespace mcs::harness
