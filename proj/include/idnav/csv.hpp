#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "idnav/core.hpp"
#include "idnav/eval.hpp"
#include "idnav/pipeline.hpp"
#include "idnav/simulator.hpp"
#include "idnav/training.hpp"

namespace idnav {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace csv {

// shortest round-trippable decimal; stable across reruns of the same binary
inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

inline double parse_double(const std::string& cell, const std::string& path,
                           int line_no) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0') {
    throw ParseError(path + ":" + std::to_string(line_no) +
                     ": not a number: '" + cell + "'");
  }
  return v;
}

struct Reader {
  std::ifstream is;
  std::string path;
  int line_no = 0;

  explicit Reader(const std::string& p) : is(p), path(p) {
    if (!is) throw ParseError("cannot open " + p);
  }

  bool next_row(std::vector<double>& row, std::size_t expected_cols) {
    std::string line;
    while (std::getline(is, line)) {
      line_no += 1;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto cells = split(line, ',');
      if (cells.size() != expected_cols) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                         std::to_string(expected_cols) + " columns, got " +
                         std::to_string(cells.size()));
      }
      row.clear();
      for (const auto& c : cells) row.push_back(parse_double(c, path, line_no));
      return true;
    }
    return false;
  }

  void expect_header(const std::string& header) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError(path + ": empty file");
    line_no += 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != header) {
      throw ParseError(path + ":1: expected header '" + header + "', got '" +
                       line + "'");
    }
  }
};

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

}  // namespace detail

// --- IMU stream: t,fx,fy,fz,wx,wy,wz ---------------------------------------

inline constexpr const char* kImuHeader = "t,fx,fy,fz,wx,wy,wz";

inline void write_imu(const std::string& path, const std::vector<ImuSample>& samples) {
  auto os = detail::open_out(path);
  os << kImuHeader << "\n";
  for (const auto& s : samples) {
    os << fmt(s.t) << ',' << fmt(s.f.x()) << ',' << fmt(s.f.y()) << ','
       << fmt(s.f.z()) << ',' << fmt(s.w.x()) << ',' << fmt(s.w.y()) << ','
       << fmt(s.w.z()) << "\n";
  }
}

inline std::vector<ImuSample> read_imu(const std::string& path) {
  detail::Reader reader(path);
  reader.expect_header(kImuHeader);
  std::vector<ImuSample> out;
  std::vector<double> row;
  while (reader.next_row(row, 7)) {
    out.push_back({row[0], Vec3(row[1], row[2], row[3]), Vec3(row[4], row[5], row[6])});
  }
  return out;
}

// --- poses (ground truth / observations / estimates): t,px,py,pz,qw,qx,qy,qz

inline constexpr const char* kPoseHeader = "t,px,py,pz,qw,qx,qy,qz";

inline void write_poses(const std::string& path, const std::vector<TimedPose>& poses) {
  auto os = detail::open_out(path);
  os << kPoseHeader << "\n";
  for (const auto& p : poses) {
    os << fmt(p.t) << ',' << fmt(p.pose.p.x()) << ',' << fmt(p.pose.p.y()) << ','
       << fmt(p.pose.p.z()) << ',' << fmt(p.pose.q.w()) << ',' << fmt(p.pose.q.x())
       << ',' << fmt(p.pose.q.y()) << ',' << fmt(p.pose.q.z()) << "\n";
  }
}

inline void write_trajectory(const std::string& path, const Trajectory& traj) {
  std::vector<TimedPose> poses;
  poses.reserve(traj.size());
  for (const auto& pt : traj.points()) {
    TimedPose tp;
    tp.t = pt.t;
    tp.pose.p = pt.p;
    tp.pose.q = pt.q.value_or(Quat::Identity());
    poses.push_back(tp);
  }
  write_poses(path, poses);
}

inline std::vector<TimedPose> read_poses(const std::string& path) {
  detail::Reader reader(path);
  reader.expect_header(kPoseHeader);
  std::vector<TimedPose> out;
  std::vector<double> row;
  while (reader.next_row(row, 8)) {
    TimedPose p;
    p.t = row[0];
    p.pose.p = Vec3(row[1], row[2], row[3]);
    p.pose.q = Quat(row[4], row[5], row[6], row[7]).normalized();
    out.push_back(p);
  }
  return out;
}

inline Trajectory read_trajectory(const std::string& path) {
  Trajectory traj;
  for (const auto& p : read_poses(path)) {
    traj.append(p.t, p.pose.p, p.pose.q);
  }
  return traj;
}

// --- network predictions: t_start,t_end,dx,dy,dz,var_x,var_y,var_z ---------

inline constexpr const char* kPredictionHeader =
    "t_start,t_end,dx,dy,dz,var_x,var_y,var_z";

inline void write_predictions(const std::string& path,
                              const std::vector<DisplacementPrediction>& preds) {
  auto os = detail::open_out(path);
  os << kPredictionHeader << "\n";
  for (const auto& p : preds) {
    const Vec3 var = p.variance();
    os << fmt(p.window_start) << ',' << fmt(p.window_end) << ',' << fmt(p.d.x())
       << ',' << fmt(p.d.y()) << ',' << fmt(p.d.z()) << ',' << fmt(var.x()) << ','
       << fmt(var.y()) << ',' << fmt(var.z()) << "\n";
  }
}

inline std::vector<DisplacementPrediction> read_predictions(const std::string& path) {
  detail::Reader reader(path);
  reader.expect_header(kPredictionHeader);
  std::vector<DisplacementPrediction> out;
  std::vector<double> row;
  while (reader.next_row(row, 8)) {
    DisplacementPrediction p;
    p.window_start = row[0];
    p.window_end = row[1];
    p.d = Vec3(row[2], row[3], row[4]);
    for (int k = 0; k < 3; ++k) {
      if (!(row[5 + k] > 0.0)) {
        throw ParseError(path + ":" + std::to_string(reader.line_no) +
                         ": variance must be positive");
      }
      p.log_var[k] = std::log(row[5 + k]);
    }
    out.push_back(p);
  }
  return out;
}

// --- training metrics log ---------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "epoch,stage,lr,train_base,train_reg,train_nll,train_total,"
    "val_base,val_reg,val_nll,val_total";

inline void write_metrics_log(const std::string& path,
                              const std::vector<EpochRecord>& log) {
  auto os = detail::open_out(path);
  os << kMetricsHeader << "\n";
  for (const auto& r : log) {
    os << r.epoch << ',' << r.stage << ',' << fmt(r.lr) << ',' << fmt(r.train.base)
       << ',' << fmt(r.train.reg) << ',' << fmt(r.train.nll) << ','
       << fmt(r.train.total) << ',' << fmt(r.val.base) << ',' << fmt(r.val.reg)
       << ',' << fmt(r.val.nll) << ',' << fmt(r.val.total) << "\n";
  }
}

// --- solver log -------------------------------------------------------------

inline constexpr const char* kSolverLogHeader =
    "keyframe,t,iteration,cost,damping,gradient_norm,converged";

inline void write_solver_log(const std::string& path,
                             const std::vector<WindowSolveLog>& logs) {
  auto os = detail::open_out(path);
  os << kSolverLogHeader << "\n";
  for (const auto& w : logs) {
    for (const auto& it : w.report.log) {
      os << w.keyframe_id << ',' << fmt(w.t) << ',' << it.iteration << ','
         << fmt(it.cost) << ',' << fmt(it.lambda) << ',' << fmt(it.gradient_norm)
         << ',' << (w.report.converged ? 1 : 0) << "\n";
    }
  }
}

// --- metric report and plot data ---------------------------------------------

inline void write_report(const std::string& path, const MetricReport& report) {
  auto os = detail::open_out(path);
  os << "sample_count = " << report.sample_count << "\n";
  os << "association_tol = " << fmt(report.association_tol) << "\n";
  os << "mae_x = " << fmt(report.axis.mae.x()) << "\n";
  os << "mae_y = " << fmt(report.axis.mae.y()) << "\n";
  os << "mae_z = " << fmt(report.axis.mae.z()) << "\n";
  os << "medae_x = " << fmt(report.axis.medae.x()) << "\n";
  os << "medae_y = " << fmt(report.axis.medae.y()) << "\n";
  os << "medae_z = " << fmt(report.axis.medae.z()) << "\n";
  os << "overall_mae = " << fmt(report.overall.mae) << "\n";
  os << "overall_medae = " << fmt(report.overall.medae) << "\n";
  os << "ape_mean = " << fmt(report.ape.mean) << "\n";
  os << "ape_max = " << fmt(report.ape.max) << "\n";
}

inline void write_ape_series(const std::string& path,
                             const std::vector<PairedPosition>& pairs) {
  auto os = detail::open_out(path);
  os << "t,ape\n";
  for (const auto& p : pairs) {
    os << fmt(p.t_est) << ',' << fmt(p.error().norm()) << "\n";
  }
}

inline void write_axis_error_series(const std::string& path,
                                    const std::vector<PairedPosition>& pairs) {
  auto os = detail::open_out(path);
  os << "t,ex,ey,ez\n";
  for (const auto& p : pairs) {
    const Vec3 e = p.error();
    os << fmt(p.t_est) << ',' << fmt(e.x()) << ',' << fmt(e.y()) << ','
       << fmt(e.z()) << "\n";
  }
}

}  // namespace csv
}  // namespace idnav
