#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>

#include <deque>
#include <stdexcept>
#include <vector>

#include "idnav/core.hpp"

namespace idnav {

struct AlignmentEstimate {
  Mat3 r_w_to_slam = Mat3::Identity();
  int sample_count = 0;
  double residual_angle = 0.0;  // mean geodesic misfit, radians
  bool degenerate = false;
};

struct RotationPair {
  Mat3 r_gt_to_imu = Mat3::Identity();
  Mat3 r_imu_to_slam = Mat3::Identity();
};

// Closed-form rotation alignment: accumulate M = sum R_imu_to_slam * R_gt_to_imu
// (the SLAM-from-GT composition), then project onto SO(3) via SVD with the
// determinant sign fix.
inline AlignmentEstimate procrustes_align(const std::vector<RotationPair>& pairs) {
  if (pairs.size() < 3) {
    throw std::invalid_argument("procrustes_align: needs at least three pairs");
  }
  Mat3 m = Mat3::Zero();
  for (const auto& p : pairs) {
    m += p.r_imu_to_slam * p.r_gt_to_imu;
  }

  const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Vec3 s_fix(1.0, 1.0, (u * v.transpose()).determinant());
  AlignmentEstimate out;
  out.r_w_to_slam = u * s_fix.asDiagonal() * v.transpose();
  out.sample_count = static_cast<int>(pairs.size());
  out.degenerate = svd.singularValues()(1) < 1e-9 * svd.singularValues()(0);

  double misfit = 0.0;
  for (const auto& p : pairs) {
    misfit += rotation_angle_between(out.r_w_to_slam, p.r_imu_to_slam * p.r_gt_to_imu);
  }
  out.residual_angle = misfit / static_cast<double>(pairs.size());
  return out;
}

// Converts network displacements to absolute positions. The first `lag`
// samples anchor on SLAM positions (bootstrap); afterwards each new position
// anchors on the network position from `lag` steps earlier.
class AnchorChain {
 public:
  explicit AnchorChain(int lag = 10) : lag_(lag) {
    if (lag_ < 1) throw std::invalid_argument("AnchorChain: lag must be >= 1");
  }

  enum class Mode { kBootstrap, kPureNn };

  Mode mode() const {
    return history_.size() < static_cast<std::size_t>(lag_) ? Mode::kBootstrap
                                                            : Mode::kPureNn;
  }
  int size() const { return static_cast<int>(history_.size()); }
  int lag() const { return lag_; }

  // p_nn = p_slam(t - lag) + R * dp_nn
  Vec3 anchor_bootstrap(double t, const Vec3& p_slam_lag, const Vec3& dp_nn,
                        const AlignmentEstimate& align) {
    if (mode() != Mode::kBootstrap) {
      throw std::logic_error(
          "AnchorChain: bootstrap called after the chain is full; use anchor_pure_nn");
    }
    if (!p_slam_lag.allFinite()) {
      throw std::invalid_argument("AnchorChain: bootstrap requires a SLAM anchor");
    }
    const Vec3 p = p_slam_lag + align.r_w_to_slam * dp_nn;
    push(t, p);
    return p;
  }

  // p_nn(i) = p_nn(i - lag) + R * dp_nn
  Vec3 anchor_pure_nn(double t, const Vec3& dp_nn, const AlignmentEstimate& align) {
    if (mode() != Mode::kPureNn) {
      throw std::logic_error(
          "AnchorChain: insufficient history; bootstrap with SLAM anchors first");
    }
    const Vec3 p = history_.front().second + align.r_w_to_slam * dp_nn;
    push(t, p);
    return p;
  }

 private:
  void push(double t, const Vec3& p) {
    if (!history_.empty() && t <= history_.back().first) {
      throw std::invalid_argument("AnchorChain: timestamps must increase");
    }
    history_.emplace_back(t, p);
    if (history_.size() > static_cast<std::size_t>(lag_)) {
      history_.pop_front();
    }
  }

  int lag_;
  std::deque<std::pair<double, Vec3>> history_;  // last `lag` positions
};

}  // namespace idnav
