#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "idnav/core.hpp"

namespace idnav {

struct PairedPosition {
  double t_est = 0.0;
  Vec3 est = Vec3::Zero();
  Vec3 gt = Vec3::Zero();

  Vec3 error() const { return est - gt; }
};

struct Association {
  std::vector<PairedPosition> pairs;
  int dropped_est = 0;
  int dropped_gt = 0;
};

enum class GtLookup { kNearest, kInterpolate };

// Nearest-timestamp pairing within tol; in interpolate mode the ground truth
// position is linearly interpolated at the estimate's timestamp instead.
inline Association associate(const Trajectory& est, const Trajectory& gt,
                             double tol, GtLookup lookup = GtLookup::kNearest) {
  if (est.empty() || gt.empty()) {
    throw std::invalid_argument("associate: empty trajectory");
  }
  Association out;
  std::vector<bool> gt_used(gt.size(), false);
  for (const auto& pt : est.points()) {
    const std::size_t gi = gt.nearest_index(pt.t);
    const double dt = std::abs(gt.points()[gi].t - pt.t);
    if (dt > tol) {
      out.dropped_est += 1;
      continue;
    }
    PairedPosition pair;
    pair.t_est = pt.t;
    pair.est = pt.p;
    if (lookup == GtLookup::kInterpolate && gt.covers(pt.t)) {
      pair.gt = gt.position_at(pt.t);
    } else {
      pair.gt = gt.points()[gi].p;
    }
    gt_used[gi] = true;
    out.pairs.push_back(pair);
  }
  for (const bool used : gt_used) {
    if (!used) out.dropped_gt += 1;
  }
  if (out.pairs.empty()) {
    throw std::runtime_error("associate: no pairs within tolerance " +
                             std::to_string(tol));
  }
  return out;
}

namespace detail {

inline double median(std::vector<double> values) {
  if (values.empty()) {
    throw std::invalid_argument("median: empty input");
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

struct AxisErrors {
  Vec3 mae = Vec3::Zero();
  Vec3 medae = Vec3::Zero();
};

inline AxisErrors per_axis_errors(const std::vector<PairedPosition>& pairs) {
  if (pairs.empty()) {
    throw std::invalid_argument("per_axis_errors: needs at least one pair");
  }
  AxisErrors out;
  for (int k = 0; k < 3; ++k) {
    std::vector<double> abs_errors;
    abs_errors.reserve(pairs.size());
    double sum = 0.0;
    for (const auto& p : pairs) {
      const double e = std::abs(p.error()[k]);
      abs_errors.push_back(e);
      sum += e;
    }
    out.mae[k] = sum / static_cast<double>(pairs.size());
    out.medae[k] = detail::median(std::move(abs_errors));
  }
  return out;
}

struct OverallErrors {
  double mae = 0.0;
  double medae = 0.0;
};

inline OverallErrors overall_errors(const std::vector<PairedPosition>& pairs) {
  if (pairs.empty()) {
    throw std::invalid_argument("overall_errors: needs at least one pair");
  }
  std::vector<double> euclid;
  euclid.reserve(pairs.size());
  double sum = 0.0;
  for (const auto& p : pairs) {
    const double e = p.error().norm();
    euclid.push_back(e);
    sum += e;
  }
  OverallErrors out;
  out.mae = sum / static_cast<double>(pairs.size());
  out.medae = detail::median(std::move(euclid));
  return out;
}

struct ApeStats {
  double mean = 0.0;
  double max = 0.0;
};

struct MetricReport {
  AxisErrors axis;
  OverallErrors overall;
  ApeStats ape;
  int sample_count = 0;
  double association_tol = 0.0;
};

// Absolute pose error over associated pairs; no additional trajectory
// alignment is applied (the pipeline's frame alignment already happened).
inline ApeStats ape(const Trajectory& est, const Trajectory& gt, double tol,
                    GtLookup lookup = GtLookup::kNearest) {
  const auto assoc = associate(est, gt, tol, lookup);
  ApeStats out;
  for (const auto& p : assoc.pairs) {
    const double e = p.error().norm();
    out.mean += e;
    out.max = std::max(out.max, e);
  }
  out.mean /= static_cast<double>(assoc.pairs.size());
  return out;
}

inline MetricReport evaluate_trajectories(const Trajectory& est, const Trajectory& gt,
                                          double tol,
                                          GtLookup lookup = GtLookup::kNearest) {
  const auto assoc = associate(est, gt, tol, lookup);
  MetricReport report;
  report.axis = per_axis_errors(assoc.pairs);
  report.overall = overall_errors(assoc.pairs);
  for (const auto& p : assoc.pairs) {
    const double e = p.error().norm();
    report.ape.mean += e;
    report.ape.max = std::max(report.ape.max, e);
  }
  report.ape.mean /= static_cast<double>(assoc.pairs.size());
  report.sample_count = static_cast<int>(assoc.pairs.size());
  report.association_tol = tol;
  return report;
}

struct Improvement {
  std::optional<double> mean_percent;  // (baseline - ours)/baseline * 100
  std::optional<double> max_percent;
};

inline Improvement compare_runs(const ApeStats& baseline, const ApeStats& ours) {
  Improvement out;
  if (baseline.mean != 0.0) {
    out.mean_percent = (baseline.mean - ours.mean) / baseline.mean * 100.0;
  }
  if (baseline.max != 0.0) {
    out.max_percent = (baseline.max - ours.max) / baseline.max * 100.0;
  }
  return out;
}

}  // namespace idnav
