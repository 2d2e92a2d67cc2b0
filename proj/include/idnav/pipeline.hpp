#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "idnav/core.hpp"
#include "idnav/fusion.hpp"
#include "idnav/preintegration.hpp"
#include "idnav/simulator.hpp"

namespace idnav {

struct FusionConfig {
  double keyframe_interval = 1.0;  // one NN window per keyframe gap
  int window_size = 10;
  Vec3 gravity = gravity_world();

  // pose-observation noise assumed by the estimator
  double obs_pos_sigma = 0.02;
  double obs_rot_sigma = 0.005;
  double obs_time_tol = 2e-3;
  double nn_time_tol = 0.05;

  ImuNoise imu_noise;
  Vec3 omega_accel_diag = Vec3::Ones();
  bool use_nn = true;
  bool use_smoothness = true;

  // prior standard deviations for the first keyframe
  double init_pos_sigma = 0.02;
  double init_rot_sigma = 0.01;
  double init_vel_sigma = 0.05;
  double init_bias_a_sigma = 0.05;
  double init_bias_g_sigma = 0.01;

  // prior standard deviations attached on window slides
  double slide_pos_sigma = 0.05;
  double slide_rot_sigma = 0.02;
  double slide_vel_sigma = 0.2;
  double slide_bias_a_sigma = 0.05;
  double slide_bias_g_sigma = 0.01;

  SolverConfig solver;

  Vec15 init_prior_info() const {
    return make_info(init_pos_sigma, init_rot_sigma, init_vel_sigma,
                     init_bias_a_sigma, init_bias_g_sigma);
  }
  Vec15 slide_prior_info() const {
    return make_info(slide_pos_sigma, slide_rot_sigma, slide_vel_sigma,
                     slide_bias_a_sigma, slide_bias_g_sigma);
  }

 private:
  static Vec15 make_info(double sp, double sr, double sv, double sba, double sbg) {
    Vec15 info;
    info.segment<3>(0).setConstant(1.0 / (sp * sp));
    info.segment<3>(3).setConstant(1.0 / (sr * sr));
    info.segment<3>(6).setConstant(1.0 / (sv * sv));
    info.segment<3>(9).setConstant(1.0 / (sba * sba));
    info.segment<3>(12).setConstant(1.0 / (sbg * sbg));
    return info;
  }
};

struct WindowSolveLog {
  std::int64_t keyframe_id = 0;
  double t = 0.0;
  SolveReport report;
};

struct FusionResult {
  Trajectory trajectory;
  std::vector<WindowSolveLog> solve_logs;
  int pose_factor_count = 0;
  int nn_factor_count = 0;
  int nonconverged_windows = 0;
};

namespace detail {

inline std::optional<TimedPose> find_observation(const std::vector<TimedPose>& obs,
                                                 double t, double tol) {
  const auto it = std::lower_bound(
      obs.begin(), obs.end(), t,
      [](const TimedPose& o, double time) { return o.t < time; });
  double best = tol;
  std::optional<TimedPose> found;
  if (it != obs.end() && std::abs(it->t - t) <= best) {
    best = std::abs(it->t - t);
    found = *it;
  }
  if (it != obs.begin() && std::abs((it - 1)->t - t) < best) {
    found = *(it - 1);
  }
  return found;
}

inline std::optional<DisplacementPrediction> find_prediction(
    const std::vector<DisplacementPrediction>& preds, double t_start,
    double t_end, double tol) {
  for (const auto& p : preds) {
    if (std::abs(p.window_start - t_start) <= tol &&
        std::abs(p.window_end - t_end) <= tol) {
      return p;
    }
  }
  return std::nullopt;
}

// Propagate a state through gravity-free preintegration deltas.
inline NavState propagate(const NavState& x, const PreintegratedImu& preint,
                          const Vec3& gravity, double t_new) {
  const double dt = preint.duration;
  const Mat3 r_i = x.pose.q.toRotationMatrix();
  NavState out = x;
  out.t = t_new;
  out.pose.p = x.pose.p + x.v * dt + 0.5 * gravity * dt * dt + r_i * preint.delta_p;
  out.v = x.v + gravity * dt + r_i * preint.delta_v;
  out.pose.q = (x.pose.q * preint.delta_q).normalized();
  return out;
}

}  // namespace detail

// Sliding-window fusion over a full dataset. Keyframes are created at a
// fixed cadence starting from the first pose observation; each keyframe gap
// carries one preintegration factor, an optional pose observation, an
// optional network velocity factor, and a smoothness factor.
inline FusionResult run_fusion(const std::vector<ImuSample>& imu,
                               const std::vector<TimedPose>& observations,
                               const std::vector<DisplacementPrediction>& predictions,
                               const FusionConfig& cfg) {
  if (observations.empty()) {
    throw std::invalid_argument("run_fusion: needs at least one pose observation");
  }
  if (imu.size() < 2) {
    throw std::invalid_argument("run_fusion: needs IMU data");
  }

  FusionResult result;
  FactorGraphProblem problem;
  problem.max_window = cfg.window_size;
  problem.gravity = cfg.gravity;

  const Vec3 obs_pos_info = Vec3::Constant(1.0 / (cfg.obs_pos_sigma * cfg.obs_pos_sigma));
  const Vec3 obs_rot_info = Vec3::Constant(1.0 / (cfg.obs_rot_sigma * cfg.obs_rot_sigma));

  const double t0 = observations.front().t;
  NavState init;
  init.t = t0;
  init.pose = observations.front().pose;

  problem.add_state(init, 0);
  PriorFactor init_prior;
  init_prior.state_index = 0;
  init_prior.mean = init;
  init_prior.info_diag = cfg.init_prior_info();
  problem.add_prior(init_prior);

  PoseObservationFactor first_obs;
  first_obs.state_index = 0;
  first_obs.observed = observations.front().pose;
  first_obs.pos_info_diag = obs_pos_info;
  first_obs.rot_info_diag = obs_rot_info;
  problem.add_pose_obs(first_obs);
  result.pose_factor_count += 1;

  // sample index of the first sample at or after time t
  const auto sample_at = [&imu](double t) {
    return static_cast<std::size_t>(
        std::lower_bound(imu.begin(), imu.end(), t - 1e-9,
                         [](const ImuSample& s, double time) { return s.t < time; }) -
        imu.begin());
  };

  std::int64_t next_id = 1;
  for (double t_prev = t0, t_k = t0 + cfg.keyframe_interval;
       t_k <= imu.back().t + 1e-9;
       t_prev = t_k, t_k += cfg.keyframe_interval) {
    const std::size_t lo = sample_at(t_prev);
    std::size_t hi = sample_at(t_k);
    if (hi < imu.size() && imu[hi].t <= t_k + 1e-9) hi += 1;  // include endpoint
    if (hi - lo < 2) continue;

    const NavState& prev = problem.states.back();
    const PreintegratedImu preint =
        preintegrate(std::span<const ImuSample>(imu.data() + lo, hi - lo),
                     prev.b_a, prev.b_g, Vec3::Zero(), cfg.imu_noise);

    const NavState guess = detail::propagate(prev, preint, cfg.gravity, t_k);
    const auto slid = slide_window(problem, guess, next_id, cfg.slide_prior_info());
    if (slid.removed) {
      result.trajectory.append(slid.dropped_state.t, slid.dropped_state.pose.p,
                               slid.dropped_state.pose.q);
    }

    const int j = problem.size() - 1;
    const int i = j - 1;
    PreintFactor pf;
    pf.state_i = i;
    pf.state_j = j;
    pf.preint = preint;
    problem.add_preint(pf);

    if (const auto obs = detail::find_observation(observations, t_k, cfg.obs_time_tol)) {
      PoseObservationFactor f;
      f.state_index = j;
      f.observed = obs->pose;
      f.pos_info_diag = obs_pos_info;
      f.rot_info_diag = obs_rot_info;
      problem.add_pose_obs(f);
      result.pose_factor_count += 1;
    }

    if (cfg.use_smoothness) {
      SmoothnessFactor sf;
      sf.state_i = i;
      sf.state_j = j;
      sf.dt = preint.duration;
      sf.info_accel_diag = cfg.omega_accel_diag;
      problem.add_smoothness(sf);
    }

    if (cfg.use_nn) {
      if (const auto pred = detail::find_prediction(predictions, t_prev, t_k,
                                                    cfg.nn_time_tol)) {
        problem.add_nn_velocity(
            nn_factor_from_prediction(*pred, pred->window_end - pred->window_start, i));
        result.nn_factor_count += 1;
      }
    }

    WindowSolveLog log;
    log.keyframe_id = next_id;
    log.t = t_k;
    log.report = solve(problem, cfg.solver);
    if (!log.report.converged) result.nonconverged_windows += 1;
    result.solve_logs.push_back(std::move(log));
    next_id += 1;
  }

  for (const auto& s : problem.states) {
    result.trajectory.append(s.t, s.pose.p, s.pose.q);
  }
  return result;
}

}  // namespace idnav
