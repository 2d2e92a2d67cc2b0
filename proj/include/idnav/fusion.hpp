#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "idnav/core.hpp"
#include "idnav/preintegration.hpp"

namespace idnav {

// Local state increments are ordered [dp, dtheta, dv, dba, dbg]; orientation
// updates multiply on the right: q <- q * Exp(dtheta).
constexpr int kStateDim = 15;

inline NavState apply_increment(const NavState& x,
                                const Eigen::Matrix<double, kStateDim, 1>& dx) {
  NavState out = x;
  out.pose.p += dx.segment<3>(0);
  out.pose.q = (x.pose.q * quat_exp(dx.segment<3>(3))).normalized();
  out.v += dx.segment<3>(6);
  out.b_a += dx.segment<3>(9);
  out.b_g += dx.segment<3>(12);
  return out;
}

// ---------------------------------------------------------------------------
// Factors
// ---------------------------------------------------------------------------

struct NnVelocityFactor {
  int state_index = 0;
  Vec3 v_nn = Vec3::Zero();
  Vec3 info_diag = Vec3::Ones();  // 1/sigma^2 per axis

  void validate() const {
    if (!(info_diag.array() > 0.0).all() || !info_diag.allFinite()) {
      throw std::invalid_argument("NnVelocityFactor: information must be positive");
    }
  }
};

struct SmoothnessFactor {
  int state_i = 0;
  int state_j = 0;
  double dt = 1.0;
  Vec3 info_accel_diag = Vec3::Ones();

  void validate() const {
    if (!(dt > 0.0)) {
      throw std::invalid_argument("SmoothnessFactor: dt must be positive");
    }
    if (!(info_accel_diag.array() > 0.0).all()) {
      throw std::invalid_argument("SmoothnessFactor: information must be positive");
    }
  }
};

struct PoseObservationFactor {
  int state_index = 0;
  Pose observed;
  Vec3 pos_info_diag = Vec3::Ones();  // 1/sigma^2
  Vec3 rot_info_diag = Vec3::Ones();
};

struct PreintFactor {
  int state_i = 0;
  int state_j = 0;
  PreintegratedImu preint;
};

struct PriorFactor {
  int state_index = 0;
  NavState mean;
  Eigen::Matrix<double, kStateDim, 1> info_diag =
      Eigen::Matrix<double, kStateDim, 1>::Ones();
};

// Velocity constraint from a network displacement prediction over one
// keyframe interval: v_nn = d / dt, information = diag(1/sigma^2).
inline NnVelocityFactor nn_factor_from_prediction(const DisplacementPrediction& pred,
                                                  double dt_keyframe,
                                                  int state_index = 0) {
  if (!(dt_keyframe > 0.0)) {
    throw std::invalid_argument("nn_factor_from_prediction: dt must be positive");
  }
  const Vec3 var = pred.variance();
  if (!(var.array() > 0.0).all() || !var.allFinite()) {
    throw std::invalid_argument("nn_factor_from_prediction: variance must be positive");
  }
  NnVelocityFactor f;
  f.state_index = state_index;
  f.v_nn = pred.d / dt_keyframe;
  f.info_diag = var.cwiseInverse();
  return f;
}

// ---------------------------------------------------------------------------
// Residuals (whitened) and their Jacobians w.r.t. local state increments
// ---------------------------------------------------------------------------

using Mat9x15 = Eigen::Matrix<double, 9, kStateDim>;
using Mat6x15 = Eigen::Matrix<double, 6, kStateDim>;
using Mat3x15 = Eigen::Matrix<double, 3, kStateDim>;
using Mat15 = Eigen::Matrix<double, kStateDim, kStateDim>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec15 = Eigen::Matrix<double, kStateDim, 1>;

struct PreintResidual {
  Vec9 r = Vec9::Zero();
  Mat9x15 j_i = Mat9x15::Zero();
  Mat9x15 j_j = Mat9x15::Zero();
};

namespace detail {

// sqrt information: inverse of the Cholesky factor of the covariance
inline Eigen::Matrix<double, 9, 9> preint_sqrt_info(
    const Eigen::Matrix<double, 9, 9>& covariance) {
  Eigen::Matrix<double, 9, 9> cov = covariance;
  cov.diagonal().array() += 1e-12;
  const Eigen::LLT<Eigen::Matrix<double, 9, 9>> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericError("preintegration covariance is not positive definite");
  }
  return Eigen::Matrix<double, 9, 9>(llt.matrixL())
      .triangularView<Eigen::Lower>()
      .solve(Eigen::Matrix<double, 9, 9>::Identity());
}

}  // namespace detail

inline PreintResidual residual_preint(const NavState& state_i,
                                      const NavState& state_j,
                                      const PreintegratedImu& preint,
                                      const Vec3& gravity) {
  const double dt = preint.duration;
  const Mat3 r_i_t = state_i.pose.q.toRotationMatrix().transpose();
  const Mat3 r_j = state_j.pose.q.toRotationMatrix();

  const Vec3 u_p =
      state_j.pose.p - state_i.pose.p - state_i.v * dt - 0.5 * gravity * dt * dt;
  const Vec3 u_v = state_j.v - state_i.v - gravity * dt;

  Vec9 raw;
  raw.segment<3>(0) = r_i_t * u_p - preint.delta_p;
  raw.segment<3>(3) = r_i_t * u_v - preint.delta_v;
  const Quat q_err = preint.delta_q.conjugate() *
                     (state_i.pose.q.conjugate() * state_j.pose.q);
  const Vec3 r_theta = quat_log(q_err);
  raw.segment<3>(6) = r_theta;

  Mat9x15 j_i = Mat9x15::Zero();
  Mat9x15 j_j = Mat9x15::Zero();
  const Mat3 jr_inv = so3_right_jacobian_inv(r_theta);

  j_i.block<3, 3>(0, 0) = -r_i_t;
  j_i.block<3, 3>(0, 3) = skew(r_i_t * u_p);
  j_i.block<3, 3>(0, 6) = -r_i_t * dt;
  j_i.block<3, 3>(3, 3) = skew(r_i_t * u_v);
  j_i.block<3, 3>(3, 6) = -r_i_t;
  j_i.block<3, 3>(6, 3) = -jr_inv * r_j.transpose() * r_i_t.transpose();

  j_j.block<3, 3>(0, 0) = r_i_t;
  j_j.block<3, 3>(3, 6) = r_i_t;
  j_j.block<3, 3>(6, 3) = jr_inv;

  const Eigen::Matrix<double, 9, 9> w = detail::preint_sqrt_info(preint.covariance);
  PreintResidual out;
  out.r = w * raw;
  out.j_i = w * j_i;
  out.j_j = w * j_j;
  return out;
}

struct PoseObsResidual {
  Vec6 r = Vec6::Zero();
  Mat6x15 j = Mat6x15::Zero();
};

inline PoseObsResidual residual_pose_obs(const NavState& state,
                                         const Pose& observed,
                                         const Vec3& pos_info_diag,
                                         const Vec3& rot_info_diag) {
  const Vec3 w_p = pos_info_diag.cwiseSqrt();
  const Vec3 w_q = rot_info_diag.cwiseSqrt();
  const Vec3 r_theta = quat_log(observed.q.conjugate() * state.pose.q);

  PoseObsResidual out;
  out.r.segment<3>(0) = w_p.cwiseProduct(state.pose.p - observed.p);
  out.r.segment<3>(3) = w_q.cwiseProduct(r_theta);
  out.j.block<3, 3>(0, 0) = w_p.asDiagonal();
  out.j.block<3, 3>(3, 3) = w_q.asDiagonal() * so3_right_jacobian_inv(r_theta);
  return out;
}

struct VelocityResidual {
  Vec3 r = Vec3::Zero();
  Mat3x15 j = Mat3x15::Zero();
};

inline VelocityResidual residual_nn_velocity(const NavState& state,
                                             const NnVelocityFactor& factor) {
  factor.validate();
  const Vec3 w = factor.info_diag.cwiseSqrt();
  VelocityResidual out;
  out.r = w.cwiseProduct(state.v - factor.v_nn);
  out.j.block<3, 3>(0, 6) = w.asDiagonal();
  return out;
}

struct SmoothnessResidual {
  Vec3 r = Vec3::Zero();
  Mat3x15 j_i = Mat3x15::Zero();
  Mat3x15 j_j = Mat3x15::Zero();
};

inline SmoothnessResidual residual_smoothness(const NavState& state_i,
                                              const NavState& state_j,
                                              const SmoothnessFactor& factor) {
  factor.validate();
  const Vec3 w = factor.info_accel_diag.cwiseSqrt();
  SmoothnessResidual out;
  out.r = w.cwiseProduct((state_j.v - state_i.v) / factor.dt);
  out.j_j.block<3, 3>(0, 6) = Mat3((w / factor.dt).asDiagonal());
  out.j_i.block<3, 3>(0, 6) = Mat3((-w / factor.dt).asDiagonal());
  return out;
}

struct PriorResidual {
  Vec15 r = Vec15::Zero();
  Mat15 j = Mat15::Zero();
};

inline PriorResidual residual_prior(const NavState& state, const PriorFactor& prior) {
  const Vec15 w = prior.info_diag.cwiseSqrt();
  const Vec3 r_theta = quat_log(prior.mean.pose.q.conjugate() * state.pose.q);
  Vec15 raw;
  raw.segment<3>(0) = state.pose.p - prior.mean.pose.p;
  raw.segment<3>(3) = r_theta;
  raw.segment<3>(6) = state.v - prior.mean.v;
  raw.segment<3>(9) = state.b_a - prior.mean.b_a;
  raw.segment<3>(12) = state.b_g - prior.mean.b_g;

  PriorResidual out;
  out.r = w.cwiseProduct(raw);
  out.j = Mat15(w.asDiagonal());
  out.j.block<3, 3>(3, 3) = w.segment<3>(3).asDiagonal() *
                            so3_right_jacobian_inv(r_theta);
  return out;
}

// ---------------------------------------------------------------------------
// Sliding-window problem
// ---------------------------------------------------------------------------

struct FactorGraphProblem {
  std::vector<NavState> states;
  std::vector<std::int64_t> keyframe_ids;
  int max_window = 10;
  Vec3 gravity = gravity_world();

  std::vector<PreintFactor> preint_factors;
  std::vector<PoseObservationFactor> pose_factors;
  std::vector<NnVelocityFactor> nn_factors;
  std::vector<SmoothnessFactor> smoothness_factors;
  std::vector<PriorFactor> priors;

  int size() const { return static_cast<int>(states.size()); }

  void check_index(int i) const {
    if (i < 0 || i >= size()) {
      throw std::invalid_argument("FactorGraphProblem: factor references state " +
                                  std::to_string(i) + " outside the window");
    }
  }

  void add_state(const NavState& x, std::int64_t id) {
    if (!states.empty() && x.t <= states.back().t) {
      throw std::invalid_argument("FactorGraphProblem: keyframes must advance in time");
    }
    states.push_back(x);
    keyframe_ids.push_back(id);
  }

  void add_preint(const PreintFactor& f) {
    check_index(f.state_i);
    check_index(f.state_j);
    preint_factors.push_back(f);
  }
  void add_pose_obs(const PoseObservationFactor& f) {
    check_index(f.state_index);
    pose_factors.push_back(f);
  }
  void add_nn_velocity(const NnVelocityFactor& f) {
    f.validate();
    check_index(f.state_index);
    nn_factors.push_back(f);
  }
  void add_smoothness(const SmoothnessFactor& f) {
    f.validate();
    check_index(f.state_i);
    check_index(f.state_j);
    smoothness_factors.push_back(f);
  }
  void add_prior(const PriorFactor& f) {
    check_index(f.state_index);
    priors.push_back(f);
  }

  int residual_dim() const {
    return 9 * static_cast<int>(preint_factors.size()) +
           6 * static_cast<int>(pose_factors.size()) +
           3 * static_cast<int>(nn_factors.size()) +
           3 * static_cast<int>(smoothness_factors.size()) +
           kStateDim * static_cast<int>(priors.size());
  }
};

// Removed oldest state, reported so callers can export its final estimate.
struct SlideResult {
  bool removed = false;
  NavState dropped_state;
  std::int64_t dropped_id = 0;
};

// Appends a keyframe; when the window exceeds capacity the oldest state is
// dropped, factors touching it are removed, and a Gaussian prior at the
// dropped neighbor's current estimate is attached to the new oldest state.
inline SlideResult slide_window(FactorGraphProblem& problem, const NavState& keyframe,
                                std::int64_t id, const Vec15& prior_info_diag) {
  problem.add_state(keyframe, id);
  SlideResult result;
  if (problem.size() <= problem.max_window) return result;

  result.removed = true;
  result.dropped_state = problem.states.front();
  result.dropped_id = problem.keyframe_ids.front();
  problem.states.erase(problem.states.begin());
  problem.keyframe_ids.erase(problem.keyframe_ids.begin());

  const auto shift = [](int idx) { return idx - 1; };
  std::vector<PreintFactor> preint;
  for (auto& f : problem.preint_factors) {
    if (f.state_i == 0 || f.state_j == 0) continue;
    f.state_i = shift(f.state_i);
    f.state_j = shift(f.state_j);
    preint.push_back(std::move(f));
  }
  problem.preint_factors = std::move(preint);

  std::vector<PoseObservationFactor> pose;
  for (auto& f : problem.pose_factors) {
    if (f.state_index == 0) continue;
    f.state_index = shift(f.state_index);
    pose.push_back(std::move(f));
  }
  problem.pose_factors = std::move(pose);

  std::vector<NnVelocityFactor> nn;
  for (auto& f : problem.nn_factors) {
    if (f.state_index == 0) continue;
    f.state_index = shift(f.state_index);
    nn.push_back(std::move(f));
  }
  problem.nn_factors = std::move(nn);

  std::vector<SmoothnessFactor> smooth;
  for (auto& f : problem.smoothness_factors) {
    if (f.state_i == 0 || f.state_j == 0) continue;
    f.state_i = shift(f.state_i);
    f.state_j = shift(f.state_j);
    smooth.push_back(std::move(f));
  }
  problem.smoothness_factors = std::move(smooth);

  // drop-and-prior in place of full marginalization
  problem.priors.clear();
  PriorFactor prior;
  prior.state_index = 0;
  prior.mean = problem.states.front();
  prior.info_diag = prior_info_diag;
  problem.priors.push_back(prior);
  return result;
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt solver
// ---------------------------------------------------------------------------

struct SolverConfig {
  int max_iterations = 50;
  double gradient_tol = 1e-8;
  double cost_rel_tol = 1e-10;
  double initial_lambda = 1e-6;
  double lambda_max = 1e12;
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double lambda = 0.0;
  double gradient_norm = 0.0;
};

struct SolveReport {
  bool converged = false;
  std::string stop_reason;
  double final_cost = 0.0;
  int iterations = 0;
  std::vector<IterationRecord> log;
};

namespace detail {

struct Linearization {
  Eigen::MatrixXd jacobian;
  Eigen::VectorXd residual;
};

inline Linearization linearize(const FactorGraphProblem& p) {
  Linearization lin;
  const int n = p.size() * kStateDim;
  lin.jacobian = Eigen::MatrixXd::Zero(p.residual_dim(), n);
  lin.residual = Eigen::VectorXd::Zero(p.residual_dim());

  int row = 0;
  for (const auto& f : p.preint_factors) {
    const auto res = residual_preint(p.states[f.state_i], p.states[f.state_j],
                                     f.preint, p.gravity);
    lin.residual.segment<9>(row) = res.r;
    lin.jacobian.block<9, kStateDim>(row, f.state_i * kStateDim) = res.j_i;
    lin.jacobian.block<9, kStateDim>(row, f.state_j * kStateDim) = res.j_j;
    row += 9;
  }
  for (const auto& f : p.pose_factors) {
    const auto res = residual_pose_obs(p.states[f.state_index], f.observed,
                                       f.pos_info_diag, f.rot_info_diag);
    lin.residual.segment<6>(row) = res.r;
    lin.jacobian.block<6, kStateDim>(row, f.state_index * kStateDim) = res.j;
    row += 6;
  }
  for (const auto& f : p.nn_factors) {
    const auto res = residual_nn_velocity(p.states[f.state_index], f);
    lin.residual.segment<3>(row) = res.r;
    lin.jacobian.block<3, kStateDim>(row, f.state_index * kStateDim) = res.j;
    row += 3;
  }
  for (const auto& f : p.smoothness_factors) {
    const auto res = residual_smoothness(p.states[f.state_i], p.states[f.state_j], f);
    lin.residual.segment<3>(row) = res.r;
    lin.jacobian.block<3, kStateDim>(row, f.state_i * kStateDim) = res.j_i;
    lin.jacobian.block<3, kStateDim>(row, f.state_j * kStateDim) = res.j_j;
    row += 3;
  }
  for (const auto& f : p.priors) {
    const auto res = residual_prior(p.states[f.state_index], f);
    lin.residual.segment<kStateDim>(row) = res.r;
    lin.jacobian.block<kStateDim, kStateDim>(row, f.state_index * kStateDim) = res.j;
    row += kStateDim;
  }
  return lin;
}

inline std::vector<NavState> apply_step(const std::vector<NavState>& states,
                                        const Eigen::VectorXd& dx) {
  std::vector<NavState> out = states;
  for (std::size_t i = 0; i < states.size(); ++i) {
    out[i] = apply_increment(states[i], dx.segment<kStateDim>(
                                            static_cast<int>(i) * kStateDim));
  }
  return out;
}

}  // namespace detail

// Total whitened cost sum ||r||^2 at the current states.
inline double evaluate_cost(const FactorGraphProblem& p) {
  return detail::linearize(p).residual.squaredNorm();
}

// Dense Levenberg-Marquardt over the window. Cost is non-increasing across
// accepted steps; on persistent failure the best iterate is kept.
inline SolveReport solve(FactorGraphProblem& problem,
                         const SolverConfig& cfg = {}) {
  SolveReport report;
  if (problem.size() == 0) {
    report.converged = true;
    report.stop_reason = "empty problem";
    return report;
  }
  if (problem.residual_dim() == 0) {
    report.converged = true;
    report.stop_reason = "no factors";
    return report;
  }

  double lambda = cfg.initial_lambda;
  auto lin = detail::linearize(problem);
  double cost = lin.residual.squaredNorm();

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const Eigen::MatrixXd& jac = lin.jacobian;
    const Eigen::VectorXd grad = jac.transpose() * lin.residual;
    const double grad_norm = grad.lpNorm<Eigen::Infinity>();
    report.log.push_back({iter, cost, lambda, grad_norm});

    if (grad_norm < cfg.gradient_tol) {
      report.converged = true;
      report.stop_reason = "gradient norm below tolerance";
      break;
    }

    const Eigen::MatrixXd h = jac.transpose() * jac;
    Eigen::VectorXd diag = h.diagonal().cwiseMax(1e-12);

    bool accepted = false;
    while (lambda <= cfg.lambda_max) {
      Eigen::MatrixXd damped = h;
      damped.diagonal() += lambda * diag;
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      if (ldlt.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd dx = ldlt.solve(-grad);
      if (!dx.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const auto candidate = detail::apply_step(problem.states, dx);
      FactorGraphProblem trial = problem;
      trial.states = candidate;
      const auto trial_lin = detail::linearize(trial);
      const double trial_cost = trial_lin.residual.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost <= cost) {
        const double rel_change = (cost - trial_cost) / std::max(cost, 1e-300);
        problem.states = candidate;
        lin = trial_lin;
        cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        report.iterations = iter + 1;
        if (rel_change < cfg.cost_rel_tol) {
          report.converged = true;
          report.stop_reason = "relative cost change below tolerance";
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      report.stop_reason = "damping exhausted without cost reduction";
      break;
    }
    if (report.converged) break;
  }

  if (report.stop_reason.empty()) {
    report.stop_reason = "max iterations reached";
  }
  report.final_cost = cost;
  return report;
}

}  // namespace idnav
