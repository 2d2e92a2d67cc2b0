#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <stdexcept>
#include <vector>

#include "idnav/core.hpp"

namespace idnav {

struct ImuNoise {
  double accel_noise_density = 2e-3;  // m/s^2/sqrt(Hz)
  double gyro_noise_density = 2e-4;   // rad/s/sqrt(Hz)
};

// Relative motion accumulated in the body frame of the first sample.
// Covariance is ordered (delta_p, delta_v, delta_theta).
struct PreintegratedImu {
  Vec3 delta_p = Vec3::Zero();
  Vec3 delta_v = Vec3::Zero();
  Quat delta_q = Quat::Identity();
  Eigen::Matrix<double, 9, 9> covariance = Eigen::Matrix<double, 9, 9>::Zero();
  double duration = 0.0;
  Vec3 bias_a_ref = Vec3::Zero();  // bias linearization point
  Vec3 bias_g_ref = Vec3::Zero();
  int gap_warnings = 0;  // sample gaps exceeding 5x the nominal spacing
};

// Midpoint-rule integration of bias-corrected measurements. The gravity
// argument is expressed in the body frame of the first sample and is folded
// into the velocity/position deltas; pass zero to obtain the standard
// gravity-free deltas used by the fusion residuals.
inline PreintegratedImu preintegrate(std::span<const ImuSample> samples,
                                     const Vec3& bias_a, const Vec3& bias_g,
                                     const Vec3& gravity_body0,
                                     const ImuNoise& noise = {}) {
  if (samples.size() < 2) {
    throw std::invalid_argument("preintegrate: needs at least two samples");
  }
  for (std::size_t i = 1; i < samples.size(); ++i) {
    if (samples[i].t <= samples[i - 1].t) {
      throw std::invalid_argument("preintegrate: timestamps not increasing");
    }
  }

  PreintegratedImu out;
  out.bias_a_ref = bias_a;
  out.bias_g_ref = bias_g;
  out.duration = samples.back().t - samples.front().t;
  const double nominal_dt = out.duration / static_cast<double>(samples.size() - 1);

  Quat q = Quat::Identity();
  Eigen::Matrix<double, 9, 9>& cov = out.covariance;

  for (std::size_t k = 0; k + 1 < samples.size(); ++k) {
    const ImuSample& s0 = samples[k];
    const ImuSample& s1 = samples[k + 1];
    const double dt = s1.t - s0.t;
    if (dt > 5.0 * nominal_dt) out.gap_warnings += 1;

    // two-sample rotation step with the second-order commutator term
    const Vec3 w0 = s0.w - bias_g;
    const Vec3 w1 = s1.w - bias_g;
    const Vec3 w_mid = 0.5 * (w0 + w1);
    const Vec3 theta_step = w_mid * dt + (dt * dt / 12.0) * w0.cross(w1);
    const Quat q_half = (q * quat_exp(0.5 * theta_step)).normalized();
    const Quat q_next = (q * quat_exp(theta_step)).normalized();

    // midpoint-evaluated quadrature of the rotated specific force, exact for
    // quadratically varying acceleration within the step
    const Vec3 a0 = q * (s0.f - bias_a);
    const Vec3 am = q_half * (0.5 * (s0.f + s1.f) - bias_a);
    const Vec3 a1 = q_next * (s1.f - bias_a);

    out.delta_p += out.delta_v * dt +
                   dt * dt * (a0 / 6.0 + am / 3.0 + 0.5 * gravity_body0);
    out.delta_v += dt * ((a0 + 4.0 * am + a1) / 6.0 + gravity_body0);

    // first-order covariance propagation around the midpoint values
    const Mat3 r_mid = q.toRotationMatrix();
    const Vec3 f_body = 0.5 * ((s0.f - bias_a) + (s1.f - bias_a));
    Eigen::Matrix<double, 9, 9> f_mat = Eigen::Matrix<double, 9, 9>::Identity();
    f_mat.block<3, 3>(0, 3) = dt * Mat3::Identity();
    f_mat.block<3, 3>(0, 6) = -0.5 * dt * dt * r_mid * skew(f_body);
    f_mat.block<3, 3>(3, 6) = -dt * r_mid * skew(f_body);
    f_mat.block<3, 3>(6, 6) = quat_exp(w_mid * dt).toRotationMatrix().transpose();

    const double var_a = noise.accel_noise_density * noise.accel_noise_density / dt;
    const double var_g = noise.gyro_noise_density * noise.gyro_noise_density / dt;
    Eigen::Matrix<double, 9, 9> q_step = Eigen::Matrix<double, 9, 9>::Zero();
    q_step.block<3, 3>(0, 0) = 0.25 * dt * dt * dt * dt * var_a * Mat3::Identity();
    q_step.block<3, 3>(0, 3) = 0.5 * dt * dt * dt * var_a * Mat3::Identity();
    q_step.block<3, 3>(3, 0) = q_step.block<3, 3>(0, 3);
    q_step.block<3, 3>(3, 3) = dt * dt * var_a * Mat3::Identity();
    q_step.block<3, 3>(6, 6) = dt * dt * var_g * Mat3::Identity();

    cov = f_mat * cov * f_mat.transpose() + q_step;
    q = q_next;
  }
  out.delta_q = q;
  cov = 0.5 * (cov + cov.transpose()).eval();
  return out;
}

}  // namespace idnav
