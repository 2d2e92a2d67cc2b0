#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "idnav/core.hpp"

namespace idnav {

struct TimedPose {
  double t = 0.0;
  Pose pose;
};

enum class TrajectoryKind { kHover, kConstantVelocity, kCircle, kAggressiveSpline };

inline TrajectoryKind trajectory_kind_from_string(const std::string& s) {
  if (s == "hover") return TrajectoryKind::kHover;
  if (s == "constant-velocity") return TrajectoryKind::kConstantVelocity;
  if (s == "circle") return TrajectoryKind::kCircle;
  if (s == "aggressive-spline") return TrajectoryKind::kAggressiveSpline;
  throw std::invalid_argument("unknown trajectory kind: " + s);
}

inline std::string to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::kHover: return "hover";
    case TrajectoryKind::kConstantVelocity: return "constant-velocity";
    case TrajectoryKind::kCircle: return "circle";
    case TrajectoryKind::kAggressiveSpline: return "aggressive-spline";
  }
  return "unknown";
}

enum class BlackoutMode { kMissing, kCorrupted };

struct BlackoutInterval {
  double start = 0.0;
  double end = 0.0;
};

struct ScenarioConfig {
  double duration = 60.0;
  TrajectoryKind kind = TrajectoryKind::kHover;
  std::uint64_t seed = 0;

  // trajectory shape
  Vec3 start_position = Vec3::Zero();
  Vec3 velocity = Vec3(1, 0, 0);       // constant-velocity kind
  double circle_radius = 2.0;          // circle kind
  double circle_period = 4.0;
  double spline_peak_accel = 25.0;     // aggressive kind, >= 2 g
  double spline_yaw_amplitude = 0.25;  // rad

  // IMU model
  double imu_rate = 1000.0;
  double accel_noise_density = 2e-3;  // m/s^2/sqrt(Hz)
  double gyro_noise_density = 2e-4;   // rad/s/sqrt(Hz)
  double accel_bias_walk = 0.0;       // m/s^2/sqrt(s) random walk density
  double gyro_bias_walk = 0.0;        // rad/s/sqrt(s)
  Vec3 accel_bias = Vec3::Zero();     // constant bias
  Vec3 gyro_bias = Vec3::Zero();

  // pose observations (visual surrogate)
  double observation_rate = 30.0;
  double observation_pos_noise = 0.02;   // m
  double observation_rot_noise = 0.005;  // rad
  std::vector<BlackoutInterval> blackouts;
  BlackoutMode blackout_mode = BlackoutMode::kMissing;
  double corrupted_noise_scale = 50.0;  // noise multiplier in corrupted mode

  void validate() const {
    if (!(duration > 0.0) || !(imu_rate > 0.0) || !(observation_rate > 0.0)) {
      throw std::invalid_argument("ScenarioConfig: durations and rates must be positive");
    }
    for (std::size_t i = 0; i < blackouts.size(); ++i) {
      const auto& b = blackouts[i];
      if (b.start < 0.0 || b.end > duration || b.start >= b.end) {
        throw std::invalid_argument("ScenarioConfig: blackout outside [0, duration]");
      }
      for (std::size_t j = i + 1; j < blackouts.size(); ++j) {
        if (b.start < blackouts[j].end && blackouts[j].start < b.end) {
          throw std::invalid_argument("ScenarioConfig: blackout intervals overlap");
        }
      }
    }
  }

  bool in_blackout(double t) const {
    for (const auto& b : blackouts) {
      if (t >= b.start && t < b.end) return true;
    }
    return false;
  }
};

// ---------------------------------------------------------------------------
// Analytic ground-truth motion models (C2-continuous)
// ---------------------------------------------------------------------------

class SyntheticTruth {
 public:
  virtual ~SyntheticTruth() = default;
  virtual Vec3 position(double t) const = 0;
  virtual Vec3 velocity(double t) const = 0;
  virtual Vec3 acceleration(double t) const = 0;
  virtual Quat orientation(double t) const { (void)t; return Quat::Identity(); }
  virtual Vec3 body_rate(double t) const { (void)t; return Vec3::Zero(); }
};

class HoverTruth : public SyntheticTruth {
 public:
  explicit HoverTruth(const Vec3& p0) : p0_(p0) {}
  Vec3 position(double) const override { return p0_; }
  Vec3 velocity(double) const override { return Vec3::Zero(); }
  Vec3 acceleration(double) const override { return Vec3::Zero(); }

 private:
  Vec3 p0_;
};

class ConstantVelocityTruth : public SyntheticTruth {
 public:
  ConstantVelocityTruth(const Vec3& p0, const Vec3& v) : p0_(p0), v_(v) {}
  Vec3 position(double t) const override { return p0_ + t * v_; }
  Vec3 velocity(double) const override { return v_; }
  Vec3 acceleration(double) const override { return Vec3::Zero(); }

 private:
  Vec3 p0_, v_;
};

class CircleTruth : public SyntheticTruth {
 public:
  CircleTruth(const Vec3& center, double radius, double period)
      : c_(center), r_(radius), omega_(2.0 * M_PI / period) {}
  Vec3 position(double t) const override {
    return c_ + r_ * Vec3(std::cos(omega_ * t), std::sin(omega_ * t), 0.0);
  }
  Vec3 velocity(double t) const override {
    return r_ * omega_ * Vec3(-std::sin(omega_ * t), std::cos(omega_ * t), 0.0);
  }
  Vec3 acceleration(double t) const override {
    return -r_ * omega_ * omega_ *
           Vec3(std::cos(omega_ * t), std::sin(omega_ * t), 0.0);
  }

 private:
  Vec3 c_;
  double r_, omega_;
};

namespace detail {

// quintic smoothstep and derivatives, C2 at both ends
inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}
inline double smoothstep_d1(double u) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return u * u * (30.0 + u * (-60.0 + 30.0 * u));
}
inline double smoothstep_d2(double u) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  return u * (60.0 + u * (-180.0 + 120.0 * u));
}

struct Sinusoid {
  double amplitude = 0.0;
  double omega = 0.0;
  double phase = 0.0;

  double value(double t) const { return amplitude * std::sin(omega * t + phase); }
  double d1(double t) const { return amplitude * omega * std::cos(omega * t + phase); }
  double d2(double t) const {
    return -amplitude * omega * omega * std::sin(omega * t + phase);
  }
};

}  // namespace detail

// Sum-of-sinusoids position with a smooth ramp envelope: starts and ends at
// rest, bounded excursion, peak acceleration scaled to the configured level.
// Orientation mixes a dominant yaw oscillation with smaller roll/pitch.
class AggressiveSplineTruth : public SyntheticTruth {
 public:
  AggressiveSplineTruth(const Vec3& p0, double duration, double peak_accel,
                        double yaw_amplitude, std::uint64_t seed)
      : p0_(p0), duration_(duration), ramp_(std::min(2.0, 0.2 * duration)) {
    Rng rng(seed);
    for (int axis = 0; axis < 3; ++axis) {
      for (int j = 0; j < 3; ++j) {
        detail::Sinusoid s;
        s.amplitude = rng.uniform(0.2, 1.0);
        s.omega = 2.0 * M_PI * rng.uniform(0.3, 1.4);
        s.phase = rng.uniform(0.0, 2.0 * M_PI);
        pos_[axis].push_back(s);
      }
    }
    yaw_ = {yaw_amplitude, 2.0 * M_PI * rng.uniform(0.5, 1.0),
            rng.uniform(0.0, 2.0 * M_PI)};
    roll_ = {0.3 * yaw_amplitude, 2.0 * M_PI * rng.uniform(0.6, 1.2),
             rng.uniform(0.0, 2.0 * M_PI)};
    pitch_ = {0.3 * yaw_amplitude, 2.0 * M_PI * rng.uniform(0.6, 1.2),
              rng.uniform(0.0, 2.0 * M_PI)};

    // normalize raw peak acceleration to the requested level
    double peak = 0.0;
    for (double t = 0.0; t <= duration_; t += duration_ / 4000.0) {
      peak = std::max(peak, acceleration(t).norm());
    }
    if (peak > 0.0) {
      const double scale = peak_accel / peak;
      for (auto& axis : pos_) {
        for (auto& s : axis) s.amplitude *= scale;
      }
    }
  }

  Vec3 position(double t) const override {
    Vec3 p;
    for (int axis = 0; axis < 3; ++axis) p[axis] = raw(axis, 0, t);
    return p0_ + envelope(t, 0) * p;
  }

  Vec3 velocity(double t) const override {
    Vec3 f, f1;
    for (int axis = 0; axis < 3; ++axis) {
      f[axis] = raw(axis, 0, t);
      f1[axis] = raw(axis, 1, t);
    }
    return envelope(t, 1) * f + envelope(t, 0) * f1;
  }

  Vec3 acceleration(double t) const override {
    Vec3 f, f1, f2;
    for (int axis = 0; axis < 3; ++axis) {
      f[axis] = raw(axis, 0, t);
      f1[axis] = raw(axis, 1, t);
      f2[axis] = raw(axis, 2, t);
    }
    return envelope(t, 2) * f + 2.0 * envelope(t, 1) * f1 + envelope(t, 0) * f2;
  }

  Quat orientation(double t) const override {
    const Vec3 e = euler(t, 0);
    return Quat(Eigen::AngleAxisd(e.z(), Vec3::UnitZ()) *
                Eigen::AngleAxisd(e.y(), Vec3::UnitY()) *
                Eigen::AngleAxisd(e.x(), Vec3::UnitX()));
  }

  // ZYX Euler kinematics: body rate from Euler angles and their rates
  Vec3 body_rate(double t) const override {
    const Vec3 e = euler(t, 0);
    const Vec3 ed = euler(t, 1);
    const double phi = e.x(), theta = e.y();
    Vec3 w;
    w.x() = ed.x() - ed.z() * std::sin(theta);
    w.y() = ed.y() * std::cos(phi) + ed.z() * std::cos(theta) * std::sin(phi);
    w.z() = ed.z() * std::cos(theta) * std::cos(phi) - ed.y() * std::sin(phi);
    return w;
  }

 private:
  double envelope(double t, int deriv) const {
    const double u1 = t / ramp_;
    const double u2 = (duration_ - t) / ramp_;
    const double a = detail::smoothstep(u1);
    const double b = detail::smoothstep(u2);
    if (deriv == 0) return a * b;
    const double a1 = detail::smoothstep_d1(u1) / ramp_;
    const double b1 = -detail::smoothstep_d1(u2) / ramp_;
    if (deriv == 1) return a1 * b + a * b1;
    const double a2 = detail::smoothstep_d2(u1) / (ramp_ * ramp_);
    const double b2 = detail::smoothstep_d2(u2) / (ramp_ * ramp_);
    return a2 * b + 2.0 * a1 * b1 + a * b2;
  }

  double raw(int axis, int deriv, double t) const {
    double sum = 0.0;
    for (const auto& s : pos_[axis]) {
      sum += deriv == 0 ? s.value(t) : (deriv == 1 ? s.d1(t) : s.d2(t));
    }
    return sum;
  }

  Vec3 euler(double t, int deriv) const {
    const double env = envelope(t, 0);
    const double env1 = envelope(t, 1);
    const auto angle = [&](const detail::Sinusoid& s) {
      return deriv == 0 ? env * s.value(t) : env1 * s.value(t) + env * s.d1(t);
    };
    return Vec3(angle(roll_), angle(pitch_), angle(yaw_));
  }

  Vec3 p0_;
  double duration_;
  double ramp_;
  std::vector<detail::Sinusoid> pos_[3];
  detail::Sinusoid yaw_, roll_, pitch_;
};

inline std::shared_ptr<SyntheticTruth> generate_truth(const ScenarioConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case TrajectoryKind::kHover:
      return std::make_shared<HoverTruth>(cfg.start_position);
    case TrajectoryKind::kConstantVelocity:
      return std::make_shared<ConstantVelocityTruth>(cfg.start_position, cfg.velocity);
    case TrajectoryKind::kCircle:
      return std::make_shared<CircleTruth>(cfg.start_position, cfg.circle_radius,
                                           cfg.circle_period);
    case TrajectoryKind::kAggressiveSpline:
      return std::make_shared<AggressiveSplineTruth>(
          cfg.start_position, cfg.duration, cfg.spline_peak_accel,
          cfg.spline_yaw_amplitude, cfg.seed);
  }
  throw std::invalid_argument("generate_truth: unknown kind");
}

inline Trajectory sample_trajectory(const SyntheticTruth& truth, double rate,
                                    double duration) {
  Trajectory traj;
  const double dt = 1.0 / rate;
  const long n = std::lround(duration * rate);
  for (long i = 0; i <= n; ++i) {
    const double t = i * dt;
    traj.append(t, truth.position(t), truth.orientation(t));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Measurement synthesis
// ---------------------------------------------------------------------------

// Specific force in the body frame: f = R^T (a - g) + bias + noise.
// Per-sample noise std is density * sqrt(rate) (bandwidth = sampling rate).
inline std::vector<ImuSample> synthesize_imu(const SyntheticTruth& truth,
                                             const ScenarioConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(0x1101);
  const double dt = 1.0 / cfg.imu_rate;
  const double accel_sigma = cfg.accel_noise_density * std::sqrt(cfg.imu_rate);
  const double gyro_sigma = cfg.gyro_noise_density * std::sqrt(cfg.imu_rate);
  const double accel_walk_step = cfg.accel_bias_walk * std::sqrt(dt);
  const double gyro_walk_step = cfg.gyro_bias_walk * std::sqrt(dt);
  const Vec3 g = gravity_world();

  Vec3 b_a = cfg.accel_bias;
  Vec3 b_g = cfg.gyro_bias;
  std::vector<ImuSample> out;
  const long n = std::lround(cfg.duration * cfg.imu_rate);
  out.reserve(n);
  for (long i = 0; i < n; ++i) {
    const double t = i * dt;
    const Quat q = truth.orientation(t);
    ImuSample s;
    s.t = t;
    s.f = q.conjugate() * (truth.acceleration(t) - g) + b_a +
          accel_sigma * rng.normal3();
    s.w = truth.body_rate(t) + b_g + gyro_sigma * rng.normal3();
    out.push_back(s);
    b_a += accel_walk_step * rng.normal3();
    b_g += gyro_walk_step * rng.normal3();
  }
  return out;
}

// Noisy poses at the observation rate. In missing mode blackout intervals
// produce no observations; in corrupted mode they produce heavily corrupted
// ones (the consumer is not told which).
inline std::vector<TimedPose> synthesize_observations(const SyntheticTruth& truth,
                                                      const ScenarioConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).fork(0x0B5E);
  const double dt = 1.0 / cfg.observation_rate;
  std::vector<TimedPose> out;
  const long n = std::lround(cfg.duration * cfg.observation_rate);
  for (long i = 0; i < n; ++i) {
    const double t = i * dt;
    double pos_noise = cfg.observation_pos_noise;
    double rot_noise = cfg.observation_rot_noise;
    if (cfg.in_blackout(t)) {
      if (cfg.blackout_mode == BlackoutMode::kMissing) {
        // keep the rng stream aligned so the blackout does not shift
        // the noise of later observations
        rng.normal3();
        rng.normal3();
        continue;
      }
      pos_noise *= cfg.corrupted_noise_scale;
      rot_noise *= cfg.corrupted_noise_scale;
    }
    TimedPose obs;
    obs.t = t;
    obs.pose.p = truth.position(t) + pos_noise * rng.normal3();
    obs.pose.q = truth.orientation(t) * quat_exp(rot_noise * rng.normal3());
    obs.pose.q.normalize();
    out.push_back(obs);
  }
  return out;
}

}  // namespace idnav
