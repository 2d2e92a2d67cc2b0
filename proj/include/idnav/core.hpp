#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace idnav {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

constexpr double kGravityMagnitude = 9.81;

inline Vec3 gravity_world() { return Vec3(0.0, 0.0, -kGravityMagnitude); }

/// Numerical failure distinct from contract/usage errors.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic random streams.
//
// Distributions are generated from raw engine output instead of
// std::*_distribution so that a given seed produces the same sequence on
// every standard library implementation.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

  std::uint64_t next_u64() {
    // xorshift* generator, full 64-bit period for nonzero state
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [lo, hi] inclusive
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // standard normal via Box-Muller
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Vec3 normal3() {
    Vec3 v;
    v.x() = normal();
    v.y() = normal();
    v.z() = normal();
    return v;
  }

  // Independent child stream; distinct ids give decorrelated streams.
  Rng fork(std::uint64_t stream_id) {
    return Rng(splitmix(state_ ^ splitmix(stream_id + 0x9E3779B97F4A7C15ULL)));
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_u64() % i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    x = x ^ (x >> 31);
    return x != 0 ? x : 0x853C49E6748FEA9BULL;
  }

  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Rotation helpers. Quaternions are Hamilton convention, stored (w,x,y,z),
// passive world-from-body: R(q) * v_body = v_world.
// ---------------------------------------------------------------------------

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

// rotation vector -> unit quaternion
inline Quat quat_exp(const Vec3& theta) {
  const double angle = theta.norm();
  if (angle < 1e-12) {
    Quat q(1.0, 0.5 * theta.x(), 0.5 * theta.y(), 0.5 * theta.z());
    q.normalize();
    return q;
  }
  const Vec3 axis = theta / angle;
  const double half = 0.5 * angle;
  const double s = std::sin(half);
  return Quat(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

// unit quaternion -> rotation vector (inverse of quat_exp)
inline Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in;
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 im(q.x(), q.y(), q.z());
  const double im_norm = im.norm();
  if (im_norm < 1e-12) return 2.0 * im;
  const double angle = 2.0 * std::atan2(im_norm, q.w());
  return (angle / im_norm) * im;
}

// geodesic distance between two rotations, radians; quaternion-based so it
// stays well conditioned near zero
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  Quat q(a.transpose() * b);
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double im = Vec3(q.x(), q.y(), q.z()).norm();
  return 2.0 * std::atan2(im, q.w());
}

// right Jacobian of SO(3): Exp(theta + d) ~= Exp(theta) Exp(Jr(theta) d)
inline Mat3 so3_right_jacobian(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 s = skew(theta);
  if (angle < 1e-8) {
    return Mat3::Identity() - 0.5 * s + (1.0 / 6.0) * s * s;
  }
  const double a2 = angle * angle;
  return Mat3::Identity() - (1.0 - std::cos(angle)) / a2 * s +
         (angle - std::sin(angle)) / (a2 * angle) * s * s;
}

inline Mat3 so3_right_jacobian_inv(const Vec3& theta) {
  const double angle = theta.norm();
  const Mat3 s = skew(theta);
  if (angle < 1e-8) {
    return Mat3::Identity() + 0.5 * s + (1.0 / 12.0) * s * s;
  }
  const double a2 = angle * angle;
  const double coef = 1.0 / a2 - (1.0 + std::cos(angle)) / (2.0 * angle * std::sin(angle));
  return Mat3::Identity() + 0.5 * s + coef * s * s;
}

// Rotates v by q. Throws if q is not unit norm within tolerance.
inline Vec3 quat_rotate(const Quat& q, const Vec3& v) {
  if (std::abs(q.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument("quat_rotate: quaternion is not unit norm");
  }
  return q * v;
}

// ---------------------------------------------------------------------------
// Domain value types
// ---------------------------------------------------------------------------

/// One IMU measurement: specific force f [m/s^2] and angular rate w [rad/s].
struct ImuSample {
  double t = 0.0;
  Vec3 f = Vec3::Zero();
  Vec3 w = Vec3::Zero();
};

/// A fixed-length block of consecutive IMU samples (one network input window).
class ImuWindow {
 public:
  ImuWindow(std::vector<ImuSample> samples, double dt_in)
      : samples_(std::move(samples)), dt_in_(dt_in) {
    if (samples_.size() < 2) {
      throw std::invalid_argument("ImuWindow: needs at least two samples");
    }
    if (!(dt_in_ > 0.0)) {
      throw std::invalid_argument("ImuWindow: dt_in must be positive");
    }
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const ImuSample& s = samples_[i];
      if (!std::isfinite(s.t) || !s.f.allFinite() || !s.w.allFinite()) {
        throw std::invalid_argument("ImuWindow: non-finite sample");
      }
      if (i > 0) {
        const double dt = s.t - samples_[i - 1].t;
        if (dt <= 0.0) {
          throw std::invalid_argument("ImuWindow: timestamps not strictly increasing");
        }
        if (std::abs(dt - dt_in_) > 0.1 * dt_in_) {
          throw std::invalid_argument("ImuWindow: sample spacing deviates >10% from dt_in");
        }
      }
    }
  }

  const std::vector<ImuSample>& samples() const { return samples_; }
  int size() const { return static_cast<int>(samples_.size()); }
  double dt_in() const { return dt_in_; }
  double start_time() const { return samples_.front().t; }
  // window covers [start, start + size*dt_in): integrates size*dt_in seconds
  double end_time() const { return samples_.front().t + size() * dt_in_; }
  double duration() const { return size() * dt_in_; }

 private:
  std::vector<ImuSample> samples_;
  double dt_in_;
};

/// Network output: displacement over a window with per-axis log-variance.
struct DisplacementPrediction {
  Vec3 d = Vec3::Zero();
  Vec3 log_var = Vec3::Zero();
  double window_start = 0.0;
  double window_end = 0.0;

  Vec3 variance() const { return log_var.array().exp(); }
};

/// Per-step velocity profile over a window; rows x 3, spacing dt_out.
struct VelocityProfile {
  Eigen::MatrixXd v;  // rows x 3
  double dt_out = 0.002;

  Vec3 integrate_displacement() const {
    return dt_out * v.colwise().sum().transpose();
  }
};

struct Pose {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();

  void check_valid() const {
    if (!p.allFinite() || !q.coeffs().allFinite() || std::abs(q.norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("Pose: invalid position or non-unit quaternion");
    }
  }
};

/// Full navigation state at a keyframe.
struct NavState {
  double t = 0.0;
  Pose pose;
  Vec3 v = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
};

/// Time-indexed positions with optional orientations.
class Trajectory {
 public:
  struct Point {
    double t = 0.0;
    Vec3 p = Vec3::Zero();
    std::optional<Quat> q;
  };

  Trajectory() = default;
  explicit Trajectory(std::vector<Point> points) {
    for (auto& pt : points) append(std::move(pt));
  }

  void append(Point pt) {
    if (!points_.empty() && pt.t <= points_.back().t) {
      throw std::invalid_argument("Trajectory: timestamps must be strictly increasing");
    }
    points_.push_back(std::move(pt));
  }

  void append(double t, const Vec3& p) { append(Point{t, p, std::nullopt}); }
  void append(double t, const Vec3& p, const Quat& q) { append(Point{t, p, q}); }

  const std::vector<Point>& points() const { return points_; }
  bool empty() const { return points_.empty(); }
  std::size_t size() const { return points_.size(); }
  double start_time() const { return points_.front().t; }
  double end_time() const { return points_.back().t; }

  bool covers(double t) const {
    return !points_.empty() && t >= points_.front().t - 1e-12 &&
           t <= points_.back().t + 1e-12;
  }

  // Linear interpolation of position. Throws outside the covered span.
  Vec3 position_at(double t) const {
    if (!covers(t)) {
      throw std::out_of_range("Trajectory: time outside covered span");
    }
    const auto it = std::lower_bound(
        points_.begin(), points_.end(), t,
        [](const Point& pt, double time) { return pt.t < time; });
    if (it == points_.end()) return points_.back().p;
    if (it == points_.begin()) return points_.front().p;
    const Point& hi = *it;
    const Point& lo = *(it - 1);
    const double s = (t - lo.t) / (hi.t - lo.t);
    return lo.p + s * (hi.p - lo.p);
  }

  // Index of the point with timestamp nearest to t.
  std::size_t nearest_index(double t) const {
    if (points_.empty()) throw std::out_of_range("Trajectory: empty");
    const auto it = std::lower_bound(
        points_.begin(), points_.end(), t,
        [](const Point& pt, double time) { return pt.t < time; });
    if (it == points_.end()) return points_.size() - 1;
    if (it == points_.begin()) return 0;
    const std::size_t hi = static_cast<std::size_t>(it - points_.begin());
    return (t - points_[hi - 1].t) <= (points_[hi].t - t) ? hi - 1 : hi;
  }

 private:
  std::vector<Point> points_;
};

}  // namespace idnav
