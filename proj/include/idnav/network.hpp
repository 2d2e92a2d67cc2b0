#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "idnav/core.hpp"

namespace idnav {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct NetworkConfig {
  int window_length = 1000;  // T, samples per one-second window
  int conv_kernel = 2;
  int conv_stride = 2;
  int conv_channels = 7;
  int fc1_dim = 512;
  int fc2_dim = 256;
  int vel_hidden_dim = 256;
  int logvar_hidden_dim = 64;
  double dropout_rate = 0.1;
  double logvar_min = -9.2;  // sigma ~ 1 cm
  double logvar_max = 4.6;   // sigma ~ 10 m
  double dt_out = 0.002;     // velocity profile spacing, seconds
  double leaky_slope = 0.01;
  double layer_norm_eps = 1e-5;

  int conv_out_length() const {
    return (window_length - conv_kernel) / conv_stride + 1;
  }
  int profile_rows() const { return window_length / 2; }
  int conv_input_rows() const { return 3 * conv_kernel; }
  // [conv_f; conv_w; raw_f; raw_w] flattened
  int fused_input_dim() const {
    return 2 * conv_channels * conv_out_length() + 2 * 3 * window_length;
  }

  void validate() const {
    if (window_length < 2 || window_length % 2 != 0) {
      throw std::invalid_argument("NetworkConfig: window_length must be even and >= 2");
    }
    if (conv_kernel < 1 || conv_stride < 1 ||
        (window_length - conv_kernel) % conv_stride != 0) {
      throw std::invalid_argument("NetworkConfig: conv kernel/stride do not tile the window");
    }
    if (conv_channels < 1 || fc1_dim < 1 || fc2_dim < 1 || vel_hidden_dim < 1 ||
        logvar_hidden_dim < 1) {
      throw std::invalid_argument("NetworkConfig: layer dims must be positive");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw std::invalid_argument("NetworkConfig: dropout_rate must be in [0,1)");
    }
    if (!(logvar_min < logvar_max)) {
      throw std::invalid_argument("NetworkConfig: logvar clamp bounds inverted");
    }
    if (!(dt_out > 0.0)) {
      throw std::invalid_argument("NetworkConfig: dt_out must be positive");
    }
  }

  // Convenience for windows of one second at the given IMU rate.
  static NetworkConfig for_rate(int rate_hz) {
    NetworkConfig cfg;
    cfg.window_length = rate_hz;
    cfg.dt_out = 2.0 / rate_hz;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Parameter storage: one flat vector plus a named slice map
// ---------------------------------------------------------------------------

struct ParameterSlice {
  std::string name;
  int offset = 0;
  int rows = 0;
  int cols = 1;
  int fan_in = 0;   // 0: initialized to init_value instead of fan-in uniform
  double init_value = 0.0;

  int size() const { return rows * cols; }
};

class ParameterLayout {
 public:
  static ParameterLayout for_config(const NetworkConfig& cfg) {
    cfg.validate();
    ParameterLayout layout;
    const int cin = cfg.conv_input_rows();
    const int ch = cfg.conv_channels;
    const int d = cfg.fused_input_dim();
    const int rows3 = 3 * cfg.profile_rows();
    layout.add("conv_f_w", ch, cin, cin);
    layout.add("conv_f_b", ch, 1, 0, 0.0);
    layout.add("conv_w_w", ch, cin, cin);
    layout.add("conv_w_b", ch, 1, 0, 0.0);
    layout.add("fc1_w", cfg.fc1_dim, d, d);
    layout.add("fc1_b", cfg.fc1_dim, 1, 0, 0.0);
    layout.add("ln1_gamma", cfg.fc1_dim, 1, 0, 1.0);
    layout.add("ln1_beta", cfg.fc1_dim, 1, 0, 0.0);
    layout.add("fc2_w", cfg.fc2_dim, cfg.fc1_dim, cfg.fc1_dim);
    layout.add("fc2_b", cfg.fc2_dim, 1, 0, 0.0);
    layout.add("ln2_gamma", cfg.fc2_dim, 1, 0, 1.0);
    layout.add("ln2_beta", cfg.fc2_dim, 1, 0, 0.0);
    layout.add("vel_h_w", cfg.vel_hidden_dim, cfg.fc2_dim, cfg.fc2_dim);
    layout.add("vel_h_b", cfg.vel_hidden_dim, 1, 0, 0.0);
    layout.add("vel_o_w", rows3, cfg.vel_hidden_dim, cfg.vel_hidden_dim);
    layout.add("vel_o_b", rows3, 1, 0, 0.0);
    layout.add("lv_h_w", cfg.logvar_hidden_dim, cfg.fc2_dim, cfg.fc2_dim);
    layout.add("lv_h_b", cfg.logvar_hidden_dim, 1, 0, 0.0);
    layout.add("lv_o_w", 3, cfg.logvar_hidden_dim, cfg.logvar_hidden_dim);
    layout.add("lv_o_b", 3, 1, 0, 0.0);
    return layout;
  }

  const std::vector<ParameterSlice>& slices() const { return slices_; }
  int total_size() const { return total_; }

  const ParameterSlice& slice(const std::string& name) const {
    for (const auto& s : slices_) {
      if (s.name == name) return s;
    }
    throw std::invalid_argument("ParameterLayout: unknown slice " + name);
  }

 private:
  void add(const std::string& name, int rows, int cols, int fan_in,
           double init_value = 0.0) {
    slices_.push_back({name, total_, rows, cols, fan_in, init_value});
    total_ += rows * cols;
  }

  std::vector<ParameterSlice> slices_;
  int total_ = 0;
};

struct NetworkParameters {
  ParameterLayout layout;
  Eigen::VectorXd values;

  Eigen::Map<const Eigen::MatrixXd> matrix(const std::string& name) const {
    const ParameterSlice& s = layout.slice(name);
    return {values.data() + s.offset, static_cast<Eigen::Index>(s.rows),
            static_cast<Eigen::Index>(s.cols)};
  }
  Eigen::Map<const Eigen::VectorXd> vector(const std::string& name) const {
    const ParameterSlice& s = layout.slice(name);
    return {values.data() + s.offset, static_cast<Eigen::Index>(s.size())};
  }
};

// Cheap identity check used to tie a tape to the parameters it was built with.
inline std::uint64_t parameter_signature(const Eigen::VectorXd& values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](std::uint64_t bits) {
    h ^= bits;
    h *= 0x100000001b3ULL;
  };
  mix(static_cast<std::uint64_t>(values.size()));
  const Eigen::Index n = values.size();
  const Eigen::Index step = std::max<Eigen::Index>(1, n / 256);
  for (Eigen::Index i = 0; i < n; i += step) {
    std::uint64_t bits;
    const double x = values[i];
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(bits));
    mix(bits);
  }
  return h;
}

inline NetworkParameters init_parameters(const NetworkConfig& cfg, Rng& rng) {
  NetworkParameters params;
  params.layout = ParameterLayout::for_config(cfg);
  params.values.resize(params.layout.total_size());
  for (const auto& s : params.layout.slices()) {
    if (s.fan_in > 0) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
      for (int i = 0; i < s.size(); ++i) {
        params.values[s.offset + i] = rng.uniform(-bound, bound);
      }
    } else {
      params.values.segment(s.offset, s.size()).setConstant(s.init_value);
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Forward pass with activation tape, and exact reverse-mode backprop
// ---------------------------------------------------------------------------

struct ForwardTape {
  NetworkConfig cfg;
  std::uint64_t param_signature = 0;
  bool train_mode = false;

  Eigen::MatrixXd xc_f, xc_w;            // im2col inputs, (3*kernel) x L
  Eigen::MatrixXd conv_pre_f, conv_pre_w;  // channels x L
  Eigen::MatrixXd conv_mask_f, conv_mask_w;
  Eigen::VectorXd x0;                     // fused trunk input
  Eigen::VectorXd xhat1, y1, mask1, d1;
  double rstd1 = 0.0;
  Eigen::VectorXd xhat2, y2, h;
  double rstd2 = 0.0;
  Eigen::VectorXd z3, a3;  // velocity head hidden
  Eigen::VectorXd z5, a5;  // log-variance head hidden
  Eigen::VectorXd z6;      // log-variance pre-clamp
};

struct ForwardResult {
  VelocityProfile profile;
  DisplacementPrediction prediction;
  ForwardTape tape;
};

namespace detail {

inline void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& m,
                         const char* layer) {
  if (!m.allFinite()) {
    throw NumericError(std::string("network: non-finite activation in ") + layer);
  }
}

inline Eigen::MatrixXd leaky(const Eigen::MatrixXd& x, double slope) {
  return x.array().max(0.0).matrix() + slope * x.array().min(0.0).matrix();
}

inline Eigen::MatrixXd leaky_grad(const Eigen::MatrixXd& x, double slope) {
  return (x.array() > 0.0).select(Eigen::MatrixXd::Ones(x.rows(), x.cols()),
                                  Eigen::MatrixXd::Constant(x.rows(), x.cols(), slope));
}

inline Eigen::MatrixXd bernoulli_mask(Eigen::Index rows, Eigen::Index cols,
                                      double keep_prob, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      m(r, c) = rng.uniform() < keep_prob ? 1.0 : 0.0;
    }
  }
  return m;
}

inline Eigen::MatrixXd im2col(const Eigen::MatrixXd& x, int kernel, int stride,
                              int out_len) {
  Eigen::MatrixXd xc(x.rows() * kernel, out_len);
  for (int j = 0; j < out_len; ++j) {
    for (int k = 0; k < kernel; ++k) {
      xc.block(k * x.rows(), j, x.rows(), 1) = x.col(j * stride + k);
    }
  }
  return xc;
}

// row-major flatten of a matrix into a vector segment
inline void flatten_rows(const Eigen::MatrixXd& m, Eigen::VectorXd& out,
                         Eigen::Index offset) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out.segment(offset + r * m.cols(), m.cols()) = m.row(r).transpose();
  }
}

inline Eigen::MatrixXd unflatten_rows(const Eigen::Ref<const Eigen::VectorXd>& v,
                                      Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    m.row(r) = v.segment(r * cols, cols).transpose();
  }
  return m;
}

struct LayerNormed {
  Eigen::VectorXd xhat;
  Eigen::VectorXd y;
  double rstd = 0.0;
};

inline LayerNormed layer_norm(const Eigen::VectorXd& z,
                              const Eigen::Ref<const Eigen::VectorXd>& gamma,
                              const Eigen::Ref<const Eigen::VectorXd>& beta,
                              double eps) {
  LayerNormed out;
  const double mu = z.mean();
  const double var = (z.array() - mu).square().mean();
  out.rstd = 1.0 / std::sqrt(var + eps);
  out.xhat = (z.array() - mu).matrix() * out.rstd;
  out.y = gamma.cwiseProduct(out.xhat) + beta;
  return out;
}

inline Eigen::VectorXd layer_norm_backward(
    const Eigen::VectorXd& g_y, const Eigen::VectorXd& xhat, double rstd,
    const Eigen::Ref<const Eigen::VectorXd>& gamma) {
  const Eigen::VectorXd ghat = g_y.cwiseProduct(gamma);
  const double m1 = ghat.mean();
  const double m2 = ghat.cwiseProduct(xhat).mean();
  return rstd * (ghat.array() - m1 - xhat.array() * m2).matrix();
}

}  // namespace detail

inline ForwardResult forward(const NetworkParameters& params,
                             const ImuWindow& window, const NetworkConfig& cfg,
                             bool train_mode, Rng& rng) {
  cfg.validate();
  if (window.size() != cfg.window_length) {
    throw std::invalid_argument("forward: window length " +
                                std::to_string(window.size()) +
                                " does not match config T=" +
                                std::to_string(cfg.window_length));
  }
  if (params.values.size() != params.layout.total_size() ||
      params.layout.total_size() !=
          ParameterLayout::for_config(cfg).total_size()) {
    throw std::invalid_argument("forward: parameter vector does not match config");
  }

  using detail::check_finite;
  using detail::leaky;

  const int t_len = cfg.window_length;
  const int out_len = cfg.conv_out_length();
  const int rows = cfg.profile_rows();
  const double keep = 1.0 - cfg.dropout_rate;

  ForwardResult res;
  ForwardTape& tape = res.tape;
  tape.cfg = cfg;
  tape.train_mode = train_mode;
  tape.param_signature = parameter_signature(params.values);

  Eigen::MatrixXd accel(3, t_len), gyro(3, t_len);
  for (int i = 0; i < t_len; ++i) {
    accel.col(i) = window.samples()[i].f;
    gyro.col(i) = window.samples()[i].w;
  }
  check_finite(accel, "input");
  check_finite(gyro, "input");

  tape.xc_f = detail::im2col(accel, cfg.conv_kernel, cfg.conv_stride, out_len);
  tape.xc_w = detail::im2col(gyro, cfg.conv_kernel, cfg.conv_stride, out_len);

  // dual conv branches
  tape.conv_pre_f = (params.matrix("conv_f_w") * tape.xc_f).colwise() +
                    Eigen::VectorXd(params.vector("conv_f_b"));
  tape.conv_pre_w = (params.matrix("conv_w_w") * tape.xc_w).colwise() +
                    Eigen::VectorXd(params.vector("conv_w_b"));
  check_finite(tape.conv_pre_f, "conv_f");
  check_finite(tape.conv_pre_w, "conv_w");

  Eigen::MatrixXd act_f = leaky(tape.conv_pre_f, cfg.leaky_slope);
  Eigen::MatrixXd act_w = leaky(tape.conv_pre_w, cfg.leaky_slope);
  if (train_mode) {
    tape.conv_mask_f = detail::bernoulli_mask(act_f.rows(), act_f.cols(), keep, rng);
    tape.conv_mask_w = detail::bernoulli_mask(act_w.rows(), act_w.cols(), keep, rng);
    act_f = act_f.cwiseProduct(tape.conv_mask_f) / keep;
    act_w = act_w.cwiseProduct(tape.conv_mask_w) / keep;
  }

  // fused trunk input: [c_f; c_w; f; w], each flattened row-major
  const int conv_flat = cfg.conv_channels * out_len;
  tape.x0.resize(cfg.fused_input_dim());
  detail::flatten_rows(act_f, tape.x0, 0);
  detail::flatten_rows(act_w, tape.x0, conv_flat);
  detail::flatten_rows(accel, tape.x0, 2 * conv_flat);
  detail::flatten_rows(gyro, tape.x0, 2 * conv_flat + 3 * t_len);

  // FC1 -> layer norm -> LeakyReLU -> dropout
  Eigen::VectorXd z1 =
      params.matrix("fc1_w") * tape.x0 + Eigen::VectorXd(params.vector("fc1_b"));
  check_finite(z1, "fc1");
  auto ln1 = detail::layer_norm(z1, params.vector("ln1_gamma"),
                                params.vector("ln1_beta"), cfg.layer_norm_eps);
  tape.xhat1 = std::move(ln1.xhat);
  tape.rstd1 = ln1.rstd;
  tape.y1 = std::move(ln1.y);
  Eigen::VectorXd a1 = leaky(tape.y1, cfg.leaky_slope);
  if (train_mode) {
    tape.mask1 = detail::bernoulli_mask(a1.size(), 1, keep, rng);
    tape.d1 = a1.cwiseProduct(tape.mask1) / keep;
  } else {
    tape.d1 = std::move(a1);
  }

  // FC2 -> layer norm -> LeakyReLU
  Eigen::VectorXd z2 =
      params.matrix("fc2_w") * tape.d1 + Eigen::VectorXd(params.vector("fc2_b"));
  check_finite(z2, "fc2");
  auto ln2 = detail::layer_norm(z2, params.vector("ln2_gamma"),
                                params.vector("ln2_beta"), cfg.layer_norm_eps);
  tape.xhat2 = std::move(ln2.xhat);
  tape.rstd2 = ln2.rstd;
  tape.y2 = std::move(ln2.y);
  tape.h = leaky(tape.y2, cfg.leaky_slope);

  // velocity head
  tape.z3 = params.matrix("vel_h_w") * tape.h +
            Eigen::VectorXd(params.vector("vel_h_b"));
  check_finite(tape.z3, "vel_hidden");
  tape.a3 = leaky(tape.z3, cfg.leaky_slope);
  Eigen::VectorXd z4 = params.matrix("vel_o_w") * tape.a3 +
                       Eigen::VectorXd(params.vector("vel_o_b"));
  check_finite(z4, "vel_out");

  // log-variance head
  tape.z5 = params.matrix("lv_h_w") * tape.h +
            Eigen::VectorXd(params.vector("lv_h_b"));
  check_finite(tape.z5, "logvar_hidden");
  tape.a5 = leaky(tape.z5, cfg.leaky_slope);
  tape.z6 = params.matrix("lv_o_w") * tape.a5 +
            Eigen::VectorXd(params.vector("lv_o_b"));
  check_finite(tape.z6, "logvar_out");

  res.profile.dt_out = cfg.dt_out;
  res.profile.v.resize(rows, 3);
  for (int t = 0; t < rows; ++t) {
    res.profile.v.row(t) = z4.segment(3 * t, 3).transpose();
  }

  res.prediction.d = res.profile.integrate_displacement();
  res.prediction.log_var =
      tape.z6.array().min(cfg.logvar_max).max(cfg.logvar_min);
  res.prediction.window_start = window.start_time();
  res.prediction.window_end = window.end_time();
  return res;
}

/// Gradients of a scalar loss with respect to the three network outputs.
struct OutputGradients {
  Eigen::MatrixXd g_profile;  // rows x 3, d(loss)/d(v)
  Vec3 g_displacement = Vec3::Zero();
  Vec3 g_logvar = Vec3::Zero();
};

inline Eigen::VectorXd backward(const ForwardTape& tape,
                                const NetworkParameters& params,
                                const OutputGradients& out_grads) {
  if (!tape.train_mode) {
    throw std::invalid_argument("backward: tape must come from a train-mode forward");
  }
  if (tape.param_signature != parameter_signature(params.values)) {
    throw std::invalid_argument("backward: tape does not match these parameters");
  }
  const NetworkConfig& cfg = tape.cfg;
  const int rows = cfg.profile_rows();
  if (out_grads.g_profile.rows() != rows || out_grads.g_profile.cols() != 3) {
    throw std::invalid_argument("backward: profile gradient has wrong shape");
  }

  using detail::leaky_grad;
  const double keep = 1.0 - cfg.dropout_rate;
  const double slope = cfg.leaky_slope;

  Eigen::VectorXd grads = Eigen::VectorXd::Zero(params.layout.total_size());
  const auto grad_block = [&](const char* name) {
    const ParameterSlice& s = params.layout.slice(name);
    return Eigen::Map<Eigen::MatrixXd>(grads.data() + s.offset, s.rows, s.cols);
  };

  // displacement feeds back into every profile row
  Eigen::MatrixXd gv = out_grads.g_profile;
  gv.rowwise() += cfg.dt_out * out_grads.g_displacement.transpose();

  Eigen::VectorXd g_z4(3 * rows);
  for (int t = 0; t < rows; ++t) {
    g_z4.segment(3 * t, 3) = gv.row(t).transpose();
  }

  // velocity head
  grad_block("vel_o_b") = g_z4;
  grad_block("vel_o_w") = g_z4 * tape.a3.transpose();
  Eigen::VectorXd g_a3 = params.matrix("vel_o_w").transpose() * g_z4;
  Eigen::VectorXd g_z3 =
      g_a3.cwiseProduct(Eigen::VectorXd(leaky_grad(tape.z3, slope)));
  grad_block("vel_h_b") = g_z3;
  grad_block("vel_h_w") = g_z3 * tape.h.transpose();
  Eigen::VectorXd g_h = params.matrix("vel_h_w").transpose() * g_z3;

  // log-variance head; clamp blocks gradient outside the bounds
  Eigen::Vector3d g_z6 = out_grads.g_logvar;
  for (int k = 0; k < 3; ++k) {
    if (tape.z6[k] < cfg.logvar_min || tape.z6[k] > cfg.logvar_max) g_z6[k] = 0.0;
  }
  grad_block("lv_o_b") = g_z6;
  grad_block("lv_o_w") = g_z6 * tape.a5.transpose();
  Eigen::VectorXd g_a5 = params.matrix("lv_o_w").transpose() * g_z6;
  Eigen::VectorXd g_z5 =
      g_a5.cwiseProduct(Eigen::VectorXd(leaky_grad(tape.z5, slope)));
  grad_block("lv_h_b") = g_z5;
  grad_block("lv_h_w") = g_z5 * tape.h.transpose();
  g_h += params.matrix("lv_h_w").transpose() * g_z5;

  // trunk FC2 + layer norm
  Eigen::VectorXd g_y2 =
      g_h.cwiseProduct(Eigen::VectorXd(leaky_grad(tape.y2, slope)));
  grad_block("ln2_gamma") = g_y2.cwiseProduct(tape.xhat2);
  grad_block("ln2_beta") = g_y2;
  Eigen::VectorXd g_z2 = detail::layer_norm_backward(
      g_y2, tape.xhat2, tape.rstd2, params.vector("ln2_gamma"));
  grad_block("fc2_b") = g_z2;
  grad_block("fc2_w") = g_z2 * tape.d1.transpose();
  Eigen::VectorXd g_d1 = params.matrix("fc2_w").transpose() * g_z2;

  // dropout + FC1 + layer norm
  Eigen::VectorXd g_a1 = g_d1.cwiseProduct(tape.mask1) / keep;
  Eigen::VectorXd g_y1 =
      g_a1.cwiseProduct(Eigen::VectorXd(leaky_grad(tape.y1, slope)));
  grad_block("ln1_gamma") = g_y1.cwiseProduct(tape.xhat1);
  grad_block("ln1_beta") = g_y1;
  Eigen::VectorXd g_z1 = detail::layer_norm_backward(
      g_y1, tape.xhat1, tape.rstd1, params.vector("ln1_gamma"));
  grad_block("fc1_b") = g_z1;
  grad_block("fc1_w") = g_z1 * tape.x0.transpose();
  Eigen::VectorXd g_x0 = params.matrix("fc1_w").transpose() * g_z1;

  // split the fused-input gradient back into the two conv branches
  const int out_len = cfg.conv_out_length();
  const int conv_flat = cfg.conv_channels * out_len;
  const auto conv_branch_back = [&](const Eigen::Ref<const Eigen::VectorXd>& g_flat,
                                    const Eigen::MatrixXd& pre,
                                    const Eigen::MatrixXd& mask,
                                    const Eigen::MatrixXd& xc, const char* w_name,
                                    const char* b_name) {
    Eigen::MatrixXd g_act =
        detail::unflatten_rows(g_flat, cfg.conv_channels, out_len);
    g_act = g_act.cwiseProduct(mask) / keep;
    Eigen::MatrixXd g_pre = g_act.cwiseProduct(leaky_grad(pre, slope));
    grad_block(b_name) = g_pre.rowwise().sum();
    grad_block(w_name) = g_pre * xc.transpose();
  };
  conv_branch_back(g_x0.segment(0, conv_flat), tape.conv_pre_f, tape.conv_mask_f,
                   tape.xc_f, "conv_f_w", "conv_f_b");
  conv_branch_back(g_x0.segment(conv_flat, conv_flat), tape.conv_pre_w,
                   tape.conv_mask_w, tape.xc_w, "conv_w_w", "conv_w_b");

  return grads;
}

}  // namespace idnav
