#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "idnav/csv.hpp"
#include "idnav/network.hpp"
#include "idnav/pipeline.hpp"
#include "idnav/simulator.hpp"
#include "idnav/training.hpp"

namespace idnav {

// Plain-text configuration: [section] headers, key = value lines, '#'
// comments. Repeated keys are kept in order (used for multi-stage schedules).
class Ini {
 public:
  static Ini parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ParseError("cannot open config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path);
  }

  static Ini parse(const std::string& text, const std::string& path = "<config>") {
    Ini ini;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(is, line)) {
      line_no += 1;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed[0] == '#' || trimmed[0] == ';') continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']' || trimmed.size() < 3) {
          throw ParseError(path + ":" + std::to_string(line_no) +
                           ": malformed section header '" + trimmed + "'");
        }
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw ParseError(path + ":" + std::to_string(line_no) +
                         ": expected 'key = value', got '" + trimmed + "'");
      }
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) {
        throw ParseError(path + ":" + std::to_string(line_no) + ": empty key");
      }
      ini.entries_[section].emplace_back(key, value);
    }
    return ini;
  }

  bool has(const std::string& section, const std::string& key) const {
    return lookup(section, key).has_value();
  }

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const {
    return lookup(section, key).value_or(fallback);
  }

  double get_double(const std::string& section, const std::string& key,
                    double fallback) const {
    const auto v = lookup(section, key);
    if (!v) return fallback;
    return to_double(*v, section, key);
  }

  int get_int(const std::string& section, const std::string& key, int fallback) const {
    return static_cast<int>(get_double(section, key, fallback));
  }

  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback) const {
    const auto v = lookup(section, key);
    if (!v) return fallback;
    return std::stoull(*v);
  }

  bool get_bool(const std::string& section, const std::string& key,
                bool fallback) const {
    const auto v = lookup(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "off") return false;
    throw ParseError("config [" + section + "] " + key + ": expected boolean, got '" +
                     *v + "'");
  }

  Vec3 get_vec3(const std::string& section, const std::string& key,
                const Vec3& fallback) const {
    const auto v = lookup(section, key);
    if (!v) return fallback;
    const auto parts = split_ws(*v);
    if (parts.size() != 3) {
      throw ParseError("config [" + section + "] " + key +
                       ": expected three numbers, got '" + *v + "'");
    }
    return Vec3(to_double(parts[0], section, key), to_double(parts[1], section, key),
                to_double(parts[2], section, key));
  }

  std::vector<std::string> get_all(const std::string& section,
                                   const std::string& key) const {
    std::vector<std::string> out;
    const auto it = entries_.find(section);
    if (it == entries_.end()) return out;
    for (const auto& [k, v] : it->second) {
      if (k == key) out.push_back(v);
    }
    return out;
  }

  static std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t");
    return s.substr(begin, end - begin + 1);
  }

  static double to_double(const std::string& v, const std::string& section,
                          const std::string& key) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') {
      throw ParseError("config [" + section + "] " + key + ": not a number: '" + v +
                       "'");
    }
    return x;
  }

  std::optional<std::string> lookup(const std::string& section,
                                    const std::string& key) const {
    const auto it = entries_.find(section);
    if (it == entries_.end()) return std::nullopt;
    std::optional<std::string> found;
    for (const auto& [k, v] : it->second) {
      if (k == key) found = v;  // last one wins
    }
    return found;
  }

  std::map<std::string, std::vector<std::pair<std::string, std::string>>> entries_;
};

// ---------------------------------------------------------------------------
// Section bindings
// ---------------------------------------------------------------------------

inline ScenarioConfig scenario_from_ini(const Ini& ini) {
  ScenarioConfig cfg;
  cfg.duration = ini.get_double("scenario", "duration", cfg.duration);
  cfg.kind = trajectory_kind_from_string(
      ini.get_string("scenario", "kind", to_string(cfg.kind)));
  cfg.seed = ini.get_u64("scenario", "seed", cfg.seed);
  cfg.start_position = ini.get_vec3("scenario", "start_position", cfg.start_position);
  cfg.velocity = ini.get_vec3("scenario", "velocity", cfg.velocity);
  cfg.circle_radius = ini.get_double("scenario", "circle_radius", cfg.circle_radius);
  cfg.circle_period = ini.get_double("scenario", "circle_period", cfg.circle_period);
  cfg.spline_peak_accel =
      ini.get_double("scenario", "spline_peak_accel", cfg.spline_peak_accel);
  cfg.spline_yaw_amplitude =
      ini.get_double("scenario", "spline_yaw_amplitude", cfg.spline_yaw_amplitude);

  cfg.imu_rate = ini.get_double("imu", "rate", cfg.imu_rate);
  cfg.accel_noise_density =
      ini.get_double("imu", "accel_noise_density", cfg.accel_noise_density);
  cfg.gyro_noise_density =
      ini.get_double("imu", "gyro_noise_density", cfg.gyro_noise_density);
  cfg.accel_bias_walk = ini.get_double("imu", "accel_bias_walk", cfg.accel_bias_walk);
  cfg.gyro_bias_walk = ini.get_double("imu", "gyro_bias_walk", cfg.gyro_bias_walk);
  cfg.accel_bias = ini.get_vec3("imu", "accel_bias", cfg.accel_bias);
  cfg.gyro_bias = ini.get_vec3("imu", "gyro_bias", cfg.gyro_bias);

  cfg.observation_rate = ini.get_double("observations", "rate", cfg.observation_rate);
  cfg.observation_pos_noise =
      ini.get_double("observations", "pos_noise", cfg.observation_pos_noise);
  cfg.observation_rot_noise =
      ini.get_double("observations", "rot_noise", cfg.observation_rot_noise);
  const std::string mode = ini.get_string("observations", "blackout_mode", "missing");
  if (mode == "missing") {
    cfg.blackout_mode = BlackoutMode::kMissing;
  } else if (mode == "corrupted") {
    cfg.blackout_mode = BlackoutMode::kCorrupted;
  } else {
    throw ParseError("config [observations] blackout_mode: unknown mode '" + mode + "'");
  }
  cfg.corrupted_noise_scale = ini.get_double("observations", "corrupted_noise_scale",
                                             cfg.corrupted_noise_scale);
  for (const auto& spec : ini.get_all("observations", "blackout")) {
    const auto parts = Ini::split_ws(spec);
    if (parts.size() != 2) {
      throw ParseError("config [observations] blackout: expected 'start end', got '" +
                       spec + "'");
    }
    cfg.blackouts.push_back({std::stod(parts[0]), std::stod(parts[1])});
  }
  cfg.validate();
  return cfg;
}

inline NetworkConfig network_from_ini(const Ini& ini) {
  NetworkConfig cfg;
  cfg.window_length = ini.get_int("network", "window_length", cfg.window_length);
  cfg.conv_kernel = ini.get_int("network", "conv_kernel", cfg.conv_kernel);
  cfg.conv_stride = ini.get_int("network", "conv_stride", cfg.conv_stride);
  cfg.conv_channels = ini.get_int("network", "conv_channels", cfg.conv_channels);
  cfg.fc1_dim = ini.get_int("network", "fc1_dim", cfg.fc1_dim);
  cfg.fc2_dim = ini.get_int("network", "fc2_dim", cfg.fc2_dim);
  cfg.vel_hidden_dim = ini.get_int("network", "vel_hidden_dim", cfg.vel_hidden_dim);
  cfg.logvar_hidden_dim =
      ini.get_int("network", "logvar_hidden_dim", cfg.logvar_hidden_dim);
  cfg.dropout_rate = ini.get_double("network", "dropout_rate", cfg.dropout_rate);
  cfg.logvar_min = ini.get_double("network", "logvar_min", cfg.logvar_min);
  cfg.logvar_max = ini.get_double("network", "logvar_max", cfg.logvar_max);
  cfg.dt_out = ini.get_double("network", "dt_out", cfg.dt_out);
  cfg.leaky_slope = ini.get_double("network", "leaky_slope", cfg.leaky_slope);
  cfg.validate();
  return cfg;
}

// stage lines: stage = <epochs> <alpha> <lambda_smooth> <beta> <gamma>
inline StageSchedule schedule_from_ini(const Ini& ini) {
  StageSchedule sched;
  const Vec3 lambda_reg =
      ini.get_vec3("training", "lambda_reg", Vec3::Constant(1e-3));
  for (const auto& line : ini.get_all("training", "stage")) {
    const auto parts = Ini::split_ws(line);
    if (parts.size() != 5) {
      throw ParseError(
          "config [training] stage: expected 'epochs alpha lambda_smooth beta "
          "gamma', got '" +
          line + "'");
    }
    StageSchedule::Stage stage;
    stage.epochs = std::stoi(parts[0]);
    stage.weights.alpha = std::stod(parts[1]);
    stage.weights.lambda_smooth = std::stod(parts[2]);
    stage.weights.beta = std::stod(parts[3]);
    stage.weights.gamma = std::stod(parts[4]);
    stage.weights.lambda_reg = lambda_reg;
    sched.stages.push_back(stage);
  }
  if (sched.stages.empty()) {
    sched = StageSchedule::two_phase_default();
    for (auto& stage : sched.stages) stage.weights.lambda_reg = lambda_reg;
  }
  sched.validate();
  return sched;
}

struct TrainRunConfig {
  NetworkConfig network;
  StageSchedule schedule;
  TrainOptions options;
  double window_stride = 0.5;  // seconds between training windows
};

inline TrainRunConfig train_run_from_ini(const Ini& ini) {
  TrainRunConfig cfg;
  cfg.network = network_from_ini(ini);
  cfg.schedule = schedule_from_ini(ini);
  cfg.options.batch_size = ini.get_int("training", "batch_size", 64);
  cfg.options.val_fraction = ini.get_double("training", "val_fraction", 0.1);
  cfg.window_stride = ini.get_double("training", "window_stride", 0.5);
  return cfg;
}

inline FusionConfig fusion_from_ini(const Ini& ini) {
  FusionConfig cfg;
  cfg.keyframe_interval =
      ini.get_double("fusion", "keyframe_interval", cfg.keyframe_interval);
  cfg.window_size = ini.get_int("fusion", "window_size", cfg.window_size);
  cfg.obs_pos_sigma = ini.get_double("fusion", "obs_pos_sigma", cfg.obs_pos_sigma);
  cfg.obs_rot_sigma = ini.get_double("fusion", "obs_rot_sigma", cfg.obs_rot_sigma);
  cfg.obs_time_tol = ini.get_double("fusion", "obs_time_tol", cfg.obs_time_tol);
  cfg.nn_time_tol = ini.get_double("fusion", "nn_time_tol", cfg.nn_time_tol);
  cfg.imu_noise.accel_noise_density = ini.get_double(
      "fusion", "accel_noise_density", cfg.imu_noise.accel_noise_density);
  cfg.imu_noise.gyro_noise_density = ini.get_double(
      "fusion", "gyro_noise_density", cfg.imu_noise.gyro_noise_density);
  cfg.omega_accel_diag = ini.get_vec3("fusion", "omega_accel", cfg.omega_accel_diag);
  cfg.use_smoothness = ini.get_bool("fusion", "use_smoothness", cfg.use_smoothness);

  cfg.init_pos_sigma = ini.get_double("fusion", "init_pos_sigma", cfg.init_pos_sigma);
  cfg.init_rot_sigma = ini.get_double("fusion", "init_rot_sigma", cfg.init_rot_sigma);
  cfg.init_vel_sigma = ini.get_double("fusion", "init_vel_sigma", cfg.init_vel_sigma);
  cfg.init_bias_a_sigma =
      ini.get_double("fusion", "init_bias_a_sigma", cfg.init_bias_a_sigma);
  cfg.init_bias_g_sigma =
      ini.get_double("fusion", "init_bias_g_sigma", cfg.init_bias_g_sigma);
  cfg.slide_pos_sigma = ini.get_double("fusion", "slide_pos_sigma", cfg.slide_pos_sigma);
  cfg.slide_rot_sigma = ini.get_double("fusion", "slide_rot_sigma", cfg.slide_rot_sigma);
  cfg.slide_vel_sigma = ini.get_double("fusion", "slide_vel_sigma", cfg.slide_vel_sigma);
  cfg.slide_bias_a_sigma =
      ini.get_double("fusion", "slide_bias_a_sigma", cfg.slide_bias_a_sigma);
  cfg.slide_bias_g_sigma =
      ini.get_double("fusion", "slide_bias_g_sigma", cfg.slide_bias_g_sigma);

  cfg.solver.max_iterations =
      ini.get_int("solver", "max_iterations", cfg.solver.max_iterations);
  cfg.solver.gradient_tol =
      ini.get_double("solver", "gradient_tol", cfg.solver.gradient_tol);
  cfg.solver.cost_rel_tol =
      ini.get_double("solver", "cost_rel_tol", cfg.solver.cost_rel_tol);
  return cfg;
}

// ---------------------------------------------------------------------------
// Resolved-config snapshots (full effective values, reproducible byte-wise)
// ---------------------------------------------------------------------------

inline std::string scenario_to_ini(const ScenarioConfig& cfg) {
  std::ostringstream os;
  os << "[scenario]\n";
  os << "kind = " << to_string(cfg.kind) << "\n";
  os << "duration = " << csv::fmt(cfg.duration) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "start_position = " << csv::fmt(cfg.start_position.x()) << ' '
     << csv::fmt(cfg.start_position.y()) << ' ' << csv::fmt(cfg.start_position.z())
     << "\n";
  os << "velocity = " << csv::fmt(cfg.velocity.x()) << ' ' << csv::fmt(cfg.velocity.y())
     << ' ' << csv::fmt(cfg.velocity.z()) << "\n";
  os << "circle_radius = " << csv::fmt(cfg.circle_radius) << "\n";
  os << "circle_period = " << csv::fmt(cfg.circle_period) << "\n";
  os << "spline_peak_accel = " << csv::fmt(cfg.spline_peak_accel) << "\n";
  os << "spline_yaw_amplitude = " << csv::fmt(cfg.spline_yaw_amplitude) << "\n";
  os << "\n[imu]\n";
  os << "rate = " << csv::fmt(cfg.imu_rate) << "\n";
  os << "accel_noise_density = " << csv::fmt(cfg.accel_noise_density) << "\n";
  os << "gyro_noise_density = " << csv::fmt(cfg.gyro_noise_density) << "\n";
  os << "accel_bias_walk = " << csv::fmt(cfg.accel_bias_walk) << "\n";
  os << "gyro_bias_walk = " << csv::fmt(cfg.gyro_bias_walk) << "\n";
  os << "accel_bias = " << csv::fmt(cfg.accel_bias.x()) << ' '
     << csv::fmt(cfg.accel_bias.y()) << ' ' << csv::fmt(cfg.accel_bias.z()) << "\n";
  os << "gyro_bias = " << csv::fmt(cfg.gyro_bias.x()) << ' '
     << csv::fmt(cfg.gyro_bias.y()) << ' ' << csv::fmt(cfg.gyro_bias.z()) << "\n";
  os << "\n[observations]\n";
  os << "rate = " << csv::fmt(cfg.observation_rate) << "\n";
  os << "pos_noise = " << csv::fmt(cfg.observation_pos_noise) << "\n";
  os << "rot_noise = " << csv::fmt(cfg.observation_rot_noise) << "\n";
  os << "blackout_mode = "
     << (cfg.blackout_mode == BlackoutMode::kMissing ? "missing" : "corrupted")
     << "\n";
  os << "corrupted_noise_scale = " << csv::fmt(cfg.corrupted_noise_scale) << "\n";
  for (const auto& b : cfg.blackouts) {
    os << "blackout = " << csv::fmt(b.start) << ' ' << csv::fmt(b.end) << "\n";
  }
  return os.str();
}

inline std::string network_to_ini(const NetworkConfig& cfg) {
  std::ostringstream os;
  os << "[network]\n";
  os << "window_length = " << cfg.window_length << "\n";
  os << "conv_kernel = " << cfg.conv_kernel << "\n";
  os << "conv_stride = " << cfg.conv_stride << "\n";
  os << "conv_channels = " << cfg.conv_channels << "\n";
  os << "fc1_dim = " << cfg.fc1_dim << "\n";
  os << "fc2_dim = " << cfg.fc2_dim << "\n";
  os << "vel_hidden_dim = " << cfg.vel_hidden_dim << "\n";
  os << "logvar_hidden_dim = " << cfg.logvar_hidden_dim << "\n";
  os << "dropout_rate = " << csv::fmt(cfg.dropout_rate) << "\n";
  os << "logvar_min = " << csv::fmt(cfg.logvar_min) << "\n";
  os << "logvar_max = " << csv::fmt(cfg.logvar_max) << "\n";
  os << "dt_out = " << csv::fmt(cfg.dt_out) << "\n";
  os << "leaky_slope = " << csv::fmt(cfg.leaky_slope) << "\n";
  return os.str();
}

inline std::string train_run_to_ini(const TrainRunConfig& cfg) {
  std::ostringstream os;
  os << network_to_ini(cfg.network);
  os << "\n[training]\n";
  os << "batch_size = " << cfg.options.batch_size << "\n";
  os << "val_fraction = " << csv::fmt(cfg.options.val_fraction) << "\n";
  os << "window_stride = " << csv::fmt(cfg.window_stride) << "\n";
  if (!cfg.schedule.stages.empty()) {
    const auto& lr = cfg.schedule.stages.front().weights.lambda_reg;
    os << "lambda_reg = " << csv::fmt(lr.x()) << ' ' << csv::fmt(lr.y()) << ' '
       << csv::fmt(lr.z()) << "\n";
  }
  for (const auto& s : cfg.schedule.stages) {
    os << "stage = " << s.epochs << ' ' << csv::fmt(s.weights.alpha) << ' '
       << csv::fmt(s.weights.lambda_smooth) << ' ' << csv::fmt(s.weights.beta) << ' '
       << csv::fmt(s.weights.gamma) << "\n";
  }
  return os.str();
}

inline std::string fusion_to_ini(const FusionConfig& cfg) {
  std::ostringstream os;
  os << "[fusion]\n";
  os << "keyframe_interval = " << csv::fmt(cfg.keyframe_interval) << "\n";
  os << "window_size = " << cfg.window_size << "\n";
  os << "obs_pos_sigma = " << csv::fmt(cfg.obs_pos_sigma) << "\n";
  os << "obs_rot_sigma = " << csv::fmt(cfg.obs_rot_sigma) << "\n";
  os << "obs_time_tol = " << csv::fmt(cfg.obs_time_tol) << "\n";
  os << "nn_time_tol = " << csv::fmt(cfg.nn_time_tol) << "\n";
  os << "accel_noise_density = " << csv::fmt(cfg.imu_noise.accel_noise_density)
     << "\n";
  os << "gyro_noise_density = " << csv::fmt(cfg.imu_noise.gyro_noise_density) << "\n";
  os << "omega_accel = " << csv::fmt(cfg.omega_accel_diag.x()) << ' '
     << csv::fmt(cfg.omega_accel_diag.y()) << ' ' << csv::fmt(cfg.omega_accel_diag.z())
     << "\n";
  os << "use_smoothness = " << (cfg.use_smoothness ? "true" : "false") << "\n";
  os << "init_pos_sigma = " << csv::fmt(cfg.init_pos_sigma) << "\n";
  os << "init_rot_sigma = " << csv::fmt(cfg.init_rot_sigma) << "\n";
  os << "init_vel_sigma = " << csv::fmt(cfg.init_vel_sigma) << "\n";
  os << "init_bias_a_sigma = " << csv::fmt(cfg.init_bias_a_sigma) << "\n";
  os << "init_bias_g_sigma = " << csv::fmt(cfg.init_bias_g_sigma) << "\n";
  os << "slide_pos_sigma = " << csv::fmt(cfg.slide_pos_sigma) << "\n";
  os << "slide_rot_sigma = " << csv::fmt(cfg.slide_rot_sigma) << "\n";
  os << "slide_vel_sigma = " << csv::fmt(cfg.slide_vel_sigma) << "\n";
  os << "slide_bias_a_sigma = " << csv::fmt(cfg.slide_bias_a_sigma) << "\n";
  os << "slide_bias_g_sigma = " << csv::fmt(cfg.slide_bias_g_sigma) << "\n";
  os << "\n[solver]\n";
  os << "max_iterations = " << cfg.solver.max_iterations << "\n";
  os << "gradient_tol = " << csv::fmt(cfg.solver.gradient_tol) << "\n";
  os << "cost_rel_tol = " << csv::fmt(cfg.solver.cost_rel_tol) << "\n";
  return os.str();
}

}  // namespace idnav
