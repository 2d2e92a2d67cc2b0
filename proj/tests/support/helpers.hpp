#pragma once

#include <functional>
#include <vector>

#include "idnav/core.hpp"
#include "idnav/network.hpp"

namespace idnav::test {

// Small network for fast unit tests: one-second windows at 40 Hz.
inline NetworkConfig small_config() {
  NetworkConfig cfg = NetworkConfig::for_rate(40);
  cfg.fc1_dim = 24;
  cfg.fc2_dim = 16;
  cfg.vel_hidden_dim = 12;
  cfg.logvar_hidden_dim = 8;
  cfg.dropout_rate = 0.1;
  return cfg;
}

inline ImuWindow random_window(Rng& rng, int t_len, double dt,
                               double start = 0.0) {
  std::vector<ImuSample> samples;
  samples.reserve(t_len);
  for (int i = 0; i < t_len; ++i) {
    ImuSample s;
    s.t = start + i * dt;
    s.f = Vec3(0, 0, 9.81) + rng.normal3();
    s.w = 0.5 * rng.normal3();
    samples.push_back(s);
  }
  return ImuWindow(std::move(samples), dt);
}

// Central finite difference of a scalar function along one parameter axis.
inline double central_difference(NetworkParameters& params, Eigen::Index idx,
                                 double h,
                                 const std::function<double()>& value) {
  const double saved = params.values[idx];
  params.values[idx] = saved + h;
  const double up = value();
  params.values[idx] = saved - h;
  const double down = value();
  params.values[idx] = saved;
  return (up - down) / (2.0 * h);
}

// Spread n probe indices across every layout slice so each layer is covered.
inline std::vector<Eigen::Index> probe_indices(const ParameterLayout& layout,
                                               int n, Rng& rng) {
  std::vector<Eigen::Index> probes;
  const auto& slices = layout.slices();
  for (int i = 0; i < n; ++i) {
    const auto& s = slices[i % slices.size()];
    probes.push_back(s.offset + rng.uniform_int(0, s.size() - 1));
  }
  return probes;
}

// Central differencing with h=1e-5 carries ~eps*|f|/h of rounding noise, so
// near-zero gradients need an absolute floor in the denominator.
inline double relative_error(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-5});
  return std::abs(got - want) / denom;
}

}  // namespace idnav::test
