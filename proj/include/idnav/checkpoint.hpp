#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "idnav/network.hpp"

namespace idnav {

// Versioned binary container for a NetworkConfig plus its flat parameter
// vector. Round trips are bit exact.
namespace checkpoint {

constexpr char kMagic[8] = {'I', 'D', 'N', 'A', 'V', 'C', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T& value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T value;
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return value;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const auto n = read_pod<std::uint16_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace detail

inline void save(const std::string& path, const NetworkConfig& cfg,
                 const NetworkParameters& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  detail::write_pod(os, kVersion);

  detail::write_pod<std::int32_t>(os, cfg.window_length);
  detail::write_pod<std::int32_t>(os, cfg.conv_kernel);
  detail::write_pod<std::int32_t>(os, cfg.conv_stride);
  detail::write_pod<std::int32_t>(os, cfg.conv_channels);
  detail::write_pod<std::int32_t>(os, cfg.fc1_dim);
  detail::write_pod<std::int32_t>(os, cfg.fc2_dim);
  detail::write_pod<std::int32_t>(os, cfg.vel_hidden_dim);
  detail::write_pod<std::int32_t>(os, cfg.logvar_hidden_dim);
  detail::write_pod<double>(os, cfg.dropout_rate);
  detail::write_pod<double>(os, cfg.logvar_min);
  detail::write_pod<double>(os, cfg.logvar_max);
  detail::write_pod<double>(os, cfg.dt_out);
  detail::write_pod<double>(os, cfg.leaky_slope);
  detail::write_pod<double>(os, cfg.layer_norm_eps);

  const auto& slices = params.layout.slices();
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(slices.size()));
  for (const auto& s : slices) {
    detail::write_string(os, s.name);
    detail::write_pod<std::int64_t>(os, s.offset);
    detail::write_pod<std::int64_t>(os, s.rows);
    detail::write_pod<std::int64_t>(os, s.cols);
  }

  detail::write_pod<std::int64_t>(os, static_cast<std::int64_t>(params.values.size()));
  os.write(reinterpret_cast<const char*>(params.values.data()),
           static_cast<std::streamsize>(params.values.size() * sizeof(double)));
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct Loaded {
  NetworkConfig cfg;
  NetworkParameters params;
};

inline Loaded load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }

  Loaded out;
  out.cfg.window_length = detail::read_pod<std::int32_t>(is);
  out.cfg.conv_kernel = detail::read_pod<std::int32_t>(is);
  out.cfg.conv_stride = detail::read_pod<std::int32_t>(is);
  out.cfg.conv_channels = detail::read_pod<std::int32_t>(is);
  out.cfg.fc1_dim = detail::read_pod<std::int32_t>(is);
  out.cfg.fc2_dim = detail::read_pod<std::int32_t>(is);
  out.cfg.vel_hidden_dim = detail::read_pod<std::int32_t>(is);
  out.cfg.logvar_hidden_dim = detail::read_pod<std::int32_t>(is);
  out.cfg.dropout_rate = detail::read_pod<double>(is);
  out.cfg.logvar_min = detail::read_pod<double>(is);
  out.cfg.logvar_max = detail::read_pod<double>(is);
  out.cfg.dt_out = detail::read_pod<double>(is);
  out.cfg.leaky_slope = detail::read_pod<double>(is);
  out.cfg.layer_norm_eps = detail::read_pod<double>(is);

  out.params.layout = ParameterLayout::for_config(out.cfg);
  const auto n_slices = detail::read_pod<std::uint32_t>(is);
  if (n_slices != out.params.layout.slices().size()) {
    throw std::runtime_error("checkpoint: slice table does not match config");
  }
  for (const auto& expected : out.params.layout.slices()) {
    const std::string name = detail::read_string(is);
    const auto offset = detail::read_pod<std::int64_t>(is);
    const auto rows = detail::read_pod<std::int64_t>(is);
    const auto cols = detail::read_pod<std::int64_t>(is);
    if (name != expected.name || offset != expected.offset ||
        rows != expected.rows || cols != expected.cols) {
      throw std::runtime_error("checkpoint: slice " + name + " does not match config");
    }
  }

  const auto count = detail::read_pod<std::int64_t>(is);
  if (count != out.params.layout.total_size()) {
    throw std::runtime_error("checkpoint: parameter count does not match config");
  }
  out.params.values.resize(count);
  is.read(reinterpret_cast<char*>(out.params.values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated parameter block");
  return out;
}

}  // namespace checkpoint
}  // namespace idnav
