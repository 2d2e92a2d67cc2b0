#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "idnav/checkpoint.hpp"
#include "idnav/network.hpp"
#include "support/helpers.hpp"

using namespace idnav;
using test::small_config;
using test::random_window;

TEST_CASE("init_parameters is deterministic and covers the layout", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng a(9), b(9);
  const NetworkParameters pa = init_parameters(cfg, a);
  const NetworkParameters pb = init_parameters(cfg, b);
  REQUIRE(pa.values == pb.values);

  // layout is a bijection: slices tile the vector exactly
  int expected_offset = 0;
  for (const auto& s : pa.layout.slices()) {
    REQUIRE(s.offset == expected_offset);
    expected_offset += s.size();
  }
  REQUIRE(expected_offset == pa.layout.total_size());
  REQUIRE(pa.values.size() == pa.layout.total_size());
}

TEST_CASE("init_parameters matches the fan-in scale", "[network]") {
  NetworkConfig cfg = small_config();
  Rng rng(123);
  const NetworkParameters params = init_parameters(cfg, rng);

  const auto check_std = [&](const char* name) {
    const auto& s = params.layout.slice(name);
    const auto seg = params.values.segment(s.offset, s.size());
    const double mean = seg.mean();
    const double stddev = std::sqrt((seg.array() - mean).square().mean());
    // uniform(-b, b) with b = 1/sqrt(fan_in) has std b/sqrt(3)
    const double target = 1.0 / std::sqrt(3.0 * s.fan_in);
    REQUIRE(stddev > 0.8 * target);
    REQUIRE(stddev < 1.2 * target);
  };
  check_std("conv_f_w");
  check_std("fc1_w");

  REQUIRE(params.vector("fc1_b").isZero());
  REQUIRE(params.vector("ln1_gamma").isConstant(1.0));
}

TEST_CASE("forward with zero parameters yields zero outputs", "[network]") {
  const NetworkConfig cfg = small_config();
  NetworkParameters params;
  params.layout = ParameterLayout::for_config(cfg);
  params.values = Eigen::VectorXd::Zero(params.layout.total_size());

  Rng rng(1);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  const auto res = forward(params, window, cfg, false, rng);
  REQUIRE(res.prediction.d.isZero());
  REQUIRE(res.prediction.log_var.isZero());  // zero bias is inside the clamp
  REQUIRE(res.profile.v.isZero());
}

TEST_CASE("forward eval mode is a pure function", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng rng(2);
  const NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);

  Rng r1(77), r2(99);  // different rngs must not matter in eval mode
  const auto a = forward(params, window, cfg, false, r1);
  const auto b = forward(params, window, cfg, false, r2);
  REQUIRE(a.prediction.d == b.prediction.d);
  REQUIRE(a.prediction.log_var == b.prediction.log_var);
  REQUIRE(a.profile.v == b.profile.v);
}

TEST_CASE("displacement equals integrated velocity profile", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng rng(3);
  const NetworkParameters params = init_parameters(cfg, rng);
  for (int i = 0; i < 5; ++i) {
    const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
    const auto res = forward(params, window, cfg, false, rng);
    Vec3 direct = Vec3::Zero();
    for (Eigen::Index t = 0; t < res.profile.v.rows(); ++t) {
      direct += res.profile.v.row(t).transpose() * res.profile.dt_out;
    }
    REQUIRE((direct - res.prediction.d).norm() <
            1e-12 * std::max(1.0, direct.norm()));
  }
}

TEST_CASE("shape invariant for the paper-scale window", "[network]") {
  NetworkConfig cfg;  // defaults: T = 1000
  cfg.fc1_dim = 8;
  cfg.fc2_dim = 8;
  cfg.vel_hidden_dim = 4;
  cfg.logvar_hidden_dim = 4;
  REQUIRE(cfg.conv_out_length() == 500);
  REQUIRE(cfg.profile_rows() == 500);

  Rng rng(4);
  const NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, 1000, 0.001);
  const auto res = forward(params, window, cfg, false, rng);
  REQUIRE(res.profile.v.rows() == 500);
  REQUIRE(res.profile.v.cols() == 3);
  REQUIRE(res.prediction.log_var.size() == 3);
}

TEST_CASE("log-variance clamp holds for extreme parameters", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng rng(5);
  NetworkParameters params = init_parameters(cfg, rng);
  params.values *= 1e4;  // drive pre-clamp outputs far outside the bounds

  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  const auto res = forward(params, window, cfg, false, rng);
  for (int k = 0; k < 3; ++k) {
    REQUIRE(res.prediction.log_var[k] >= cfg.logvar_min);
    REQUIRE(res.prediction.log_var[k] <= cfg.logvar_max);
    REQUIRE(std::exp(res.prediction.log_var[k]) > 0.0);
  }
}

TEST_CASE("forward rejects wrong window length", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng rng(6);
  const NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length / 2, 0.025);
  REQUIRE_THROWS_AS(forward(params, window, cfg, false, rng),
                    std::invalid_argument);
}

TEST_CASE("backward of zero output gradients is zero", "[network]") {
  NetworkConfig cfg = small_config();
  Rng rng(7);
  const NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  const auto res = forward(params, window, cfg, true, rng);

  OutputGradients grads;
  grads.g_profile = Eigen::MatrixXd::Zero(cfg.profile_rows(), 3);
  const Eigen::VectorXd g = backward(res.tape, params, grads);
  REQUIRE(g.isZero());
}

TEST_CASE("backward matches central finite differences", "[network]") {
  NetworkConfig cfg = small_config();
  cfg.dropout_rate = 0.0;  // keep the function smooth for differencing
  Rng rng(8);
  NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);

  // scalar probe: d_x plus fixed random combinations of the other outputs
  Rng mix_rng(21);
  const Eigen::MatrixXd profile_mix =
      Eigen::MatrixXd::NullaryExpr(cfg.profile_rows(), 3,
                                   [&](Eigen::Index, Eigen::Index) {
                                     return 0.1 * mix_rng.normal();
                                   });
  const auto scalar_output = [&]() {
    Rng fw_rng(0);
    const auto res = forward(params, window, cfg, false, fw_rng);
    return res.prediction.d.x() +
           (profile_mix.cwiseProduct(res.profile.v)).sum() +
           0.3 * res.prediction.log_var.sum();
  };

  Rng fw_rng(0);
  const auto res = forward(params, window, cfg, true, fw_rng);
  OutputGradients out_grads;
  out_grads.g_profile = profile_mix;
  out_grads.g_displacement = Vec3(1.0, 0.0, 0.0);
  out_grads.g_logvar = Vec3::Constant(0.3);
  const Eigen::VectorXd analytic = backward(res.tape, params, out_grads);

  Rng probe_rng(31);
  const auto probes = test::probe_indices(params.layout, 200, probe_rng);
  double max_rel = 0.0;
  for (const Eigen::Index idx : probes) {
    const double fd = test::central_difference(params, idx, 1e-5, scalar_output);
    max_rel = std::max(max_rel, test::relative_error(analytic[idx], fd));
  }
  REQUIRE(max_rel < 1e-4);
}

TEST_CASE("backward reuses recorded dropout masks deterministically", "[network]") {
  NetworkConfig cfg = small_config();
  cfg.dropout_rate = 0.3;
  Rng rng(9);
  const NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  const auto res = forward(params, window, cfg, true, rng);

  OutputGradients grads;
  grads.g_profile = Eigen::MatrixXd::Ones(cfg.profile_rows(), 3);
  grads.g_displacement = Vec3(1, 2, 3);
  const Eigen::VectorXd g1 = backward(res.tape, params, grads);
  const Eigen::VectorXd g2 = backward(res.tape, params, grads);
  REQUIRE(g1 == g2);
}

TEST_CASE("backward rejects mismatched parameters", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng rng(10);
  NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  const auto res = forward(params, window, cfg, true, rng);

  NetworkParameters other = params;
  other.values[0] += 1.0;
  OutputGradients grads;
  grads.g_profile = Eigen::MatrixXd::Zero(cfg.profile_rows(), 3);
  REQUIRE_THROWS_AS(backward(res.tape, other, grads), std::invalid_argument);
}

TEST_CASE("backward rejects eval-mode tapes", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng rng(11);
  const NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  const auto res = forward(params, window, cfg, false, rng);

  OutputGradients grads;
  grads.g_profile = Eigen::MatrixXd::Zero(cfg.profile_rows(), 3);
  REQUIRE_THROWS_AS(backward(res.tape, params, grads), std::invalid_argument);
}

TEST_CASE("forward flags non-finite activations with layer identity", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng rng(12);
  NetworkParameters params = init_parameters(cfg, rng);
  params.values[params.layout.slice("fc1_w").offset] =
      std::numeric_limits<double>::infinity();
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  REQUIRE_THROWS_WITH(forward(params, window, cfg, false, rng),
                      Catch::Matchers::ContainsSubstring("fc1"));
}

TEST_CASE("checkpoint round trip is bit exact", "[network]") {
  const NetworkConfig cfg = small_config();
  Rng rng(13);
  const NetworkParameters params = init_parameters(cfg, rng);

  const auto path = std::filesystem::temp_directory_path() / "idnav_ckpt_test.bin";
  checkpoint::save(path.string(), cfg, params);
  const auto loaded = checkpoint::load(path.string());
  std::filesystem::remove(path);

  REQUIRE(loaded.cfg.window_length == cfg.window_length);
  REQUIRE(loaded.cfg.dropout_rate == cfg.dropout_rate);
  REQUIRE(loaded.cfg.logvar_min == cfg.logvar_min);
  REQUIRE(loaded.params.values == params.values);
}
