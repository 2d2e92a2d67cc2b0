#include <catch2/catch_amalgamated.hpp>

#include "idnav/training.hpp"
#include "support/helpers.hpp"

using namespace idnav;
using test::small_config;
using test::random_window;

namespace {

VelocityProfile constant_profile(int rows, const Vec3& v, double dt_out) {
  VelocityProfile p;
  p.dt_out = dt_out;
  p.v = Eigen::MatrixXd::Zero(rows, 3);
  p.v.rowwise() = v.transpose();
  return p;
}

}  // namespace

TEST_CASE("loss_base closed forms", "[training]") {
  const VelocityProfile p = constant_profile(500, Vec3(1, 2, 3), 0.002);
  const Vec3 d = p.integrate_displacement();

  REQUIRE(loss_base(p, d, d, 0.0) == 0.0);
  REQUIRE(loss_base(p, d, d, 5e-5) == 0.0);  // constant profile has no smoothness cost

  const Vec3 d_gt = d - Vec3(1.0, -2.0, 0.5);
  REQUIRE(loss_base(p, d, d_gt, 0.0) == Catch::Approx(3.5).epsilon(1e-15));
}

TEST_CASE("loss_base matches direct summation on a ramp profile", "[training]") {
  const int rows = 500;
  const double dt = 0.002;
  VelocityProfile p;
  p.dt_out = dt;
  p.v.resize(rows, 3);
  for (int t = 0; t < rows; ++t) {
    p.v.row(t) = Eigen::RowVector3d(0.004 * t, -0.002 * t, 0.001 * t);
  }
  const Vec3 d_pred = p.integrate_displacement();
  const Vec3 d_gt(0.3, -0.1, 0.2);
  const double lambda = 5e-5;

  // independent brute-force oracle over per-step increments s[t] = v[t]*dt
  double expect = std::abs(d_pred.x() - d_gt.x()) + std::abs(d_pred.y() - d_gt.y()) +
                  std::abs(d_pred.z() - d_gt.z());
  double smooth = 0.0;
  for (int t = 1; t < rows; ++t) {
    const Eigen::RowVector3d s_t = p.v.row(t) * dt;
    const Eigen::RowVector3d s_p = p.v.row(t - 1) * dt;
    smooth += ((s_t - s_p) / dt).squaredNorm();
  }
  expect += lambda * smooth;

  REQUIRE(loss_base(p, d_pred, d_gt, lambda) == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss_nll closed forms", "[training]") {
  const Vec3 zero = Vec3::Zero();
  const double at_zero = loss_nll(zero, zero, zero);  // unit variance
  REQUIRE(at_zero == Catch::Approx(1.5 * std::log(2.0 * M_PI)).margin(1e-12));

  const double with_unit_error = loss_nll(Vec3(1, 0, 0), zero, zero);
  REQUIRE(with_unit_error == Catch::Approx(at_zero + 0.5).margin(1e-12));
}

TEST_CASE("nll is minimized at sigma^2 equal to squared error", "[training]") {
  const Vec3 d_pred(0.7, -0.3, 0.1);
  const Vec3 d_gt = Vec3::Zero();
  // golden-section search per axis over log-variance
  for (int k = 0; k < 3; ++k) {
    double lo = -12.0, hi = 6.0;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    const auto value = [&](double lv) {
      Vec3 log_var = Vec3::Zero();
      log_var[k] = lv;
      Vec3 pred = Vec3::Zero();
      pred[k] = d_pred[k];
      return loss_nll(pred, d_gt, log_var);
    };
    double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    while (hi - lo > 1e-10) {
      if (value(a) < value(b)) {
        hi = b;
        b = a;
        a = hi - gr * (hi - lo);
      } else {
        lo = a;
        a = b;
        b = lo + gr * (hi - lo);
      }
    }
    const double best = 0.5 * (lo + hi);
    const double expect = std::log(d_pred[k] * d_pred[k]);
    REQUIRE(best == Catch::Approx(expect).margin(1e-6));
  }
}

TEST_CASE("loss_reg arithmetic and gradient", "[training]") {
  REQUIRE(loss_reg(Vec3::Zero(), Vec3::Ones()) == 0.0);
  REQUIRE(loss_reg(Vec3(1, -1, 2), Vec3::Ones()) == Catch::Approx(6.0).epsilon(1e-15));

  // analytic derivative 2*lambda_k*log_var_k against central differences
  const Vec3 log_var(0.4, -1.2, 2.1);
  const Vec3 lambda(1e-3, 2e-3, 5e-4);
  for (int k = 0; k < 3; ++k) {
    const double h = 1e-6;
    Vec3 up = log_var, dn = log_var;
    up[k] += h;
    dn[k] -= h;
    const double fd = (loss_reg(up, lambda) - loss_reg(dn, lambda)) / (2 * h);
    REQUIRE(std::abs(fd - 2.0 * lambda[k] * log_var[k]) < 1e-10);
  }
}

TEST_CASE("loss_total weighting", "[training]") {
  LossWeights w;
  w.alpha = 1.0;
  w.beta = 0.1;
  w.gamma = 8.0;
  REQUIRE(loss_total(2.0, 3.0, 0.5, w) == Catch::Approx(6.3).epsilon(1e-15));
  REQUIRE(loss_total(0.0, 0.0, 0.0, w) == 0.0);

  LossWeights stage1;
  stage1.alpha = 1.0;
  stage1.beta = 0.0;
  stage1.gamma = 0.0;
  REQUIRE(loss_total(2.0, 3.0, 0.5, stage1) == 2.0);
}

TEST_CASE("stage-1 weights give exactly zero log-variance gradients", "[training]") {
  NetworkConfig cfg = small_config();
  cfg.dropout_rate = 0.0;
  Rng rng(17);
  const NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  const auto res = forward(params, window, cfg, true, rng);

  LossWeights stage1;
  stage1.alpha = 1.0;
  stage1.beta = 0.0;
  stage1.gamma = 0.0;
  stage1.lambda_smooth = 5e-5;
  OutputGradients grads;
  loss_with_gradients(res.profile, res.prediction.d, Vec3(0.3, 0, 0),
                      res.prediction.log_var, stage1, &grads);
  REQUIRE(grads.g_logvar.isZero());

  const Eigen::VectorXd g = backward(res.tape, params, grads);
  for (const char* name : {"lv_h_w", "lv_h_b", "lv_o_w", "lv_o_b"}) {
    const auto& s = params.layout.slice(name);
    REQUIRE(g.segment(s.offset, s.size()).isZero());
  }
}

TEST_CASE("loss gradients match finite differences through the network",
          "[training]") {
  NetworkConfig cfg = small_config();
  cfg.dropout_rate = 0.0;
  Rng rng(19);
  NetworkParameters params = init_parameters(cfg, rng);
  const ImuWindow window = random_window(rng, cfg.window_length, 0.025);
  const Vec3 d_gt(0.2, -0.1, 0.05);

  LossWeights w;
  w.alpha = 1.0;
  w.beta = 0.1;
  w.gamma = 8.0;
  w.lambda_smooth = 5e-5;

  const auto total = [&]() {
    Rng fw(0);
    const auto res = forward(params, window, cfg, false, fw);
    return loss_with_gradients(res.profile, res.prediction.d, d_gt,
                               res.prediction.log_var, w, nullptr)
        .total;
  };

  Rng fw(0);
  const auto res = forward(params, window, cfg, true, fw);
  OutputGradients out_grads;
  loss_with_gradients(res.profile, res.prediction.d, d_gt,
                      res.prediction.log_var, w, &out_grads);
  const Eigen::VectorXd analytic = backward(res.tape, params, out_grads);

  Rng probe_rng(5);
  const auto probes = test::probe_indices(params.layout, 200, probe_rng);
  double max_rel = 0.0;
  for (const Eigen::Index idx : probes) {
    const double fd = test::central_difference(params, idx, 1e-5, total);
    max_rel = std::max(max_rel, test::relative_error(analytic[idx], fd));
  }
  REQUIRE(max_rel < 1e-4);
}

TEST_CASE("adamw zero gradient leaves parameters unchanged", "[training]") {
  Eigen::VectorXd params = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  const Eigen::VectorXd before = params;
  OptimizerState state = OptimizerState::for_size(5);
  state.weight_decay = 0.0;
  REQUIRE(adamw_step(params, Eigen::VectorXd::Zero(5), state));
  REQUIRE(params == before);
}

TEST_CASE("adamw first step approximates -lr", "[training]") {
  Eigen::VectorXd params(1);
  params[0] = 1.0;
  OptimizerState state = OptimizerState::for_size(1);
  state.weight_decay = 0.0;
  state.lr = 0.002;
  Eigen::VectorXd grad(1);
  grad[0] = 1.0;
  REQUIRE(adamw_step(params, grad, state));
  REQUIRE(params[0] == Catch::Approx(1.0 - 0.002).margin(1e-6));
}

TEST_CASE("adamw decoupled decay shrinks parameters multiplicatively",
          "[training]") {
  Eigen::VectorXd params(1);
  params[0] = 2.0;
  OptimizerState state = OptimizerState::for_size(1);
  state.lr = 0.002;
  state.weight_decay = 1e-2;
  double expect = 2.0;
  for (int i = 0; i < 10; ++i) {
    REQUIRE(adamw_step(params, Eigen::VectorXd::Zero(1), state));
    expect *= (1.0 - 0.002 * 1e-2);
  }
  REQUIRE(params[0] == Catch::Approx(expect).epsilon(1e-14));
}

TEST_CASE("adamw rejects non-finite gradients", "[training]") {
  Eigen::VectorXd params(2);
  params << 1.0, 2.0;
  const Eigen::VectorXd before = params;
  OptimizerState state = OptimizerState::for_size(2);
  Eigen::VectorXd grad(2);
  grad << 1.0, std::numeric_limits<double>::quiet_NaN();
  REQUIRE_FALSE(adamw_step(params, grad, state));
  REQUIRE(params == before);
  REQUIRE(state.step == 0);
}

TEST_CASE("plateau scheduler semantics", "[training]") {
  OptimizerState state = OptimizerState::for_size(1);
  state.lr = 0.002;

  SECTION("strictly decreasing metric never reduces") {
    for (int i = 0; i < 40; ++i) scheduler_step(state, 1.0 / (i + 1));
    REQUIRE(state.lr == 0.002);
  }

  SECTION("11 identical metrics reduce exactly once") {
    for (int i = 0; i < 11; ++i) scheduler_step(state, 1.0);
    REQUIRE(state.lr == Catch::Approx(0.001).epsilon(1e-15));
    REQUIRE(state.plateau_count == 0);
  }

  SECTION("improvement at call 10 resets the counter") {
    scheduler_step(state, 1.0);
    for (int i = 0; i < 8; ++i) scheduler_step(state, 1.0);  // 8 flat calls
    REQUIRE(state.plateau_count == 8);
    scheduler_step(state, 0.5);  // improvement on the 10th call
    REQUIRE(state.plateau_count == 0);
    REQUIRE(state.lr == 0.002);
  }
}

TEST_CASE("make_samples labels windows from ground truth", "[training]") {
  NetworkConfig cfg = small_config();
  const double dt = 1.0 / cfg.window_length;
  const double duration = 5.0;
  std::vector<ImuSample> imu;
  for (double t = 0.0; t < duration - 0.5 * dt; t += dt) {
    imu.push_back({t, Vec3(0, 0, 9.81), Vec3::Zero()});
  }

  SECTION("stationary ground truth gives zero labels") {
    Trajectory gt;
    for (double t = 0.0; t <= duration + 1e-9; t += 0.1) {
      gt.append(t, Vec3(1, 2, 3));
    }
    const auto ds = make_samples(imu, gt, cfg, 0.5);
    REQUIRE(ds.samples.size() > 0);
    for (const auto& s : ds.samples) REQUIRE(s.d_gt.isZero(1e-12));
  }

  SECTION("constant velocity gives the velocity times one second") {
    Trajectory gt;
    for (double t = 0.0; t <= duration + 1e-9; t += 0.1) {
      gt.append(t, Vec3(t, 0, 0));
    }
    const auto ds = make_samples(imu, gt, cfg, 1.0);
    REQUIRE(ds.samples.size() >= 4);
    for (const auto& s : ds.samples) {
      REQUIRE((s.d_gt - Vec3(1, 0, 0)).norm() < 1e-9);
    }
  }

  SECTION("sinusoidal ground truth matches the analytic difference") {
    Trajectory gt;
    const double step = 1e-3;  // 1 kHz ground truth
    for (double t = 0.0; t <= duration + 1e-9; t += step) {
      gt.append(t, Vec3(std::sin(t), std::cos(2 * t), 0.5 * t));
    }
    const auto ds = make_samples(imu, gt, cfg, 0.5);
    REQUIRE(ds.samples.size() > 3);
    for (const auto& s : ds.samples) {
      const double t0 = s.window.start_time();
      const double t1 = s.window.end_time();
      const Vec3 expect(std::sin(t1) - std::sin(t0),
                        std::cos(2 * t1) - std::cos(2 * t0), 0.5 * (t1 - t0));
      REQUIRE((s.d_gt - expect).norm() < 1e-6);
    }
  }

  SECTION("windows without coverage are skipped and counted") {
    Trajectory gt;
    for (double t = 0.0; t <= 2.0 + 1e-9; t += 0.1) {
      gt.append(t, Vec3::Zero());  // covers only [0, 2] of a 5 s stream
    }
    const auto ds = make_samples(imu, gt, cfg, 1.0);
    REQUIRE(ds.skipped > 0);
  }
}

namespace {

std::vector<TrainingSample> tiny_dataset(const NetworkConfig& cfg, int n,
                                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingSample> ds;
  const double dt = 1.0 / cfg.window_length;
  for (int i = 0; i < n; ++i) {
    ds.push_back({random_window(rng, cfg.window_length, dt, i * 2.0),
                  Vec3(0.5, -0.2, 0.1)});
  }
  return ds;
}

}  // namespace

TEST_CASE("train runs one epoch on a single sample", "[training]") {
  NetworkConfig cfg = small_config();
  const auto ds = tiny_dataset(cfg, 1, 1);
  StageSchedule sched;
  sched.stages = {{1, LossWeights{}}};
  TrainOptions opts;
  opts.batch_size = 4;
  const auto result = train(ds, sched, cfg, 99, opts);
  REQUIRE(result.log.size() == 1);
  REQUIRE_FALSE(result.diverged);
  REQUIRE(std::isfinite(result.log.front().train.total));
}

TEST_CASE("train is deterministic for a fixed seed", "[training][slow]") {
  NetworkConfig cfg = small_config();
  const auto ds = tiny_dataset(cfg, 12, 2);
  StageSchedule sched;
  StageSchedule::Stage s1;
  s1.epochs = 3;
  s1.weights = {1.0, 0.0, 0.0, 5e-5, Vec3::Constant(1e-3)};
  StageSchedule::Stage s2;
  s2.epochs = 2;
  s2.weights = {1.0, 0.1, 8.0, 5e-5, Vec3::Constant(1e-3)};
  sched.stages = {s1, s2};

  TrainOptions opts;
  opts.batch_size = 4;
  const auto a = train(ds, sched, cfg, 7, opts);
  const auto b = train(ds, sched, cfg, 7, opts);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    REQUIRE(a.log[i].train.total == b.log[i].train.total);
    REQUIRE(a.log[i].val.total == b.log[i].val.total);
    REQUIRE(a.log[i].lr == b.log[i].lr);
  }
  REQUIRE(a.params.values == b.params.values);
  REQUIRE(a.log.front().stage == 1);
  REQUIRE(a.log.back().stage == 2);
}

TEST_CASE("training fits a constant-displacement dataset", "[training][slow]") {
  NetworkConfig cfg = small_config();
  cfg.dropout_rate = 0.05;
  const auto ds = tiny_dataset(cfg, 24, 3);
  StageSchedule sched;
  StageSchedule::Stage s1;
  s1.epochs = 50;
  s1.weights = {1.0, 0.0, 0.0, 5e-5, Vec3::Constant(1e-3)};
  sched.stages = {s1};

  TrainOptions opts;
  opts.batch_size = 8;
  const auto result = train(ds, sched, cfg, 11, opts);
  REQUIRE_FALSE(result.diverged);
  const double first = result.log.front().val.base;
  const double last = result.log.back().val.base;
  REQUIRE(last <= 0.1 * first);  // >= 90% reduction
}
