#include <catch2/catch_amalgamated.hpp>

#include "idnav/eval.hpp"

using namespace idnav;

namespace {

Trajectory line_trajectory(double t0, double dt, int n, const Vec3& p0,
                           const Vec3& step) {
  Trajectory traj;
  for (int i = 0; i < n; ++i) {
    traj.append(t0 + i * dt, p0 + i * step);
  }
  return traj;
}

std::vector<PairedPosition> pairs_with_errors(const std::vector<Vec3>& errors) {
  std::vector<PairedPosition> pairs;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    PairedPosition p;
    p.t_est = static_cast<double>(i);
    p.gt = Vec3(1.0 * i, 0, 0);
    p.est = p.gt + errors[i];
    pairs.push_back(p);
  }
  return pairs;
}

}  // namespace

TEST_CASE("associate pairs identical and offset timestamp sets", "[eval]") {
  const auto gt = line_trajectory(0.0, 0.1, 50, Vec3::Zero(), Vec3(0.1, 0, 0));

  SECTION("identical timestamps pair fully") {
    const auto assoc = associate(gt, gt, 0.02);
    REQUIRE(assoc.pairs.size() == 50);
    REQUIRE(assoc.dropped_est == 0);
  }

  SECTION("half-tolerance offset still pairs to nearest") {
    const auto est = line_trajectory(0.01, 0.1, 50, Vec3::Zero(), Vec3(0.1, 0, 0));
    const auto assoc = associate(est, gt, 0.02);
    REQUIRE(assoc.pairs.size() == 50);
  }

  SECTION("double-tolerance offset yields an error") {
    const auto est = line_trajectory(0.04, 0.1, 50, Vec3::Zero(), Vec3(0.1, 0, 0));
    REQUIRE_THROWS_AS(associate(est, gt, 0.02), std::runtime_error);
  }

  SECTION("interpolated lookup evaluates gt at estimate timestamps") {
    const auto est = line_trajectory(0.05, 0.1, 49, Vec3(0.05, 0, 0), Vec3(0.1, 0, 0));
    const auto assoc = associate(est, gt, 0.06, GtLookup::kInterpolate);
    for (const auto& p : assoc.pairs) {
      REQUIRE(p.error().norm() < 1e-12);  // est sits exactly on the gt line
    }
  }
}

TEST_CASE("per-axis errors follow the definitions", "[eval]") {
  SECTION("zero errors give zero metrics") {
    const auto pairs = pairs_with_errors({Vec3::Zero(), Vec3::Zero()});
    const auto axis = per_axis_errors(pairs);
    REQUIRE(axis.mae.isZero());
    REQUIRE(axis.medae.isZero());
  }

  SECTION("x errors {1,2,9}: MAE 4, MedAE 2") {
    const auto pairs =
        pairs_with_errors({Vec3(1, 0, 0), Vec3(-2, 0, 0), Vec3(9, 0, 0)});
    const auto axis = per_axis_errors(pairs);
    REQUIRE(axis.mae.x() == Catch::Approx(4.0).epsilon(1e-15));
    REQUIRE(axis.medae.x() == Catch::Approx(2.0).epsilon(1e-15));
  }

  SECTION("even-length median averages the central pair") {
    const auto pairs = pairs_with_errors({Vec3(1, 0, 0), Vec3(3, 0, 0)});
    REQUIRE(per_axis_errors(pairs).medae.x() == Catch::Approx(2.0).epsilon(1e-15));
  }
}

TEST_CASE("overall errors use the 3D Euclidean distance", "[eval]") {
  SECTION("3-4-5 triangles") {
    const auto pairs = pairs_with_errors(
        {Vec3(3, 4, 0), Vec3(3, 4, 0), Vec3(-3, -4, 0)});
    const auto overall = overall_errors(pairs);
    REQUIRE(overall.mae == Catch::Approx(5.0).epsilon(1e-15));
    REQUIRE(overall.medae == Catch::Approx(5.0).epsilon(1e-15));
  }

  SECTION("single pair") {
    const auto pairs = pairs_with_errors({Vec3(0, 0, 2)});
    const auto overall = overall_errors(pairs);
    REQUIRE(overall.mae == Catch::Approx(2.0).epsilon(1e-15));
    REQUIRE(overall.medae == Catch::Approx(2.0).epsilon(1e-15));
  }

  SECTION("random pairs match an independent summation") {
    Rng rng(1);
    std::vector<Vec3> errors;
    for (int i = 0; i < 257; ++i) errors.push_back(rng.normal3());
    const auto pairs = pairs_with_errors(errors);
    const auto overall = overall_errors(pairs);

    double sum = 0.0;
    for (const auto& e : errors) {
      sum += std::sqrt(e.x() * e.x() + e.y() * e.y() + e.z() * e.z());
    }
    REQUIRE(overall.mae == Catch::Approx(sum / errors.size()).margin(1e-12));
  }
}

TEST_CASE("metrics are invariant to pair ordering", "[eval]") {
  Rng rng(2);
  std::vector<Vec3> errors;
  for (int i = 0; i < 40; ++i) errors.push_back(rng.normal3());
  auto pairs = pairs_with_errors(errors);
  const auto before_axis = per_axis_errors(pairs);
  const auto before_overall = overall_errors(pairs);

  rng.shuffle(pairs);
  const auto after_axis = per_axis_errors(pairs);
  const auto after_overall = overall_errors(pairs);
  REQUIRE((before_axis.mae - after_axis.mae).norm() < 1e-15);
  REQUIRE((before_axis.medae - after_axis.medae).norm() < 1e-15);
  REQUIRE(before_overall.mae == Catch::Approx(after_overall.mae).margin(1e-15));
  REQUIRE(before_overall.medae == after_overall.medae);
}

TEST_CASE("ape over trajectories", "[eval]") {
  const auto gt = line_trajectory(0.0, 0.5, 20, Vec3::Zero(), Vec3(0.5, 0, 0));

  SECTION("perfect estimate: zero APE") {
    const auto stats = ape(gt, gt, 0.01);
    REQUIRE(stats.mean == 0.0);
    REQUIRE(stats.max == 0.0);
  }

  SECTION("a constant shift appears directly") {
    Trajectory est;
    for (const auto& pt : gt.points()) est.append(pt.t, pt.p + Vec3(0, 0, 1));
    const auto stats = ape(est, gt, 0.01);
    REQUIRE(stats.mean == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(stats.max == Catch::Approx(1.0).epsilon(1e-12));
  }

  SECTION("mixed errors: mean and max") {
    Trajectory est, truth;
    const std::vector<double> errs = {1.0, 2.0, 3.0};
    for (int i = 0; i < 3; ++i) {
      truth.append(i * 1.0, Vec3::Zero() + Vec3(i * 1.0, 0, 0));
      est.append(i * 1.0, Vec3(i * 1.0, errs[i], 0));
    }
    const auto stats = ape(est, truth, 0.01);
    REQUIRE(stats.mean == Catch::Approx(2.0).epsilon(1e-12));
    REQUIRE(stats.max == Catch::Approx(3.0).epsilon(1e-12));
  }
}

TEST_CASE("overall MAE equals APE mean on identical pairings", "[eval]") {
  Rng rng(3);
  Trajectory gt, est;
  for (int i = 0; i < 123; ++i) {
    const Vec3 p = rng.normal3();
    gt.append(i * 0.1, p);
    est.append(i * 0.1, p + 0.3 * rng.normal3());
  }
  const auto report = evaluate_trajectories(est, gt, 0.01);
  REQUIRE(report.overall.mae == Catch::Approx(report.ape.mean).margin(1e-12));
}

TEST_CASE("ape shift changes every sample by at most the shift norm", "[eval]") {
  Rng rng(4);
  Trajectory gt, est;
  for (int i = 0; i < 60; ++i) {
    const Vec3 p = rng.normal3();
    gt.append(i * 0.1, p);
    est.append(i * 0.1, p + 0.2 * rng.normal3());
  }
  const Vec3 shift(0.3, -0.4, 0.1);
  Trajectory shifted;
  for (const auto& pt : est.points()) shifted.append(pt.t, pt.p + shift);

  const auto base = associate(est, gt, 0.01).pairs;
  const auto moved = associate(shifted, gt, 0.01).pairs;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double delta =
        std::abs(moved[i].error().norm() - base[i].error().norm());
    REQUIRE(delta <= shift.norm() + 1e-12);
  }
}

TEST_CASE("compare_runs improvement percentages", "[eval]") {
  SECTION("published values reproduce the reported improvement") {
    ApeStats baseline{5.30, 10.73};
    ApeStats ours{1.70, 3.70};
    const auto imp = compare_runs(baseline, ours);
    REQUIRE(imp.mean_percent.has_value());
    // one-decimal rounding as reported
    REQUIRE(std::round(*imp.mean_percent * 10.0) / 10.0 == Catch::Approx(67.9));
    REQUIRE(std::round(*imp.max_percent * 10.0) / 10.0 == Catch::Approx(65.5));
  }

  SECTION("equal runs: zero improvement") {
    ApeStats same{2.0, 4.0};
    const auto imp = compare_runs(same, same);
    REQUIRE(*imp.mean_percent == 0.0);
    REQUIRE(*imp.max_percent == 0.0);
  }

  SECTION("degradation is representable") {
    const auto imp = compare_runs({10.0, 10.0}, {15.0, 12.0});
    REQUIRE(*imp.mean_percent == Catch::Approx(-50.0));
  }

  SECTION("zero baseline reports not-applicable") {
    const auto imp = compare_runs({0.0, 0.0}, {1.0, 1.0});
    REQUIRE_FALSE(imp.mean_percent.has_value());
    REQUIRE_FALSE(imp.max_percent.has_value());
  }
}
