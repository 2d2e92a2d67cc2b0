// idnav command line: simulate -> train -> predict -> fuse -> evaluate.
// Every subcommand writes its resolved configuration and seed next to its
// outputs so a run can be reproduced byte for byte.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "idnav/checkpoint.hpp"
#include "idnav/config.hpp"
#include "idnav/csv.hpp"
#include "idnav/eval.hpp"
#include "idnav/network.hpp"
#include "idnav/pipeline.hpp"
#include "idnav/simulator.hpp"
#include "idnav/training.hpp"

namespace fs = std::filesystem;
using namespace idnav;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void write_resolved(const fs::path& out_dir, const std::string& config_text,
                    std::uint64_t seed) {
  std::ostringstream os;
  os << "[run]\nseed = " << seed << "\n\n" << config_text;
  write_text(out_dir / "resolved_config.ini", os.str());
}

int cmd_simulate(const std::string& scenario_path, const std::string& out,
                 std::int64_t seed_override) {
  ScenarioConfig cfg = scenario_from_ini(Ini::parse_file(scenario_path));
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);

  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  const auto truth = generate_truth(cfg);
  const auto imu = synthesize_imu(*truth, cfg);
  const auto obs = synthesize_observations(*truth, cfg);
  const auto gt = sample_trajectory(*truth, cfg.imu_rate, cfg.duration);

  csv::write_imu((out_dir / "imu.csv").string(), imu);
  csv::write_trajectory((out_dir / "ground_truth.csv").string(), gt);
  csv::write_poses((out_dir / "observations.csv").string(), obs);
  write_resolved(out_dir, scenario_to_ini(cfg), cfg.seed);

  std::cout << "simulate: " << imu.size() << " imu samples, " << obs.size()
            << " observations, " << gt.size() << " ground-truth poses -> " << out
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out, std::uint64_t seed) {
  TrainRunConfig cfg = config_path.empty()
                           ? TrainRunConfig{}
                           : train_run_from_ini(Ini::parse_file(config_path));

  const fs::path data(data_dir);
  const auto imu = csv::read_imu((data / "imu.csv").string());
  const auto gt = csv::read_trajectory((data / "ground_truth.csv").string());

  const auto dataset = make_samples(imu, gt, cfg.network, cfg.window_stride);
  if (dataset.skipped > 0) {
    std::cout << "train: skipped " << dataset.skipped
              << " windows without ground-truth coverage\n";
  }
  if (dataset.samples.empty()) {
    throw std::runtime_error("train: no usable windows in " + data_dir);
  }

  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  TrainOptions opts = cfg.options;
  opts.on_stage_end = [&](int stage, const NetworkParameters& params) {
    checkpoint::save((out_dir / ("checkpoint_stage" + std::to_string(stage) + ".bin"))
                         .string(),
                     cfg.network, params);
  };
  opts.on_epoch = [](const EpochRecord& r) {
    std::cout << "epoch " << r.epoch << " stage " << r.stage << " lr " << r.lr
              << " train_total " << r.train.total << " val_total " << r.val.total
              << "\n";
  };

  const TrainResult result = train(dataset.samples, cfg.schedule, cfg.network,
                                   seed, opts);
  csv::write_metrics_log((out_dir / "metrics.csv").string(), result.log);
  checkpoint::save((out_dir / "checkpoint_final.bin").string(), cfg.network,
                   result.params);
  checkpoint::save((out_dir / "checkpoint_best.bin").string(), cfg.network,
                   result.best_params);
  write_resolved(out_dir, train_run_to_ini(cfg), seed);

  if (result.diverged) {
    std::cerr << "train: diverged (non-finite loss); last good checkpoint kept at "
              << (out_dir / "checkpoint_best.bin") << "\n";
    throw NumericError("training diverged");
  }
  std::cout << "train: " << dataset.samples.size() << " windows, best epoch "
            << result.best_epoch << " -> " << out << "\n";
  return 0;
}

// Cuts windows at the given rate and runs the network in eval mode.
// Row-count rule: a window starting at t fits iff its final sample index is
// inside the stream, so a stream of N samples yields
// floor((N - T) / round(imu_rate/rate)) + 1 rows.
int cmd_predict(const std::string& checkpoint_path, const std::string& imu_path,
                const std::string& out_path, double rate) {
  const auto loaded = checkpoint::load(checkpoint_path);
  const auto imu = csv::read_imu(imu_path);
  const int t_len = loaded.cfg.window_length;
  if (imu.size() < static_cast<std::size_t>(t_len)) {
    throw std::runtime_error("predict: stream shorter than one window");
  }

  const double dt_in = (imu.back().t - imu.front().t) /
                       static_cast<double>(imu.size() - 1);
  const long stride = std::max<long>(1, std::lround(1.0 / (rate * dt_in)));

  std::vector<DisplacementPrediction> preds;
  Rng unused(0);
  for (std::size_t start = 0; start + t_len <= imu.size();
       start += static_cast<std::size_t>(stride)) {
    std::vector<ImuSample> block(imu.begin() + start, imu.begin() + start + t_len);
    const ImuWindow window(std::move(block), dt_in);
    const auto res = forward(loaded.params, window, loaded.cfg, false, unused);
    preds.push_back(res.prediction);
  }
  if (preds.empty()) {
    throw std::runtime_error("predict: no complete windows");
  }
  if (const fs::path parent = fs::path(out_path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  csv::write_predictions(out_path, preds);
  std::cout << "predict: " << preds.size() << " windows -> " << out_path << "\n";
  return 0;
}

int cmd_fuse(const std::string& data_dir, const std::string& predictions_path,
             const std::string& config_path, const std::string& out, bool no_nn) {
  FusionConfig cfg = config_path.empty()
                         ? FusionConfig{}
                         : fusion_from_ini(Ini::parse_file(config_path));
  cfg.use_nn = !no_nn;

  const fs::path data(data_dir);
  const auto imu = csv::read_imu((data / "imu.csv").string());
  const auto obs = csv::read_poses((data / "observations.csv").string());
  std::vector<DisplacementPrediction> preds;
  if (cfg.use_nn) {
    if (predictions_path.empty()) {
      throw CLI::ValidationError("fuse",
                                 "--predictions is required unless --no-nn is set");
    }
    preds = csv::read_predictions(predictions_path);
  }

  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  const FusionResult result = run_fusion(imu, obs, preds, cfg);
  csv::write_trajectory((out_dir / "trajectory.csv").string(), result.trajectory);
  csv::write_solver_log((out_dir / "solver_log.csv").string(), result.solve_logs);
  write_resolved(out_dir, fusion_to_ini(cfg), 0);

  if (result.nonconverged_windows > 0) {
    std::cerr << "fuse: warning: " << result.nonconverged_windows
              << " window solves did not fully converge\n";
  }
  std::cout << "fuse: " << result.trajectory.size() << " keyframes, "
            << result.nn_factor_count << " nn factors, " << result.pose_factor_count
            << " pose factors -> " << out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& est_path, const std::string& gt_path,
                 const std::string& out, double tol) {
  const Trajectory est = csv::read_trajectory(est_path);
  const Trajectory gt = csv::read_trajectory(gt_path);

  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  const auto assoc = associate(est, gt, tol);
  const MetricReport report = evaluate_trajectories(est, gt, tol);
  csv::write_report((out_dir / "report.txt").string(), report);
  csv::write_ape_series((out_dir / "ape_series.csv").string(), assoc.pairs);
  csv::write_axis_error_series((out_dir / "axis_errors.csv").string(), assoc.pairs);

  std::cout << "evaluate: " << report.sample_count << " pairs, ape_mean "
            << report.ape.mean << " ape_max " << report.ape.max << " -> " << out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned inertial displacement estimation with covariance-weighted "
               "sliding-window fusion"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  std::string sim_scenario, sim_out;
  std::int64_t sim_seed = -1;
  sim->add_option("--scenario", sim_scenario, "scenario config file")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--seed", sim_seed, "override the scenario seed");

  // train
  auto* tr = app.add_subcommand("train", "train the displacement network");
  std::string tr_data, tr_config, tr_out;
  std::uint64_t tr_seed = 1;
  tr->add_option("--data", tr_data, "dataset directory (imu.csv, ground_truth.csv)")
      ->required();
  tr->add_option("--config", tr_config, "network/training config file");
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--seed", tr_seed, "training seed");

  // predict
  auto* pr = app.add_subcommand("predict", "run the network over an IMU stream");
  std::string pr_ckpt, pr_imu, pr_out;
  double pr_rate = 1.0;
  pr->add_option("--checkpoint", pr_ckpt, "parameter checkpoint")->required();
  pr->add_option("--imu", pr_imu, "IMU csv")->required();
  pr->add_option("--out", pr_out, "output predictions csv")->required();
  pr->add_option("--rate", pr_rate, "prediction rate in Hz (default 1)");

  // fuse
  auto* fu = app.add_subcommand("fuse", "sliding-window fusion over a dataset");
  std::string fu_data, fu_preds, fu_config, fu_out;
  bool fu_no_nn = false;
  fu->add_option("--data", fu_data, "dataset directory (imu.csv, observations.csv)")
      ->required();
  fu->add_option("--predictions", fu_preds, "network predictions csv");
  fu->add_option("--config", fu_config, "fusion config file");
  fu->add_option("--out", fu_out, "output directory")->required();
  fu->add_flag("--no-nn", fu_no_nn, "baseline run without network factors");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "trajectory accuracy metrics");
  std::string ev_est, ev_gt, ev_out;
  double ev_tol = 0.02;
  ev->add_option("--est", ev_est, "estimated trajectory csv")->required();
  ev->add_option("--gt", ev_gt, "ground-truth trajectory csv")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--tol", ev_tol, "association tolerance in seconds");

  try {
    app.parse(argc, argv);
    if (sim->parsed()) return cmd_simulate(sim_scenario, sim_out, sim_seed);
    if (tr->parsed()) return cmd_train(tr_data, tr_config, tr_out, tr_seed);
    if (pr->parsed()) return cmd_predict(pr_ckpt, pr_imu, pr_out, pr_rate);
    if (fu->parsed()) return cmd_fuse(fu_data, fu_preds, fu_config, fu_out, fu_no_nn);
    if (ev->parsed()) return cmd_evaluate(ev_est, ev_gt, ev_out, ev_tol);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
