#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "idnav/core.hpp"
#include "idnav/network.hpp"

namespace idnav {

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.0;
  double gamma = 0.0;
  double lambda_smooth = 5e-5;
  Vec3 lambda_reg = Vec3::Constant(1e-3);

  void validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0 || lambda_smooth < 0.0 ||
        (lambda_reg.array() < 0.0).any()) {
      throw std::invalid_argument("LossWeights: weights must be non-negative");
    }
  }
};

struct TrainingSample {
  ImuWindow window;
  Vec3 d_gt = Vec3::Zero();
};

struct StageSchedule {
  struct Stage {
    int epochs = 0;
    LossWeights weights;
  };
  std::vector<Stage> stages;

  int total_epochs() const {
    int n = 0;
    for (const auto& s : stages) n += s.epochs;
    return n;
  }

  void validate() const {
    if (total_epochs() <= 0) {
      throw std::invalid_argument("StageSchedule: total epochs must be positive");
    }
    for (const auto& s : stages) s.weights.validate();
  }

  // Warm-up on displacement only, then enable uncertainty terms.
  static StageSchedule two_phase_default() {
    StageSchedule sched;
    Stage s1;
    s1.epochs = 100;
    s1.weights = {1.0, 0.0, 0.0, 5e-5, Vec3::Constant(1e-3)};
    Stage s2;
    s2.epochs = 200;
    s2.weights = {1.0, 0.1, 8.0, 5e-5, Vec3::Constant(1e-3)};
    sched.stages = {s1, s2};
    return sched;
  }
};

// L1 displacement error plus velocity smoothness. The smoothness sum runs over
// per-step displacement increments s[t] = v[t]*dt, so (s[t]-s[t-1])/dt reduces
// to the velocity difference v[t]-v[t-1].
inline double loss_base(const VelocityProfile& profile, const Vec3& d_pred,
                        const Vec3& d_gt, double lambda_smooth) {
  if (profile.v.rows() < 2) {
    throw std::invalid_argument("loss_base: profile needs at least two rows");
  }
  double smooth = 0.0;
  for (Eigen::Index t = 1; t < profile.v.rows(); ++t) {
    smooth += (profile.v.row(t) - profile.v.row(t - 1)).squaredNorm();
  }
  return (d_pred - d_gt).lpNorm<1>() + lambda_smooth * smooth;
}

// Gaussian negative log-likelihood with per-axis variance.
inline double loss_nll(const Vec3& d_pred, const Vec3& d_gt, const Vec3& log_var) {
  double sum = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double err = d_gt[k] - d_pred[k];
    sum += log_var[k] + err * err * std::exp(-log_var[k]) + std::log(2.0 * M_PI);
  }
  return 0.5 * sum;
}

inline double loss_reg(const Vec3& log_var, const Vec3& lambda_reg) {
  return (lambda_reg.array() * log_var.array().square()).sum();
}

struct LossTerms {
  double base = 0.0;
  double reg = 0.0;
  double nll = 0.0;
  double total = 0.0;
};

inline double loss_total(double base, double reg, double nll,
                         const LossWeights& w) {
  return w.alpha * base + w.beta * reg + w.gamma * nll;
}

// Full loss evaluation plus gradients with respect to the network outputs,
// ready to feed into backward().
inline LossTerms loss_with_gradients(const VelocityProfile& profile,
                                     const Vec3& d_pred, const Vec3& d_gt,
                                     const Vec3& log_var, const LossWeights& w,
                                     OutputGradients* grads) {
  LossTerms terms;
  terms.base = loss_base(profile, d_pred, d_gt, w.lambda_smooth);
  terms.reg = loss_reg(log_var, w.lambda_reg);
  terms.nll = loss_nll(d_pred, d_gt, log_var);
  terms.total = loss_total(terms.base, terms.reg, terms.nll, w);
  if (grads == nullptr) return terms;

  const Eigen::Index rows = profile.v.rows();
  grads->g_profile = Eigen::MatrixXd::Zero(rows, 3);
  for (Eigen::Index t = 1; t < rows; ++t) {
    const Eigen::RowVector3d dv = profile.v.row(t) - profile.v.row(t - 1);
    grads->g_profile.row(t) += 2.0 * w.alpha * w.lambda_smooth * dv;
    grads->g_profile.row(t - 1) -= 2.0 * w.alpha * w.lambda_smooth * dv;
  }

  for (int k = 0; k < 3; ++k) {
    const double err = d_pred[k] - d_gt[k];
    const double l1_grad = err > 0.0 ? 1.0 : (err < 0.0 ? -1.0 : 0.0);
    const double inv_var = std::exp(-log_var[k]);
    grads->g_displacement[k] = w.alpha * l1_grad + w.gamma * err * inv_var;
    grads->g_logvar[k] = w.beta * 2.0 * w.lambda_reg[k] * log_var[k] +
                         w.gamma * 0.5 * (1.0 - err * err * inv_var);
  }
  return terms;
}

// ---------------------------------------------------------------------------
// AdamW with a reduce-on-plateau learning-rate schedule
// ---------------------------------------------------------------------------

struct OptimizerState {
  Eigen::VectorXd m;  // first moment
  Eigen::VectorXd v;  // second moment
  long step = 0;
  double lr = 0.002;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // plateau scheduler
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  double best_metric = std::numeric_limits<double>::infinity();
  int plateau_count = 0;

  static OptimizerState for_size(Eigen::Index n) {
    OptimizerState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    return s;
  }
};

// Decoupled weight decay: parameters shrink by lr*wd independently of the
// adaptive moment update. Returns false (state untouched) on non-finite
// gradients.
inline bool adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                       OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adamw_step: size mismatch");
  }
  if (!grads.allFinite()) return false;

  state.step += 1;
  params *= (1.0 - state.lr * state.weight_decay);
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.lr * (state.m.array() / bc1) /
                    ((state.v.array() / bc2).sqrt() + state.eps);
  return true;
}

// Halve the learning rate when the metric has not improved for
// plateau_patience consecutive calls.
inline void scheduler_step(OptimizerState& state, double metric) {
  if (!std::isfinite(metric)) {
    throw std::invalid_argument("scheduler_step: metric must be finite");
  }
  if (metric < state.best_metric) {
    state.best_metric = metric;
    state.plateau_count = 0;
    return;
  }
  state.plateau_count += 1;
  if (state.plateau_count >= state.plateau_patience) {
    state.lr *= state.plateau_factor;
    state.plateau_count = 0;
  }
}

// ---------------------------------------------------------------------------
// Dataset windowing
// ---------------------------------------------------------------------------

struct WindowedDataset {
  std::vector<TrainingSample> samples;
  int skipped = 0;  // windows dropped for missing ground-truth coverage
};

// Cuts one-second windows from an IMU stream at the given stride and labels
// each with the interpolated ground-truth displacement over the window.
inline WindowedDataset make_samples(const std::vector<ImuSample>& imu,
                                    const Trajectory& gt,
                                    const NetworkConfig& cfg, double stride_s) {
  cfg.validate();
  if (imu.size() < static_cast<std::size_t>(cfg.window_length)) {
    throw std::invalid_argument("make_samples: stream shorter than one window");
  }
  const double dt_in = (imu.back().t - imu.front().t) / (imu.size() - 1);
  const int stride_n =
      std::max(1, static_cast<int>(std::llround(stride_s / dt_in)));

  WindowedDataset out;
  for (std::size_t i = 0; i + cfg.window_length <= imu.size();
       i += static_cast<std::size_t>(stride_n)) {
    std::vector<ImuSample> block(imu.begin() + i,
                                 imu.begin() + i + cfg.window_length);
    ImuWindow window(std::move(block), dt_in);
    if (!gt.covers(window.start_time()) || !gt.covers(window.end_time())) {
      out.skipped += 1;
      continue;
    }
    const Vec3 d_gt =
        gt.position_at(window.end_time()) - gt.position_at(window.start_time());
    out.samples.push_back({std::move(window), d_gt});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;  // 1-based, cumulative across stages
  int stage = 0;  // 1-based
  double lr = 0.0;
  LossTerms train;
  LossTerms val;
};

struct TrainOptions {
  int batch_size = 64;
  double val_fraction = 0.1;
  // called after each stage with (1-based stage index, current parameters)
  std::function<void(int, const NetworkParameters&)> on_stage_end;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  NetworkParameters params;       // final parameters
  NetworkParameters best_params;  // best validation total loss
  int best_epoch = 0;
  std::vector<EpochRecord> log;
  bool diverged = false;
};

namespace detail {

inline LossTerms average_terms(const LossTerms& acc, int n) {
  if (n == 0) return {};
  return {acc.base / n, acc.reg / n, acc.nll / n, acc.total / n};
}

}  // namespace detail

inline TrainResult train(const std::vector<TrainingSample>& dataset,
                         const StageSchedule& schedule, const NetworkConfig& cfg,
                         std::uint64_t seed, const TrainOptions& opts = {}) {
  cfg.validate();
  schedule.validate();
  if (dataset.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }

  Rng rng(seed);
  Rng dropout_rng = rng.fork(1);

  // deterministic shuffled split
  std::vector<std::size_t> indices(dataset.size());
  std::iota(indices.begin(), indices.end(), 0);
  rng.shuffle(indices);
  std::size_t n_val = static_cast<std::size_t>(
      std::llround(opts.val_fraction * static_cast<double>(dataset.size())));
  if (n_val == 0 && dataset.size() > 1) n_val = 1;
  std::vector<std::size_t> val_idx(indices.end() - n_val, indices.end());
  std::vector<std::size_t> train_idx(indices.begin(), indices.end() - n_val);
  if (train_idx.empty()) {
    train_idx = val_idx;  // degenerate single-sample dataset
  }

  TrainResult result;
  result.params = init_parameters(cfg, rng);
  result.best_params = result.params;
  OptimizerState opt = OptimizerState::for_size(result.params.values.size());

  double best_val = std::numeric_limits<double>::infinity();
  int epoch_counter = 0;

  const auto evaluate_split =
      [&](const std::vector<std::size_t>& idx, const LossWeights& w) {
        LossTerms acc;
        Rng eval_rng(0);  // unused: eval mode draws nothing
        for (const std::size_t i : idx) {
          const auto res =
              forward(result.params, dataset[i].window, cfg, false, eval_rng);
          const LossTerms t = loss_with_gradients(
              res.profile, res.prediction.d, dataset[i].d_gt,
              res.prediction.log_var, w, nullptr);
          acc.base += t.base;
          acc.reg += t.reg;
          acc.nll += t.nll;
          acc.total += t.total;
        }
        return detail::average_terms(acc, static_cast<int>(idx.size()));
      };

  for (std::size_t stage_i = 0; stage_i < schedule.stages.size(); ++stage_i) {
    const auto& stage = schedule.stages[stage_i];
    for (int e = 0; e < stage.epochs; ++e) {
      epoch_counter += 1;
      rng.shuffle(train_idx);

      LossTerms train_acc;
      int trained = 0;
      for (std::size_t start = 0; start < train_idx.size();
           start += static_cast<std::size_t>(opts.batch_size)) {
        const std::size_t end =
            std::min(train_idx.size(), start + static_cast<std::size_t>(opts.batch_size));
        Eigen::VectorXd grad_sum =
            Eigen::VectorXd::Zero(result.params.values.size());
        bool batch_ok = true;
        for (std::size_t bi = start; bi < end; ++bi) {
          const TrainingSample& sample = dataset[train_idx[bi]];
          const auto res =
              forward(result.params, sample.window, cfg, true, dropout_rng);
          OutputGradients out_grads;
          const LossTerms t = loss_with_gradients(
              res.profile, res.prediction.d, sample.d_gt,
              res.prediction.log_var, stage.weights, &out_grads);
          if (!std::isfinite(t.total)) {
            batch_ok = false;
            break;
          }
          grad_sum += backward(res.tape, result.params, out_grads);
          train_acc.base += t.base;
          train_acc.reg += t.reg;
          train_acc.nll += t.nll;
          train_acc.total += t.total;
          trained += 1;
        }
        if (!batch_ok) {
          result.diverged = true;
          break;
        }
        grad_sum /= static_cast<double>(end - start);
        if (!adamw_step(result.params.values, grad_sum, opt)) {
          result.diverged = true;
          break;
        }
      }
      if (result.diverged) {
        result.params = result.best_params;  // last good checkpoint
        return result;
      }

      EpochRecord rec;
      rec.epoch = epoch_counter;
      rec.stage = static_cast<int>(stage_i) + 1;
      rec.lr = opt.lr;
      rec.train = detail::average_terms(train_acc, trained);
      rec.val = evaluate_split(val_idx, stage.weights);
      scheduler_step(opt, rec.val.total);
      if (rec.val.total < best_val) {
        best_val = rec.val.total;
        result.best_params = result.params;
        result.best_epoch = epoch_counter;
      }
      result.log.push_back(rec);
      if (opts.on_epoch) opts.on_epoch(rec);
    }
    if (opts.on_stage_end) {
      opts.on_stage_end(static_cast<int>(stage_i) + 1, result.params);
    }
  }
  return result;
}

}  // namespace idnav
