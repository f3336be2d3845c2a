#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dktv/koopman_regression.hpp"
#include "dktv/observable_net.hpp"

namespace dktv {

// One data window. X_bar column j is the successor of X column j, and the
// last sample of a batch is the first sample of the next one.
struct DataBatch {
  int tau = 0;
  long k_start = 0;
  Eigen::MatrixXd X;      // n x beta
  Eigen::MatrixXd X_bar;  // n x beta
  Eigen::MatrixXd U;      // m x beta (0 x beta when autonomous)

  int beta() const { return static_cast<int>(X.cols()); }
  int state_dim() const { return static_cast<int>(X.rows()); }
  int input_dim() const { return static_cast<int>(U.rows()); }
};

// Splits a sampled stream (states: n x (S), inputs: m x (S-1) or m x S) into
// overlapping batches. Batch tau covers sample indices [k_tau, k_tau+beta_tau]
// with k_{tau+1} = k_tau + beta_tau; a trailing window with too few samples is
// withheld.
inline std::vector<DataBatch> partition_stream(const Eigen::MatrixXd& states,
                                               const Eigen::MatrixXd& inputs,
                                               const std::vector<int>& beta_schedule) {
  if (beta_schedule.empty()) throw std::invalid_argument("partition_stream: empty beta schedule");
  const long transitions = static_cast<long>(states.cols()) - 1;
  if (inputs.rows() > 0 && inputs.cols() < transitions) {
    throw std::invalid_argument("partition_stream: need an input for every transition");
  }
  if (beta_schedule[0] < 1 || transitions < beta_schedule[0]) {
    throw std::invalid_argument("partition_stream: need at least beta_0 + 1 samples");
  }
  std::vector<DataBatch> batches;
  long k = 0;
  for (size_t tau = 0; tau < beta_schedule.size(); ++tau) {
    const int beta = beta_schedule[tau];
    if (beta < 1) throw std::invalid_argument("partition_stream: beta must be positive");
    if (k + beta > transitions) break;
    DataBatch b;
    b.tau = static_cast<int>(tau);
    b.k_start = k;
    b.X = states.middleCols(k, beta);
    b.X_bar = states.middleCols(k + 1, beta);
    b.U = inputs.rows() > 0 ? Eigen::MatrixXd(inputs.middleCols(k, beta))
                            : Eigen::MatrixXd(0, beta);
    batches.push_back(std::move(b));
    k += beta;
  }
  return batches;
}

inline std::vector<DataBatch> partition_stream(const Eigen::MatrixXd& states,
                                               const Eigen::MatrixXd& inputs, int beta) {
  const long transitions = static_cast<long>(states.cols()) - 1;
  std::vector<int> schedule(static_cast<size_t>(std::max<long>(transitions / beta, 1)), beta);
  return partition_stream(states, inputs, schedule);
}

// Batch label containing sample k under a constant-beta schedule, mapping
// boundary samples to the earlier batch.
inline int batch_index_for_sample(long k, int beta0, int beta) {
  const double v = static_cast<double>(k - beta0) / static_cast<double>(beta);
  const long tau = static_cast<long>(std::ceil(v));
  return static_cast<int>(std::max<long>(tau, 0));
}

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double w = 0.5;          // relative weight of the lifted-dynamics residual block
  double lambda_A = 0.0;   // norm penalty weight on A
  std::uint64_t seed = 1;
  bool relift_history = false;  // rebuild all moments under the current theta (ablation)
  int warm_start_epochs = -1;   // override epoch count for tau >= 2 when >= 0
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double penalty = 0.0;
};

struct DkrSnapshot {
  ObservableNet net;
  KoopmanMatrices matrices;
  int tau = 0;
  std::vector<EpochStats> train_stats;
};

struct InitResult {
  DkrSnapshot snapshot;
  RecursiveCache cache;
};

// Random nonzero theta, matrices from the closed-form fit on batch 0, cache
// seeded with the batch-0 moments.
inline InitResult initialize(const DataBatch& batch0, const std::vector<LayerSpec>& layers,
                             const TrainConfig& config) {
  if (layers.front().input_dim != batch0.state_dim()) {
    throw std::invalid_argument("initialize: network input dim does not match state dim");
  }
  ObservableNet net = ObservableNet::random_init(layers, config.seed);
  const Eigen::MatrixXd g = net.forward_batch(batch0.X);
  const Eigen::MatrixXd g_bar = net.forward_batch(batch0.X_bar);
  const RankReport rep = check_rank(g, batch0.U);
  if (!rep.satisfied) {
    throw RankError(
        "initialize: lifted batch is rank deficient (rank " + std::to_string(rep.rank_chi) +
            " of " + std::to_string(rep.required_chi) +
            "); increase the batch size or reduce the lift dimension r",
        rep);
  }
  InitResult out{DkrSnapshot{std::move(net), fit_batch(g, g_bar, batch0.U, batch0.X), batch0.tau, {}},
                 RecursiveCache::from_batch(g, g_bar, batch0.U, batch0.X)};
  return out;
}

struct StepResult {
  DkrSnapshot snapshot;
  bool diverged = false;
  bool fallback_used = false;
};

// One online round: absorb the new batch into the cache via the recursive
// update, then coordinate-descent training of theta -- each epoch takes one
// Adam step on the batch loss with the matrices frozen, then refits the
// matrices from the cache with only the current batch re-lifted under the new
// theta. On divergence the previous snapshot is returned untouched and the
// caller's cache and optimizer state are left as they were.
inline StepResult step(const DkrSnapshot& snap, RecursiveCache& cache, AdamState& adam,
                       const DataBatch& batch, const TrainConfig& config) {
  if (batch.tau != snap.tau + 1) {
    throw std::invalid_argument("step: expected batch tau " + std::to_string(snap.tau + 1) +
                                ", got " + std::to_string(batch.tau));
  }
  const RecursiveCache base = cache;
  ObservableNet net = snap.net;
  AdamState adam_local = adam;

  RecursiveCache work = base;
  Eigen::MatrixXd g = net.forward_batch(batch.X);
  Eigen::MatrixXd g_bar = net.forward_batch(batch.X_bar);
  RecursiveUpdateResult rr = recursive_update(work, snap.matrices, g, g_bar, batch.U, batch.X);
  KoopmanMatrices mats = std::move(rr.matrices);
  bool fallback = rr.fallback_used;

  std::vector<EpochStats> stats;
  stats.reserve(static_cast<size_t>(config.epochs));
  for (int e = 0; e < config.epochs; ++e) {
    LossGradient lg = loss_gradient(net, batch.X, batch.X_bar, batch.U, mats.A, mats.B, mats.C,
                                    config.w, config.lambda_A);
    if (!std::isfinite(lg.loss)) {
      return StepResult{snap, true, fallback};
    }
    stats.push_back(EpochStats{e, lg.loss, lg.l1, lg.l2, lg.penalty});
    Eigen::VectorXd params = net.params();
    adam_step(adam_local, params, lg.grad);
    net.set_params(params);

    g = net.forward_batch(batch.X);
    g_bar = net.forward_batch(batch.X_bar);
    if (!g.allFinite() || !g_bar.allFinite()) {
      return StepResult{snap, true, fallback};
    }
    work = base;
    try {
      rr = recursive_update(work, snap.matrices, g, g_bar, batch.U, batch.X);
    } catch (const std::runtime_error&) {
      // Refit blew up under the moving parameters: same abort as a NaN loss.
      return StepResult{snap, true, fallback};
    }
    mats = std::move(rr.matrices);
    fallback = fallback || rr.fallback_used;
  }

  cache = std::move(work);
  adam = std::move(adam_local);
  return StepResult{DkrSnapshot{std::move(net), std::move(mats), batch.tau, std::move(stats)},
                    false, fallback};
}

// Single-step prediction through lift, advance, project.
inline Eigen::VectorXd predict_one(const DkrSnapshot& snap, const Eigen::VectorXd& x_prev,
                                   const Eigen::VectorXd& u_prev) {
  Eigen::VectorXd z = snap.matrices.A * snap.net.forward(x_prev);
  if (snap.matrices.B.cols() > 0) z.noalias() += snap.matrices.B * u_prev;
  return snap.matrices.C * z;
}

// Iterated prediction; column 0 is x_init, one more column per input. A
// non-finite state truncates the rollout.
inline Eigen::MatrixXd rollout(const DkrSnapshot& snap, const Eigen::VectorXd& x_init,
                               const Eigen::MatrixXd& u_seq, bool* truncated = nullptr) {
  const Eigen::Index steps = u_seq.cols();
  Eigen::MatrixXd traj(x_init.size(), steps + 1);
  traj.col(0) = x_init;
  if (truncated) *truncated = false;
  const Eigen::VectorXd empty_u(0);
  for (Eigen::Index k = 0; k < steps; ++k) {
    const Eigen::VectorXd u = snap.matrices.B.cols() > 0 ? Eigen::VectorXd(u_seq.col(k)) : empty_u;
    traj.col(k + 1) = predict_one(snap, traj.col(k), u);
    if (!traj.col(k + 1).allFinite()) {
      if (truncated) *truncated = true;
      return traj.leftCols(k + 2);
    }
  }
  return traj;
}

// Anchored reconstruction of a batch: start from the observed first sample and
// roll the model across the window.
inline Eigen::MatrixXd reconstruct_batch(const DkrSnapshot& snap, const DataBatch& batch) {
  Eigen::MatrixXd u = batch.U;
  if (snap.matrices.B.cols() == 0) u = Eigen::MatrixXd(0, batch.beta());
  return rollout(snap, batch.X.col(0), u);
}

struct ReducedSystem {
  Eigen::MatrixXd A_hat;  // n x n
  Eigen::MatrixXd B_hat;  // n x m
};

// State-space form A_hat = C A C^+, B_hat = C B. Requires C of full row rank.
inline ReducedSystem reduced_system(const KoopmanMatrices& k) {
  if (numerical_rank(k.C) < k.C.rows()) {
    throw std::runtime_error("reduced_system: C does not have full row rank");
  }
  return ReducedSystem{k.C * k.A * pseudo_inverse(k.C), k.C * k.B};
}

inline ReducedSystem reduced_system(const DkrSnapshot& snap) { return reduced_system(snap.matrices); }

// Per-batch model history kept for the error-bound accumulations.
struct BatchRecord {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  Eigen::MatrixXd C;
  int beta = 0;
};

// Owns the sequential online state: snapshot, cache, optimizer moments and the
// per-batch model history.
class OnlineDktv {
 public:
  OnlineDktv(const DataBatch& batch0, const std::vector<LayerSpec>& layers, TrainConfig config)
      : OnlineDktv(initialize(batch0, layers, config), batch0, config) {}

  struct AbsorbInfo {
    bool diverged = false;
    bool fallback_used = false;
  };

  AbsorbInfo absorb(const DataBatch& batch) {
    TrainConfig cfg = config_;
    if (cfg.warm_start_epochs >= 0 && batch.tau >= 2) cfg.epochs = cfg.warm_start_epochs;
    AbsorbInfo info;
    if (config_.relift_history) {
      info = absorb_relift(batch, cfg);
    } else {
      StepResult r = step(snap_, cache_, adam_, batch, cfg);
      info.diverged = r.diverged;
      info.fallback_used = r.fallback_used;
      if (!r.diverged) snap_ = std::move(r.snapshot);
    }
    if (!info.diverged) record(batch);
    return info;
  }

  const DkrSnapshot& snapshot() const { return snap_; }
  const RecursiveCache& cache() const { return cache_; }
  const std::vector<BatchRecord>& history() const { return history_; }
  const TrainConfig& config() const { return config_; }

 private:
  OnlineDktv(InitResult init, const DataBatch& batch0, TrainConfig config)
      : config_(config),
        snap_(std::move(init.snapshot)),
        cache_(std::move(init.cache)),
        adam_(AdamState::for_params(snap_.net.param_count(), config.learning_rate,
                                    config.weight_decay)) {
    record(batch0);
  }

  void record(const DataBatch& batch) {
    history_.push_back(BatchRecord{snap_.matrices.A, snap_.matrices.B, snap_.matrices.C,
                                   batch.beta()});
    if (config_.relift_history) stored_.push_back(batch);
  }

  // Ablation path: every refit re-lifts the whole stored stream under the
  // current theta instead of keeping older moments stale.
  AbsorbInfo absorb_relift(const DataBatch& batch, const TrainConfig& cfg) {
    std::vector<DataBatch> all = stored_;
    all.push_back(batch);
    ObservableNet net = snap_.net;
    AdamState adam_local = adam_;
    KoopmanMatrices mats = refit_all(net, all);
    std::vector<EpochStats> stats;
    for (int e = 0; e < cfg.epochs; ++e) {
      LossGradient lg = loss_gradient(net, batch.X, batch.X_bar, batch.U, mats.A, mats.B, mats.C,
                                      cfg.w, cfg.lambda_A);
      if (!std::isfinite(lg.loss)) return AbsorbInfo{true, false};
      stats.push_back(EpochStats{e, lg.loss, lg.l1, lg.l2, lg.penalty});
      Eigen::VectorXd params = net.params();
      adam_step(adam_local, params, lg.grad);
      net.set_params(params);
      try {
        mats = refit_all(net, all);
      } catch (const std::exception&) {
        return AbsorbInfo{true, false};
      }
    }
    adam_ = std::move(adam_local);
    snap_ = DkrSnapshot{std::move(net), std::move(mats), batch.tau, std::move(stats)};
    rebuild_cache(all);
    return AbsorbInfo{false, false};
  }

  KoopmanMatrices refit_all(const ObservableNet& net, const std::vector<DataBatch>& batches) const {
    Eigen::Index total = 0;
    for (const auto& b : batches) total += b.beta();
    const int n = batches.front().state_dim();
    const int m = batches.front().input_dim();
    const int r = net.output_dim();
    Eigen::MatrixXd g(r, total), g_bar(r, total), u(m, total), x(n, total);
    Eigen::Index at = 0;
    for (const auto& b : batches) {
      g.middleCols(at, b.beta()) = net.forward_batch(b.X);
      g_bar.middleCols(at, b.beta()) = net.forward_batch(b.X_bar);
      if (m > 0) u.middleCols(at, b.beta()) = b.U;
      x.middleCols(at, b.beta()) = b.X;
      at += b.beta();
    }
    return fit_batch(g, g_bar, u, x);
  }

  void rebuild_cache(const std::vector<DataBatch>& batches) {
    const auto& net = snap_.net;
    const int r = net.output_dim();
    bool first = true;
    for (const auto& b : batches) {
      const Eigen::MatrixXd g = net.forward_batch(b.X);
      const Eigen::MatrixXd g_bar = net.forward_batch(b.X_bar);
      if (first) {
        cache_ = RecursiveCache::from_batch(g, g_bar, b.U, b.X);
        first = false;
      } else {
        const Eigen::MatrixXd ab = cache_.V_ab * cache_.G_ab_inv;
        KoopmanMatrices cur{ab.leftCols(r), ab.rightCols(b.input_dim()),
                            cache_.V_c * cache_.G_c_inv};
        recursive_update(cache_, cur, g, g_bar, b.U, b.X);
      }
    }
  }

  TrainConfig config_;
  DkrSnapshot snap_;
  RecursiveCache cache_;
  AdamState adam_;
  std::vector<BatchRecord> history_;
  std::vector<DataBatch> stored_;
};

}  // namespace dktv
