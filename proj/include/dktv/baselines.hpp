#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dktv/dktv.hpp"
#include "dktv/koopman_regression.hpp"
#include "dktv/observable_net.hpp"

namespace dktv {

// Per-window linear least squares on raw states: [A_lin, B_lin] = Xbar [X; U]^+.
// No lifting and no accumulation across windows.
struct TvdmdModel {
  Eigen::MatrixXd A_lin;  // n x n
  Eigen::MatrixXd B_lin;  // n x m
  int window = 0;
};

inline TvdmdModel tvdmd_fit(const DataBatch& batch) {
  const int n = batch.state_dim(), m = batch.input_dim();
  if (batch.beta() < n + m) {
    throw std::invalid_argument("tvdmd_fit: batch size below n+m");
  }
  const RankReport rep = check_rank(batch.X, batch.U);
  if (!rep.satisfied) {
    throw RankError("tvdmd_fit: state data is rank deficient (rank " +
                        std::to_string(rep.rank_chi) + " of " + std::to_string(rep.required_chi) +
                        ")",
                    rep);
  }
  Eigen::MatrixXd chi(n + m, batch.beta());
  if (m > 0) {
    chi << batch.X, batch.U;
  } else {
    chi = batch.X;
  }
  const Eigen::MatrixXd ab = solve_min_norm(chi, batch.X_bar);
  return TvdmdModel{ab.leftCols(n), ab.rightCols(m), batch.beta()};
}

inline Eigen::VectorXd tvdmd_predict(const TvdmdModel& model, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& u) {
  Eigen::VectorXd out = model.A_lin * x;
  if (model.B_lin.cols() > 0) out.noalias() += model.B_lin * u;
  return out;
}

// Anchored rollout across a window, mirroring the lifted model's evaluation
// protocol so the two methods are compared on identical terms.
inline Eigen::MatrixXd tvdmd_reconstruct(const TvdmdModel& model, const DataBatch& batch) {
  Eigen::MatrixXd traj(batch.state_dim(), batch.beta() + 1);
  traj.col(0) = batch.X.col(0);
  const Eigen::VectorXd empty(0);
  for (int k = 0; k < batch.beta(); ++k) {
    const Eigen::VectorXd u = model.B_lin.cols() > 0 ? Eigen::VectorXd(batch.U.col(k)) : empty;
    traj.col(k + 1) = tvdmd_predict(model, traj.col(k), u);
  }
  return traj;
}

// One-step predictor network mapping (x, u) directly to the successor state.
struct SingleDnnModel {
  ObservableNet net;  // (n+m) -> n
};

inline SingleDnnModel make_single_dnn(const std::vector<LayerSpec>& layers, std::uint64_t seed) {
  return SingleDnnModel{ObservableNet::random_init(layers, seed)};
}

inline Eigen::VectorXd single_dnn_predict(const SingleDnnModel& model, const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& u) {
  Eigen::VectorXd in(x.size() + u.size());
  in << x, u;
  return model.net.forward(in);
}

inline Eigen::MatrixXd single_dnn_reconstruct(const SingleDnnModel& model, const DataBatch& batch) {
  Eigen::MatrixXd traj(batch.state_dim(), batch.beta() + 1);
  traj.col(0) = batch.X.col(0);
  const Eigen::VectorXd empty(0);
  for (int k = 0; k < batch.beta(); ++k) {
    const Eigen::VectorXd u = batch.input_dim() > 0 ? Eigen::VectorXd(batch.U.col(k)) : empty;
    traj.col(k + 1) = single_dnn_predict(model, traj.col(k), u);
  }
  return traj;
}

struct DnnTrainResult {
  std::vector<double> loss_trace;
  bool diverged = false;
};

// Mean squared one-step prediction error over the batch.
inline double single_dnn_loss(const SingleDnnModel& model, const DataBatch& batch) {
  Eigen::MatrixXd in(batch.state_dim() + batch.input_dim(), batch.beta());
  if (batch.input_dim() > 0) {
    in << batch.X, batch.U;
  } else {
    in = batch.X;
  }
  const Eigen::MatrixXd pred = model.net.forward_batch(in);
  return (pred - batch.X_bar).squaredNorm() / static_cast<double>(batch.beta());
}

inline DnnTrainResult single_dnn_train(SingleDnnModel& model, AdamState& adam,
                                       const DataBatch& batch, int epochs) {
  DnnTrainResult out;
  Eigen::MatrixXd in(batch.state_dim() + batch.input_dim(), batch.beta());
  if (batch.input_dim() > 0) {
    in << batch.X, batch.U;
  } else {
    in = batch.X;
  }
  const double beta = static_cast<double>(batch.beta());
  for (int e = 0; e < epochs; ++e) {
    const Eigen::MatrixXd pred = model.net.forward_batch(in);
    const Eigen::MatrixXd resid = pred - batch.X_bar;
    const double loss = resid.squaredNorm() / beta;
    if (!std::isfinite(loss)) {
      out.diverged = true;
      return out;
    }
    out.loss_trace.push_back(loss);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.net.param_count());
    model.net.accumulate_gradient(in, (2.0 / beta) * resid, grad);
    Eigen::VectorXd params = model.net.params();
    adam_step(adam, params, grad);
    model.net.set_params(params);
  }
  return out;
}

}  // namespace dktv
