#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "dktv/dktv.hpp"
#include "dktv/linalg.hpp"
#include "dktv/systems.hpp"

namespace dktv::mpc {

struct MpcProblem {
  Eigen::MatrixXd Q;           // n x n, positive definite
  Eigen::MatrixXd R;           // m x m, positive definite
  Eigen::MatrixXd Q_terminal;  // r x r lifted terminal weight; empty selects C^T Q C
  int horizon = 10;
  int beta = 12;  // horizon may not exceed the batch size
  Eigen::VectorXd goal;
  Eigen::VectorXd u_min, u_max;  // per-component box; empty means unconstrained
  Eigen::VectorXd x_min, x_max;  // optional state box, handled as a quadratic penalty
  double state_penalty_weight = 1e4;
  // Singular values of the controller's prediction copy of A are clipped to
  // this value; identified models of marginally stable plants carry weakly
  // excited directions whose gains otherwise blow up over the horizon.
  // Non-positive disables the clip.
  double prediction_spectral_cap = 1.0;
};

inline Eigen::MatrixXd clip_singular_values(const Eigen::MatrixXd& a, double cap) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::VectorXd s = svd.singularValues();
  bool changed = false;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cap) {
      s(i) = cap;
      changed = true;
    }
  }
  if (!changed) return a;
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

inline void validate_problem(const MpcProblem& p, int n, int m) {
  if (p.Q.rows() != n || p.Q.cols() != n) throw std::invalid_argument("mpc: Q must be n x n");
  if (p.R.rows() != m || p.R.cols() != m) throw std::invalid_argument("mpc: R must be m x m");
  if (Eigen::LLT<Eigen::MatrixXd>(p.Q).info() != Eigen::Success) {
    throw std::invalid_argument("mpc: Q must be positive definite");
  }
  if (Eigen::LLT<Eigen::MatrixXd>(p.R).info() != Eigen::Success) {
    throw std::invalid_argument("mpc: R must be positive definite");
  }
  if (p.horizon < 1) throw std::invalid_argument("mpc: horizon must be at least 1");
  if (p.goal.size() != n) throw std::invalid_argument("mpc: goal must have state dimension");
}

// Dense condensed quadratic in the stacked input sequence. Prediction runs in
// goal-shifted lifted coordinates zbar = g(x) - g(x*), so the goal is an exact
// equilibrium of the prediction model: Zbar = Phi zbar0 + Gamma U, with the
// stage cost on the shifted states and R on the inputs.
struct LiftedQp {
  Eigen::MatrixXd H;      // lm x lm, positive definite
  Eigen::VectorXd f;      // lm
  double c = 0.0;         // constant term
  Eigen::MatrixXd Phi;    // lr x r
  Eigen::MatrixXd Gamma;  // lr x lm
  Eigen::VectorXd z0;     // shifted lifted current state
  Eigen::VectorXd z_goal;
  Eigen::MatrixXd C;  // projection, for the state-box penalty
  int l = 0, m = 0, r = 0;
};

inline LiftedQp build_lifted_qp(const DkrSnapshot& snap, const Eigen::VectorXd& x_now,
                                const MpcProblem& problem) {
  if (problem.horizon > problem.beta) {
    throw std::invalid_argument("mpc: horizon exceeds the batch size");
  }
  if (!x_now.allFinite()) throw std::invalid_argument("mpc: non-finite state");
  const auto& k = snap.matrices;
  const int r = k.r(), m = k.m(), l = problem.horizon;
  validate_problem(problem, k.n(), m);

  LiftedQp qp;
  qp.l = l;
  qp.m = m;
  qp.r = r;
  qp.C = k.C;
  qp.z_goal = snap.net.forward(problem.goal);
  qp.z0 = snap.net.forward(x_now) - qp.z_goal;

  const Eigen::MatrixXd a_pred = problem.prediction_spectral_cap > 0.0
                                     ? clip_singular_values(k.A, problem.prediction_spectral_cap)
                                     : k.A;

  const Eigen::MatrixXd q_tilde = k.C.transpose() * problem.Q * k.C;
  const Eigen::MatrixXd q_term =
      problem.Q_terminal.size() > 0 ? problem.Q_terminal : q_tilde;

  qp.Phi = Eigen::MatrixXd::Zero(l * r, r);
  qp.Gamma = Eigen::MatrixXd::Zero(l * r, l * m);
  Eigen::MatrixXd a_pow = Eigen::MatrixXd::Identity(r, r);
  for (int i = 0; i < l; ++i) {
    a_pow = a_pred * a_pow;  // A^{i+1}
    qp.Phi.middleRows(i * r, r) = a_pow;
  }
  for (int i = 1; i <= l; ++i) {
    Eigen::MatrixXd blk = k.B;  // A^{i-1-j} B for j = i-1 down to 0
    for (int j = i - 1; j >= 0; --j) {
      qp.Gamma.block((i - 1) * r, j * m, r, m) = blk;
      blk = a_pred * blk;
    }
  }

  Eigen::MatrixXd q_bar = Eigen::MatrixXd::Zero(l * r, l * r);
  for (int i = 0; i < l - 1; ++i) q_bar.block(i * r, i * r, r, r) = q_tilde;
  q_bar.block((l - 1) * r, (l - 1) * r, r, r) = q_term;
  Eigen::MatrixXd r_bar = Eigen::MatrixXd::Zero(l * m, l * m);
  for (int i = 0; i < l; ++i) r_bar.block(i * m, i * m, m, m) = problem.R;

  const Eigen::VectorXd drift = qp.Phi * qp.z0;
  qp.H = 2.0 * (qp.Gamma.transpose() * q_bar * qp.Gamma + r_bar);
  qp.f = 2.0 * qp.Gamma.transpose() * q_bar * drift;
  qp.c = drift.dot(q_bar * drift) + qp.z0.dot(q_tilde * qp.z0);
  return qp;
}

inline double qp_cost(const LiftedQp& qp, const Eigen::VectorXd& u) {
  return 0.5 * u.dot(qp.H * u) + qp.f.dot(u) + qp.c;
}

struct QpSolution {
  Eigen::VectorXd u_seq;  // stacked, length l*m
  int iterations = 0;
  bool converged = true;
  double cost = 0.0;
};

namespace detail {

inline Eigen::VectorXd clamp_box(const Eigen::VectorXd& u, const MpcProblem& p, int l, int m) {
  if (p.u_min.size() == 0 && p.u_max.size() == 0) return u;
  Eigen::VectorXd out = u;
  for (int i = 0; i < l; ++i) {
    for (int j = 0; j < m; ++j) {
      double v = out(i * m + j);
      if (p.u_min.size() > 0) v = std::max(v, p.u_min(j));
      if (p.u_max.size() > 0) v = std::min(v, p.u_max(j));
      out(i * m + j) = v;
    }
  }
  return out;
}

// Value and gradient of the one-sided quadratic state-box penalty.
inline double state_penalty(const LiftedQp& qp, const MpcProblem& p, const Eigen::VectorXd& u,
                            Eigen::VectorXd* grad) {
  if (p.x_min.size() == 0 && p.x_max.size() == 0) {
    if (grad) grad->setZero();
    return 0.0;
  }
  const Eigen::VectorXd z = qp.Phi * qp.z0 + qp.Gamma * u;
  const int n = static_cast<int>(qp.C.rows());
  double value = 0.0;
  Eigen::VectorXd z_cot = Eigen::VectorXd::Zero(z.size());
  for (int i = 0; i < qp.l; ++i) {
    const Eigen::VectorXd x = qp.C * (z.segment(i * qp.r, qp.r) + qp.z_goal);
    Eigen::VectorXd x_cot = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
      if (p.x_max.size() > 0 && x(j) > p.x_max(j)) {
        const double d = x(j) - p.x_max(j);
        value += d * d;
        x_cot(j) += 2.0 * d;
      }
      if (p.x_min.size() > 0 && x(j) < p.x_min(j)) {
        const double d = p.x_min(j) - x(j);
        value += d * d;
        x_cot(j) -= 2.0 * d;
      }
    }
    z_cot.segment(i * qp.r, qp.r) = qp.C.transpose() * x_cot;
  }
  if (grad) *grad = p.state_penalty_weight * (qp.Gamma.transpose() * z_cot);
  return p.state_penalty_weight * value;
}

}  // namespace detail

// Unconstrained minimizer by direct solve; box constraints by projected
// gradient from that start (cap 200 iterations, stop when the projected
// gradient norm drops below 1e-8). The optional state box enters as a
// quadratic penalty.
inline QpSolution solve_horizon(const LiftedQp& qp, const MpcProblem& problem) {
  QpSolution sol;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(qp.H);
  Eigen::VectorXd u = ldlt.solve(-qp.f);
  const bool boxed = problem.u_min.size() > 0 || problem.u_max.size() > 0;
  const bool state_boxed = problem.x_min.size() > 0 || problem.x_max.size() > 0;
  if (!boxed && !state_boxed) {
    sol.u_seq = u;
    sol.cost = qp_cost(qp, u);
    return sol;
  }
  u = detail::clamp_box(u, problem, qp.l, qp.m);
  double lipschitz = spectral_norm(qp.H);
  if (state_boxed) {
    lipschitz += 2.0 * problem.state_penalty_weight *
                 std::pow(spectral_norm(qp.C) * spectral_norm(qp.Gamma), 2);
  }
  const double alpha = 1.0 / std::max(lipschitz, 1e-12);
  Eigen::VectorXd pen_grad(u.size());
  sol.converged = false;
  for (int it = 1; it <= 200; ++it) {
    detail::state_penalty(qp, problem, u, &pen_grad);
    const Eigen::VectorXd grad = qp.H * u + qp.f + pen_grad;
    const Eigen::VectorXd next = detail::clamp_box(u - alpha * grad, problem, qp.l, qp.m);
    const double pg_norm = (u - next).norm() / alpha;
    u = next;
    sol.iterations = it;
    if (pg_norm < 1e-8) {
      sol.converged = true;
      break;
    }
  }
  sol.u_seq = u;
  sol.cost = qp_cost(qp, u) + detail::state_penalty(qp, problem, u, nullptr);
  return sol;
}

// ---------------------------------------------------------------------------
// Receding-horizon control of the time-varying cartpole on the online model.
// ---------------------------------------------------------------------------

struct ClosedLoopRow {
  double t = 0.0;
  double x = 0.0, xd = 0.0, theta = 0.0, thetad = 0.0;
  double force = 0.0;
  double mu_c = 0.0;
  int solve_iters = 0;
  double cost = 0.0;
};

struct ClosedLoopResult {
  std::vector<ClosedLoopRow> rows;
  bool failed = false;
  double fail_time = 0.0;
  int model_updates = 0;
  double max_abs_theta = 0.0;
};

struct ClosedLoopOptions {
  double duration = 75.0;
  double dt = 0.1;
  int substeps = 10;
  int beta = 12;
  int warmup_batches = 4;  // excitation windows absorbed before control engages
  std::vector<LayerSpec> layers;
  TrainConfig train;
  Eigen::Vector4d x0{0.0, 0.0, 0.05, 0.0};
  double fail_angle = M_PI / 2.0;
};

// Collects one excitation batch, fits the initial model, then alternates MPC
// control steps with online model refreshes every beta samples.
inline ClosedLoopResult receding_horizon_run(const sim::CartpoleConfig& sys,
                                             const ClosedLoopOptions& opt,
                                             const MpcProblem& problem) {
  const int n_steps = static_cast<int>(std::llround(opt.duration / opt.dt));
  const int beta = opt.beta;
  ClosedLoopResult out;

  Eigen::MatrixXd states(4, n_steps + 1);
  Eigen::MatrixXd inputs(1, n_steps);
  states.col(0) = opt.x0;
  const double h = opt.dt / opt.substeps;

  std::unique_ptr<OnlineDktv> pipeline;
  int absorbed_batches = 0;  // batches handed to the pipeline (including batch 0)

  Eigen::Vector4d x = opt.x0;
  for (int k = 0; k < n_steps; ++k) {
    const double t_k = k * opt.dt;
    double force = 0.0;
    ClosedLoopRow row;
    if (!pipeline || absorbed_batches < opt.warmup_batches) {
      force = sim::cartpole_excitation(t_k);
    } else {
      const LiftedQp qp = build_lifted_qp(pipeline->snapshot(), x, problem);
      const QpSolution sol = solve_horizon(qp, problem);
      force = sol.u_seq(0);
      row.solve_iters = sol.iterations;
      row.cost = sol.cost;
    }
    row.t = t_k;
    row.x = x(0);
    row.xd = x(1);
    row.theta = x(2);
    row.thetad = x(3);
    row.force = force;
    row.mu_c = sim::cartpole_friction(t_k, sys);
    out.rows.push_back(row);
    out.max_abs_theta = std::max(out.max_abs_theta, std::abs(x(2)));

    inputs(0, k) = force;
    for (int s = 0; s < opt.substeps; ++s) {
      x = sim::rk4_step([&sys](const Eigen::Vector4d& xs, double us,
                               double ts) { return sim::cartpole_deriv(xs, us, ts, sys); },
                        x, force, t_k + s * h, h);
    }
    states.col(k + 1) = x;
    out.max_abs_theta = std::max(out.max_abs_theta, std::abs(x(2)));
    if (std::abs(x(2)) > opt.fail_angle) {
      out.failed = true;
      out.fail_time = t_k + opt.dt;
      break;
    }

    // A full new batch [beta*tau, beta*(tau+1)] just completed.
    if ((k + 1) % beta == 0) {
      const int tau = (k + 1) / beta - 1;
      DataBatch b;
      b.tau = tau;
      b.k_start = static_cast<long>(tau) * beta;
      b.X = states.middleCols(b.k_start, beta);
      b.X_bar = states.middleCols(b.k_start + 1, beta);
      b.U = inputs.middleCols(b.k_start, beta);
      if (!pipeline) {
        pipeline = std::make_unique<OnlineDktv>(b, opt.layers, opt.train);
      } else {
        pipeline->absorb(b);
      }
      absorbed_batches += 1;
    }
  }
  out.model_updates = absorbed_batches;
  return out;
}

}  // namespace dktv::mpc
