#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <vector>

#include "dktv/dktv.hpp"
#include "dktv/linalg.hpp"

namespace dktv {

enum class MatrixNormKind { kSpectral, kFrobenius };

inline double matrix_norm(const Eigen::MatrixXd& m, MatrixNormKind kind) {
  return kind == MatrixNormKind::kSpectral ? spectral_norm(m) : m.norm();
}

struct Increments {
  double mu_x = 0.0;  // max consecutive state step inside the batch
  double mu_u = 0.0;  // max consecutive input step inside the batch
};

inline Increments empirical_increments(const DataBatch& batch) {
  if (batch.beta() < 1) throw std::invalid_argument("empirical_increments: need at least 2 samples");
  Increments inc;
  for (int j = 0; j < batch.beta(); ++j) {
    inc.mu_x = std::max(inc.mu_x, (batch.X_bar.col(j) - batch.X.col(j)).norm());
  }
  if (batch.input_dim() > 0) {
    for (int j = 0; j + 1 < batch.beta(); ++j) {
      inc.mu_u = std::max(inc.mu_u, (batch.U.col(j + 1) - batch.U.col(j)).norm());
    }
  }
  return inc;
}

struct ResidualMaxima {
  double l1 = 0.0;  // max one-step residual in lifted coordinates
  double l2 = 0.0;  // max projection residual over all batch states
};

inline ResidualMaxima residual_maxima(const DataBatch& batch, const DkrSnapshot& snap) {
  if (batch.beta() < 1) throw std::invalid_argument("residual_maxima: empty batch");
  const Eigen::MatrixXd g = snap.net.forward_batch(batch.X);
  const Eigen::MatrixXd g_bar = snap.net.forward_batch(batch.X_bar);
  Eigen::MatrixXd r1 = g_bar - snap.matrices.A * g;
  if (snap.matrices.B.cols() > 0) r1.noalias() -= snap.matrices.B * batch.U;
  ResidualMaxima out;
  for (int j = 0; j < batch.beta(); ++j) out.l1 = std::max(out.l1, r1.col(j).norm());
  // The projection residual ranges over all beta+1 states of the window.
  const Eigen::MatrixXd p = batch.X - snap.matrices.C * g;
  for (int j = 0; j < batch.beta(); ++j) out.l2 = std::max(out.l2, p.col(j).norm());
  const Eigen::VectorXd last = batch.X_bar.col(batch.beta() - 1);
  out.l2 = std::max(out.l2, (last - snap.matrices.C * snap.net.forward(last)).norm());
  return out;
}

struct AssumptionFlags {
  bool spectral_norm_A_lt_1 = true;  // ||A_tau|| < 1 on every recorded batch
  bool rank_ok = true;               // lifted full-row-rank checks passed
};

struct ErrorBoundReport {
  int tau = 0;
  double mu_x = 0.0;
  double mu_u = 0.0;
  double mu_g = 0.0;  // sampled-pair estimate, a lower estimate of the true constant
  double L1 = 0.0;
  double L2 = 0.0;
  double L_a = 0.0;
  double L_b = 0.0;
  double L_c = 0.0;
  double total_bound = 0.0;       // L_a + L_b + L_c
  double asymptotic_bound = 0.0;  // wide-lift limit form
  std::vector<double> observed_errors;
  bool violated = false;
  long first_violation_k = -1;
  AssumptionFlags flags;
};

// Accumulation factor for the within-window estimation error at offset k_off
// from the batch start: the sum of powers of the current A plus, for tau >= 1,
// the carried-over sums from earlier batches weighted by products of matrix
// powers. Evaluated with explicit matrix products.
inline Eigen::MatrixXd error_accumulation_factor(const std::vector<BatchRecord>& history, int tau,
                                                 int k_off) {
  const Eigen::MatrixXd& a_tau = history.at(static_cast<size_t>(tau)).A;
  const int r = static_cast<int>(a_tau.rows());
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(r, r);
  const int cap = k_off - 2;
  if (cap < 0) return id;

  Eigen::MatrixXd power = id;  // A_tau^i
  Eigen::MatrixXd sum = id;    // sum_{i=0}^{cap} A_tau^i
  for (int i = 1; i <= cap; ++i) {
    power = power * a_tau;
    sum += power;
  }
  if (tau == 0) return sum;

  // Carry-in from the previous batches, scaled by A_tau^cap.
  Eigen::MatrixXd inner = Eigen::MatrixXd::Zero(r, r);
  {
    const auto& prev = history.at(static_cast<size_t>(tau - 1));
    Eigen::MatrixXd ap = id;
    for (int j = 1; j <= prev.beta; ++j) {
      ap = ap * prev.A;
      inner += ap;
    }
  }
  if (tau >= 2) {
    // prefix(l) = prod_{n=tau-1}^{l} A_n^{beta_n}, built downward from l = tau-1.
    Eigen::MatrixXd prefix = id;
    for (int l = tau - 1; l >= 1; --l) {
      prefix = prefix * matrix_power(history.at(static_cast<size_t>(l)).A,
                                     history.at(static_cast<size_t>(l)).beta);
      const auto& below = history.at(static_cast<size_t>(l - 1));
      Eigen::MatrixXd ap = Eigen::MatrixXd::Identity(r, r);
      for (int m_idx = 1; m_idx <= below.beta; ++m_idx) {
        ap = ap * below.A;
        inner += prefix * ap;
      }
    }
  }
  return sum + power * inner;  // power == A_tau^cap after the loop above
}

// Every bound component for the batch at the end of `history`, using the
// supplied increments, Lipschitz estimate and residual maxima.
inline ErrorBoundReport bound_components(const std::vector<BatchRecord>& history,
                                         const Increments& inc, double mu_g,
                                         const ResidualMaxima& res,
                                         MatrixNormKind norm_kind = MatrixNormKind::kSpectral) {
  if (history.empty()) throw std::invalid_argument("bound_components: empty history");
  const int tau = static_cast<int>(history.size()) - 1;
  const BatchRecord& rec = history.back();

  ErrorBoundReport rep;
  rep.tau = tau;
  rep.mu_x = inc.mu_x;
  rep.mu_u = inc.mu_u;
  rep.mu_g = mu_g;
  rep.L1 = res.l1;
  rep.L2 = res.l2;

  const double norm_ca = matrix_norm(rec.C * rec.A, norm_kind);
  const double norm_cb = rec.B.cols() > 0 ? matrix_norm(rec.C * rec.B, norm_kind) : 0.0;
  rep.L_a = norm_ca * mu_g * inc.mu_x + norm_cb * inc.mu_u;

  double worst = 0.0;
  for (int k_off = 1; k_off <= rec.beta; ++k_off) {
    const Eigen::MatrixXd s = error_accumulation_factor(history, tau, k_off);
    worst = std::max(worst, matrix_norm(rec.C * s, norm_kind));
  }
  rep.L_b = worst * res.l1;
  rep.L_c = inc.mu_x + res.l2;
  rep.total_bound = rep.L_a + rep.L_b + rep.L_c;
  rep.asymptotic_bound = (norm_ca * mu_g + 1.0) * inc.mu_x + norm_cb * inc.mu_u + res.l2;

  for (const auto& h : history) {
    if (spectral_norm(h.A) >= 1.0) rep.flags.spectral_norm_A_lt_1 = false;
  }
  return rep;
}

// Flags any observed error above the bound. Violations point at broken
// assumptions, not at the bound computation.
inline void validate(const std::vector<double>& observed, long k_start, ErrorBoundReport& rep) {
  rep.observed_errors = observed;
  rep.violated = false;
  rep.first_violation_k = -1;
  for (size_t i = 0; i < observed.size(); ++i) {
    if (observed[i] > rep.total_bound) {
      rep.violated = true;
      rep.first_violation_k = k_start + 1 + static_cast<long>(i);
      break;
    }
  }
}

// Observed within-window errors ||xhat_k - x_k|| for the anchored rollout.
inline std::vector<double> observed_batch_errors(const DkrSnapshot& snap, const DataBatch& batch) {
  const Eigen::MatrixXd traj = reconstruct_batch(snap, batch);
  std::vector<double> errs;
  errs.reserve(static_cast<size_t>(batch.beta()));
  for (int j = 0; j < batch.beta(); ++j) {
    if (j + 1 < traj.cols()) {
      errs.push_back((traj.col(j + 1) - batch.X_bar.col(j)).norm());
    } else {
      errs.push_back(std::numeric_limits<double>::infinity());
    }
  }
  return errs;
}

}  // namespace dktv
