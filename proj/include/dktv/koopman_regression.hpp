#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <stdexcept>
#include <string>

#include "dktv/linalg.hpp"

namespace dktv {

// Lifted-space dynamics (A, B) and the projection back to state space (C).
// B has zero columns for autonomous systems.
struct KoopmanMatrices {
  Eigen::MatrixXd A;  // r x r
  Eigen::MatrixXd B;  // r x m
  Eigen::MatrixXd C;  // n x r

  int r() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  int n() const { return static_cast<int>(C.rows()); }
};

struct RankReport {
  int rank_G = 0;
  int rank_chi = 0;
  int required_G = 0;    // r
  int required_chi = 0;  // r + m
  bool satisfied = false;
};

class RankError : public std::runtime_error {
 public:
  RankError(const std::string& what, RankReport report)
      : std::runtime_error(what), report_(report) {}
  const RankReport& report() const { return report_; }

 private:
  RankReport report_;
};

// Full-row-rank check on the lifted data and the stacked lift/input matrix.
inline RankReport check_rank(const Eigen::MatrixXd& g, const Eigen::MatrixXd& u) {
  RankReport rep;
  rep.required_G = static_cast<int>(g.rows());
  rep.required_chi = static_cast<int>(g.rows() + u.rows());
  rep.rank_G = numerical_rank(g);
  if (u.rows() == 0) {
    rep.rank_chi = rep.rank_G;
  } else {
    Eigen::MatrixXd chi(g.rows() + u.rows(), g.cols());
    chi << g, u;
    rep.rank_chi = numerical_rank(chi);
  }
  rep.satisfied = (rep.rank_G >= rep.required_G) && (rep.rank_chi >= rep.required_chi);
  return rep;
}

// Least-squares fit of the lifted dynamics and projection from one batch:
// [A, B] minimizing ||Gbar - [A,B] [G; U]||_F and C minimizing ||X - C G||_F,
// both as minimum-norm solutions through the SVD pseudoinverse.
inline KoopmanMatrices fit_batch(const Eigen::MatrixXd& g, const Eigen::MatrixXd& g_bar,
                                 const Eigen::MatrixXd& u, const Eigen::MatrixXd& x) {
  const Eigen::Index r = g.rows(), m = u.rows(), beta = g.cols();
  if (g_bar.rows() != r || g_bar.cols() != beta || x.cols() != beta ||
      (m > 0 && u.cols() != beta)) {
    throw std::invalid_argument("fit_batch: inconsistent dimensions");
  }
  if (beta < r + m) {
    throw std::invalid_argument("fit_batch: batch size " + std::to_string(beta) +
                                " below r+m = " + std::to_string(r + m));
  }
  RankReport rep = check_rank(g, u);
  if (!rep.satisfied) {
    throw RankError("fit_batch: lifted data is rank deficient (rank " +
                        std::to_string(rep.rank_chi) + " of " + std::to_string(rep.required_chi) +
                        ")",
                    rep);
  }
  Eigen::MatrixXd chi(r + m, beta);
  if (m > 0) {
    chi << g, u;
  } else {
    chi = g;
  }
  const Eigen::MatrixXd ab = solve_min_norm(chi, g_bar);
  KoopmanMatrices k;
  k.A = ab.leftCols(r);
  k.B = ab.rightCols(m);
  k.C = solve_min_norm(g, x);
  return k;
}

struct ComponentLosses {
  double l1 = 0.0;
  double l2 = 0.0;
};

inline ComponentLosses component_losses(const Eigen::MatrixXd& g, const Eigen::MatrixXd& g_bar,
                                        const Eigen::MatrixXd& u, const Eigen::MatrixXd& x,
                                        const KoopmanMatrices& k) {
  const double beta = static_cast<double>(g.cols());
  Eigen::MatrixXd r1 = g_bar - k.A * g;
  if (k.B.cols() > 0) r1.noalias() -= k.B * u;
  ComponentLosses out;
  out.l1 = r1.squaredNorm() / beta;
  out.l2 = (x - k.C * g).squaredNorm() / beta;
  return out;
}

// Accumulated cross-moment and Gram matrices over every absorbed batch, with
// maintained inverses. The inverses are verified after each update and rebuilt
// from the moments if they have drifted.
struct RecursiveCache {
  Eigen::MatrixXd V_ab;      // r x (r+m), sum of Gbar * chi^T
  Eigen::MatrixXd G_ab;      // (r+m) x (r+m), sum of chi * chi^T
  Eigen::MatrixXd G_ab_inv;  // maintained inverse
  Eigen::MatrixXd V_c;       // n x r, sum of X * G^T
  Eigen::MatrixXd G_c;       // r x r, sum of G * G^T
  Eigen::MatrixXd G_c_inv;
  int batches_absorbed = 0;
  int rebuilds = 0;

  static constexpr double kInverseTol = 1e-8;

  static RecursiveCache from_batch(const Eigen::MatrixXd& g, const Eigen::MatrixXd& g_bar,
                                   const Eigen::MatrixXd& u, const Eigen::MatrixXd& x) {
    RecursiveCache c;
    const Eigen::Index r = g.rows(), m = u.rows();
    Eigen::MatrixXd chi(r + m, g.cols());
    if (m > 0) {
      chi << g, u;
    } else {
      chi = g;
    }
    c.V_ab = g_bar * chi.transpose();
    c.G_ab = chi * chi.transpose();
    c.V_c = x * g.transpose();
    c.G_c = g * g.transpose();
    c.G_ab_inv = invert(c.G_ab);
    c.G_c_inv = invert(c.G_c);
    c.batches_absorbed = 1;
    return c;
  }

  static Eigen::MatrixXd invert(const Eigen::MatrixXd& gram) {
    const auto id = Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() == Eigen::Success) {
      Eigen::MatrixXd inv = ldlt.solve(id);
      if (inv.allFinite() && (gram * inv - id).norm() <= kInverseTol) return inv;
    }
    // Ill-conditioned Gram: take the cutoff pseudoinverse route instead.
    Eigen::MatrixXd inv = pseudo_inverse(gram);
    if (!inv.allFinite()) {
      throw std::runtime_error("recursive cache: Gram matrix not invertible");
    }
    return inv;
  }

  bool inverse_consistent() const {
    const auto id_ab = Eigen::MatrixXd::Identity(G_ab.rows(), G_ab.cols());
    const auto id_c = Eigen::MatrixXd::Identity(G_c.rows(), G_c.cols());
    return (G_ab * G_ab_inv - id_ab).norm() < kInverseTol &&
           (G_c * G_c_inv - id_c).norm() < kInverseTol;
  }
};

struct RecursiveUpdateResult {
  KoopmanMatrices matrices;
  bool fallback_used = false;
};

namespace detail {

// One low-rank block update: M' = M + (Ynew - M Xnew) S^{-1} Xnew^T Ginv with
// S = I + Xnew^T Ginv Xnew, then V, Gram and Ginv refreshed. Returns false if
// the small inverse could not be trusted, in which case only the moments were
// accumulated and the caller must rebuild.
inline bool woodbury_update(Eigen::MatrixXd& m_mat, Eigen::MatrixXd& v, Eigen::MatrixXd& gram,
                            Eigen::MatrixXd& ginv, const Eigen::MatrixXd& x_new,
                            const Eigen::MatrixXd& y_new) {
  const Eigen::Index beta = x_new.cols();
  const Eigen::MatrixXd ginv_x = ginv * x_new;
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(beta, beta) + x_new.transpose() * ginv_x;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  v.noalias() += y_new * x_new.transpose();
  gram.noalias() += x_new * x_new.transpose();
  bool ok = (ldlt.info() == Eigen::Success);
  if (ok) {
    const Eigen::MatrixXd s_inv_xt_ginv = ldlt.solve(ginv_x.transpose());
    if (!s_inv_xt_ginv.allFinite()) ok = false;
    if (ok) {
      m_mat.noalias() += (y_new - m_mat * x_new) * s_inv_xt_ginv;
      ginv.noalias() -= ginv_x * s_inv_xt_ginv;
    }
  }
  if (ok) {
    const auto id = Eigen::MatrixXd::Identity(gram.rows(), gram.cols());
    ok = (gram * ginv - id).norm() < RecursiveCache::kInverseTol;
  }
  return ok;
}

}  // namespace detail

// Absorbs one new batch of lifted data into the cache and refreshes (A, B, C)
// so they equal the least-squares fit over all absorbed data. Only one
// beta-by-beta inverse is formed per block. A failed small inverse falls back
// to a direct refit from the accumulated moments and is flagged.
inline RecursiveUpdateResult recursive_update(RecursiveCache& cache,
                                              const KoopmanMatrices& current,
                                              const Eigen::MatrixXd& g_new,
                                              const Eigen::MatrixXd& g_bar_new,
                                              const Eigen::MatrixXd& u_new,
                                              const Eigen::MatrixXd& x_new) {
  const Eigen::Index r = g_new.rows(), m = u_new.rows();
  if (current.A.rows() != r || current.B.cols() != m || x_new.rows() != current.C.rows()) {
    throw std::invalid_argument("recursive_update: dimension mismatch with current matrices");
  }
  Eigen::MatrixXd chi_new(r + m, g_new.cols());
  if (m > 0) {
    chi_new << g_new, u_new;
  } else {
    chi_new = g_new;
  }

  RecursiveUpdateResult out;
  Eigen::MatrixXd ab(r, r + m);
  ab << current.A, current.B;
  Eigen::MatrixXd c = current.C;

  bool ok_ab = detail::woodbury_update(ab, cache.V_ab, cache.G_ab, cache.G_ab_inv, chi_new, g_bar_new);
  bool ok_c = detail::woodbury_update(c, cache.V_c, cache.G_c, cache.G_c_inv, g_new, x_new);

  if (!ok_ab) {
    cache.G_ab_inv = RecursiveCache::invert(cache.G_ab);
    ab = cache.V_ab * cache.G_ab_inv;
    cache.rebuilds += 1;
    out.fallback_used = true;
  }
  if (!ok_c) {
    cache.G_c_inv = RecursiveCache::invert(cache.G_c);
    c = cache.V_c * cache.G_c_inv;
    cache.rebuilds += 1;
    out.fallback_used = true;
  }
  cache.batches_absorbed += 1;

  out.matrices.A = ab.leftCols(r);
  out.matrices.B = ab.rightCols(m);
  out.matrices.C = c;
  return out;
}

}  // namespace dktv
