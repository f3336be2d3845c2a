#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <stdexcept>

namespace dktv {

// Relative singular-value cutoff shared by the pseudoinverse and rank checks.
inline constexpr double kSvdCutoff = 1e-12;

inline bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

// Moore-Penrose pseudoinverse via SVD with a relative cutoff on singular values.
inline Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double rcond = kSvdCutoff) {
  if (m.rows() == 0 || m.cols() == 0) return Eigen::MatrixXd::Zero(m.cols(), m.rows());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double tol = rcond * sv(0);
  Eigen::VectorXd inv_sv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol) inv_sv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
}

// Largest singular value. Zero-sized matrices have norm 0.
inline double spectral_norm(const Eigen::MatrixXd& m) {
  if (m.rows() == 0 || m.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

// Minimum-Frobenius-norm M solving min ||rhs - M * lhs||_F.
inline Eigen::MatrixXd solve_min_norm(const Eigen::MatrixXd& lhs, const Eigen::MatrixXd& rhs) {
  if (lhs.cols() != rhs.cols()) {
    throw std::invalid_argument("solve_min_norm: column counts differ");
  }
  return rhs * pseudo_inverse(lhs);
}

// Numerical rank with threshold max_dim * sigma_max * rcond.
inline int numerical_rank(const Eigen::MatrixXd& m, double rcond = kSvdCutoff) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  const double tol = static_cast<double>(std::max(m.rows(), m.cols())) * sv(0) * rcond;
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > tol) ++rank;
  }
  return rank;
}

inline Eigen::MatrixXd matrix_power(const Eigen::MatrixXd& a, int p) {
  if (a.rows() != a.cols()) throw std::invalid_argument("matrix_power: square matrix required");
  Eigen::MatrixXd result = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (int i = 0; i < p; ++i) result = result * a;
  return result;
}

}  // namespace dktv
