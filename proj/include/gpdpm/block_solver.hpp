#ifndef GPDPM_BLOCK_SOLVER_HPP
#define GPDPM_BLOCK_SOLVER_HPP

#include <span>
#include <string>

#include "gpdpm/kernels.hpp"
#include "gpdpm/linalg.hpp"
#include "gpdpm/normal.hpp"

namespace gpdpm {

/// Site parameters in natural form: precision tau = 1/sigma~^2, nu = mu~/sigma~^2.
/// tau == 0 is the vacuous site.
struct Site {
  double tau = 0.0;
  double nu = 0.0;
};

/// Gaussian algebra of one biomarker block given fixed EP sites.
///
/// Writes A = K + blockdiag(N, diag(1/tau)) with N the observation noise. A is
/// never formed: with W = R^T R, R = blockdiag(chol(N)^-1, diag(sqrt(tau))) and
/// B = I + R K R^T (always >= I), every quantity stays finite for vacuous sites.
///   alpha = A^-1 mu~_joint = h - R^T B^-1 R K h,  h = [N^-1 y; nu]
///   mean  = K alpha,  cov = K - K Q K,  Q = A^-1 = R^T B^-1 R
class BlockSolver {
 public:
  BlockSolver(const BiomarkerBlock& block, std::span<const Site> sites, bool want_inverse)
      : block_(&block) {
    const std::size_t n = block.num_obs();
    const std::size_t d = block.num_deriv();
    const std::size_t m = n + d;
    if (sites.size() != d) throw std::invalid_argument("site count does not match derivative grid");

    // R on observation rows, one triangular inverse per individual group.
    R_ = Matrix::Zero(m, m);
    const Matrix noise = block.noise();
    log_det_noise_ = 0.0;
    for (std::size_t g = 0; g < block.group_begin.size(); ++g) {
      const auto b0 = static_cast<Eigen::Index>(block.group_begin[g]);
      const auto len = static_cast<Eigen::Index>(block.group_end[g] - block.group_begin[g]);
      const auto llt = robust_cholesky(noise.block(b0, b0, len, len),
                                       "observation noise of biomarker block " + std::to_string(block.biomarker));
      log_det_noise_ += log_det(llt);
      Matrix inv = Matrix::Identity(len, len);
      llt.matrixL().solveInPlace(inv);
      R_.block(b0, b0, len, len) = inv;
    }
    for (std::size_t q = 0; q < d; ++q) R_(n + q, n + q) = std::sqrt(sites[q].tau);

    h_.resize(m);
    const Vector ry = R_.topLeftCorner(n, n) * block.y;
    h_.head(n) = R_.topLeftCorner(n, n).transpose() * ry;
    y_ninv_y_ = ry.squaredNorm();
    for (std::size_t q = 0; q < d; ++q) h_(n + q) = sites[q].nu;

    const Matrix RK = R_ * block.K;
    Matrix B = RK * R_.transpose();
    B.diagonal().array() += 1.0;
    llt_B_.compute(B);
    if (llt_B_.info() != Eigen::Success)
      llt_B_ = robust_cholesky(B, "EP system of biomarker block " + std::to_string(block.biomarker));
    log_det_B_ = log_det(llt_B_);

    const Vector Kh = block.K * h_;
    const Vector v = llt_B_.solve(R_ * Kh);
    alpha_ = h_ - R_.transpose() * v;
    quad_ = h_.dot(block.K * alpha_);

    if (want_inverse) {
      Q_ = R_.transpose() * llt_B_.solve(R_);
      Q_ = 0.5 * (Q_ + Q_.transpose());
    }
  }

  const BiomarkerBlock& block() const { return *block_; }
  const Vector& alpha() const { return alpha_; }
  /// A^-1; only available when constructed with want_inverse.
  const Matrix& inverse() const { return Q_; }

  /// log N(mu~_joint | 0, A) up to terms depending only on the sites:
  /// -1/2 log|N| - 1/2 log|B| - 1/2 y'N^-1 y + 1/2 h' Sigma h - n/2 log 2pi.
  double gaussian_term() const {
    const double n = static_cast<double>(block_->num_obs());
    return -0.5 * log_det_noise_ - 0.5 * log_det_B_ - 0.5 * y_ninv_y_ + 0.5 * quad_ - 0.5 * n * kLog2Pi;
  }

  Vector posterior_mean() const { return block_->K * alpha_; }

  Matrix posterior_cov() const {
    const Matrix V = llt_B_.matrixL().solve(R_ * block_->K);
    Matrix c = block_->K - V.transpose() * V;
    return 0.5 * (c + c.transpose());
  }

  /// ½(alpha alpha^T - A^-1): contracting it with dA/dtheta gives d(gaussian_term)/dtheta.
  Matrix gradient_weights() const {
    Matrix w = alpha_ * alpha_.transpose() - Q_;
    return 0.5 * w;
  }

 private:
  const BiomarkerBlock* block_;
  Matrix R_;
  Eigen::LLT<Matrix> llt_B_;
  Vector h_;
  Vector alpha_;
  Matrix Q_;
  double log_det_noise_ = 0.0;
  double log_det_B_ = 0.0;
  double y_ninv_y_ = 0.0;
  double quad_ = 0.0;
};

}  // namespace gpdpm

#endif
