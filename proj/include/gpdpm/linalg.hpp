#ifndef GPDPM_LINALG_HPP
#define GPDPM_LINALG_HPP

#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "gpdpm/data_model.hpp"

namespace gpdpm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Cholesky factor of a symmetric matrix. A plain factorization is tried first;
/// on failure, jitter starting at 1e-8 * max(diag) is added and grown tenfold
/// up to 1e-4 * max(diag) before giving up.
inline Eigen::LLT<Matrix> robust_cholesky(const Matrix& a, const std::string& what) {
  if (!a.allFinite()) throw NumericalError("non-finite entries in " + what);
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  const double scale = a.diagonal().cwiseAbs().maxCoeff();
  for (double rel = 1e-8; rel <= 1e-4 * 1.0001; rel *= 10.0) {
    Matrix jittered = a;
    jittered.diagonal().array() += rel * (scale > 0.0 ? scale : 1.0);
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError("matrix not positive definite after jitter: " + what);
}

inline double log_det(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace gpdpm

#endif
