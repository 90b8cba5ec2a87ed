#ifndef SFLOW_LINALG_HPP
#define SFLOW_LINALG_HPP

#include <Eigen/Dense>

namespace sflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Factorization of an SPD pencil: sigma0 = V V^T, sigma1 = V diag(lambda) V^T.
struct PencilFactors {
  Mat V;
  Vec lambda;
};

void require_symmetric(const Mat& m, const char* what, double tol = 1e-12);
void require_spd(const Mat& m, const char* what);

// Symmetric PSD square root via eigendecomposition. Eigenvalues below
// 1e-14 * trace are floored there before taking roots.
Mat spd_sqrt(const Mat& m);
Mat spd_inv_sqrt(const Mat& m);

// Condition number of a symmetric PSD matrix (max/min eigenvalue).
double spd_condition(const Mat& m);

// sigma0 = L L^T (Cholesky), M = L^{-1} sigma1 L^{-T}, M = U diag(lambda) U^T
// (symmetric eigendecomposition), V = L U.
PencilFactors pencil_decompose(const Mat& sigma0, const Mat& sigma1);

}  // namespace sflow

#endif  // SFLOW_LINALG_HPP
