#include "sflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sflow/errors.hpp"

namespace sflow {

void require_symmetric(const Mat& m, const char* what, double tol) {
  if (m.rows() != m.cols()) {
    throw ConfigError(std::string(what) + ": matrix must be square");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw ConfigError(std::string(what) + ": matrix must be symmetric");
  }
}

void require_spd(const Mat& m, const char* what) {
  require_symmetric(m, what);
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) {
    throw ConfigError(std::string(what) + ": matrix must be positive definite");
  }
}

namespace {

Mat spd_power(const Mat& m, double p, const char* what) {
  require_symmetric(m, what);
  Eigen::SelfAdjointEigenSolver<Mat> eig(m);
  if (eig.info() != Eigen::Success) {
    throw NumericalError(std::string(what) + ": eigendecomposition failed");
  }
  const double floor = 1e-14 * std::max(m.trace(), 0.0);
  if (floor <= 0.0 && p < 0.0) {
    throw NumericalError(std::string(what) + ": matrix has zero trace");
  }
  Vec d = eig.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d[i] < -1e-10 * std::max(1.0, m.trace())) {
      throw NumericalError(std::string(what) + ": matrix is not PSD");
    }
    d[i] = std::pow(std::max(d[i], floor), p);
  }
  return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

Mat spd_sqrt(const Mat& m) { return spd_power(m, 0.5, "spd_sqrt"); }

Mat spd_inv_sqrt(const Mat& m) { return spd_power(m, -0.5, "spd_inv_sqrt"); }

double spd_condition(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(m);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("spd_condition: eigendecomposition failed");
  }
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (lo <= 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return hi / lo;
}

PencilFactors pencil_decompose(const Mat& sigma0, const Mat& sigma1) {
  require_spd(sigma0, "pencil_decompose(sigma0)");
  require_spd(sigma1, "pencil_decompose(sigma1)");
  if (sigma0.rows() != sigma1.rows()) {
    throw ConfigError("pencil_decompose: dimension mismatch");
  }
  Eigen::LLT<Mat> llt(sigma0);
  const Mat L = llt.matrixL();
  // M = L^{-1} sigma1 L^{-T}
  Mat M = L.triangularView<Eigen::Lower>().solve(sigma1);
  M = L.triangularView<Eigen::Lower>().solve(M.transpose()).transpose();
  M = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(M);
  if (eig.info() != Eigen::Success) {
    throw NumericalError("pencil_decompose: eigendecomposition failed");
  }
  PencilFactors out;
  out.lambda = eig.eigenvalues();
  out.V = L * eig.eigenvectors();
  return out;
}

}  // namespace sflow
