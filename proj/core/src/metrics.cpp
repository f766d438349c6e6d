#include "voom/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace voom {

namespace {

// Orthogonal polar factor of a nonsingular 2x2 matrix (may be a reflection).
Matrix2d polar_factor(const Matrix2d& m) {
  Eigen::JacobiSVD<Matrix2d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

double wasserstein2_sq(const Gaussian2D& a, const Gaussian2D& b, WassersteinForm form) {
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const Matrix2d ra = sqrtm_spd2(a.covariance);
  const Matrix2d rb = sqrtm_spd2(b.covariance);
  double cov_term = 0.0;
  if (form == WassersteinForm::Frobenius) {
    cov_term = (ra - rb).squaredNorm();
  } else {
    const Matrix2d cross = sqrtm_spd2(ra * b.covariance * ra);
    cov_term = a.covariance.trace() + b.covariance.trace() - 2.0 * cross.trace();
  }
  return mean_term + std::max(cov_term, 0.0);
}

double normalized_wasserstein(const Gaussian2D& a, const Gaussian2D& b, const MetricConfig& cfg) {
  return std::exp(-std::sqrt(wasserstein2_sq(a, b, cfg.wasserstein_form)) / cfg.c_norm);
}

Eigen::Matrix<double, 6, 1> wasserstein_residual(const Gaussian2D& a, const Gaussian2D& b,
                                                 WassersteinForm form) {
  Eigen::Matrix<double, 6, 1> r = Eigen::Matrix<double, 6, 1>::Zero();
  r.head<2>() = a.mean - b.mean;
  const Matrix2d ra = sqrtm_spd2(a.covariance);
  const Matrix2d rb = sqrtm_spd2(b.covariance);
  if (form == WassersteinForm::Frobenius) {
    const Matrix2d d = ra - rb;
    r[2] = d(0, 0);
    r[3] = d(1, 1);
    r[4] = std::sqrt(2.0) * d(0, 1);
  } else {
    const Matrix2d d = ra - rb * polar_factor(rb * ra);
    r[2] = d(0, 0);
    r[3] = d(0, 1);
    r[4] = d(1, 0);
    r[5] = d(1, 1);
  }
  return r;
}

}  // namespace voom
