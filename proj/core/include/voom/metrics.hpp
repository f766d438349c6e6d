#pragma once

#include "voom/geometry.hpp"

namespace voom {

enum class WassersteinForm {
  /// ||mu1 - mu2||^2 + ||S1^{1/2} - S2^{1/2}||_F^2
  Frobenius,
  /// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})
  BuresTrace,
};

struct MetricConfig {
  double c_norm = 10.0;  // pixels
  WassersteinForm wasserstein_form = WassersteinForm::Frobenius;

  bool valid() const { return c_norm > 0.0; }
};

/// Squared 2-Wasserstein distance between two 2D Gaussians (pixels^2).
double wasserstein2_sq(const Gaussian2D& a, const Gaussian2D& b,
                       WassersteinForm form = WassersteinForm::Frobenius);

/// exp(-sqrt(W2^2) / C), in (0, 1].
double normalized_wasserstein(const Gaussian2D& a, const Gaussian2D& b, const MetricConfig& cfg = {});

/// Residual vector r with r.squaredNorm() == wasserstein2_sq(a, b, form).
/// Frobenius: (mean diff, upper triangle of the root difference with the
/// off-diagonal scaled by sqrt 2). Bures: (mean diff, vec(A - B U)) where U is
/// the orthogonal polar factor of B A, A and B the covariance roots.
Eigen::Matrix<double, 6, 1> wasserstein_residual(const Gaussian2D& a, const Gaussian2D& b,
                                                 WassersteinForm form);

}  // namespace voom
