#pragma once

#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "voom/geometry.hpp"
#include "voom/map.hpp"
#include "voom/metrics.hpp"
#include "voom/observation.hpp"

namespace voom {

struct SolverConfig {
  int max_iterations = 10;
  double initial_damping = 1e-4;
  double min_relative_decrease = 1e-6;
  double min_step_norm = 1e-8;
  double huber_delta = 2.45;     // pixels (reprojection terms only)
  double chi2_threshold = 5.99;  // 2 DoF, 95%
  int outlier_rounds = 4;        // pose-only: optimize / reclassify rounds
  double pixel_sigma = 1.0;

  static SolverConfig pose_defaults() { return {}; }
  static SolverConfig ba_defaults() {
    SolverConfig c;
    c.max_iterations = 5;
    return c;
  }
  static SolverConfig ellipsoid_defaults() {
    SolverConfig c;
    c.max_iterations = 20;
    return c;
  }
  bool valid() const;
};

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double damping = 0.0;
  bool accepted = false;
};

/// Per-solve bookkeeping shared by all solvers.
struct SolveSummary {
  std::vector<IterationRecord> iterations;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  /// False if any accepted step increased the cost it was accepted under.
  bool monotone = true;
};

// --- reprojection -----------------------------------------------------------

/// project(pose * point) - pixel
Vector2d reprojection_residual(const Vector2d& pixel, const Vector3d& point, const Pose& pose,
                               const Intrinsics& k);

struct ReprojectionJacobians {
  Eigen::Matrix<double, 2, 6> pose;   // w.r.t. left increment (translation, rotation)
  Eigen::Matrix<double, 2, 3> point;  // w.r.t. world point
};
ReprojectionJacobians reprojection_jacobians(const Vector3d& point, const Pose& pose, const Intrinsics& k);

/// Max over entries of |analytic - central difference|, relative to the
/// largest analytic magnitude.
double numeric_jacobian_check(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residual,
                              const Eigen::VectorXd& params, const Eigen::MatrixXd& analytic,
                              double step = 1e-6);

// --- pose-only --------------------------------------------------------------

struct Correspondence {
  Vector2d pixel;
  Vector3d point;
};

struct PoseResult {
  Pose pose;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  SolveSummary summary;
};

/// Huber-robust 6-DoF pose refinement with `outlier_rounds` rounds of
/// optimization and chi-square reclassification. Throws TooFewMatches with
/// fewer than 6 correspondences. Non-convergence is reported via the summary.
PoseResult optimize_pose(const Pose& initial, std::span<const Correspondence> matches, const Intrinsics& k,
                         const SolverConfig& cfg = SolverConfig::pose_defaults());

// --- local bundle adjustment ------------------------------------------------

struct BundleAdjustmentResult {
  std::map<KeyFrameId, Pose> poses;
  std::map<PointId, Vector3d> points;
  std::vector<std::pair<KeyFrameId, PointId>> outliers;
  SolveSummary summary;
};

/// Joint refinement of the local keyframe poses and local points. Fixed
/// keyframes, and the map's first keyframe, only anchor the problem. The
/// reduced camera system is formed by Schur complement over point blocks.
/// Object landmarks are not part of the problem.
BundleAdjustmentResult local_bundle_adjustment(const Map& map, const LocalMap& local,
                                               const Intrinsics& k,
                                               const SolverConfig& cfg = SolverConfig::ba_defaults());
/// Writes the refined poses and points back and drops outlier observations.
void apply_bundle_adjustment(Map& map, const BundleAdjustmentResult& result);

// --- ellipsoids -------------------------------------------------------------

/// Ellipsoid parameter vector: center, log semi-axes, axis-angle rotation.
struct EllipsoidParams {
  Vector3d center = Vector3d::Zero();
  Vector3d log_axes = Vector3d::Zero();
  Vector3d rotation = Vector3d::Zero();

  Ellipsoid to_ellipsoid() const;
  static EllipsoidParams from_ellipsoid(const Ellipsoid& e);
};

struct EllipsoidObservation {
  Gaussian2D gaussian;
  Pose pose;
};

struct EllipsoidResult {
  Ellipsoid ellipsoid;
  SolveSummary summary;
};

/// J = sum over observations of W2^2(observed, projected). Infinite when
/// some projection fails.
double ellipsoid_cost(std::span<const EllipsoidObservation> obs, const Intrinsics& k, const Ellipsoid& e,
                      WassersteinForm form = WassersteinForm::Frobenius);

/// Levenberg-Marquardt on J with central-difference Jacobians. Rotation
/// increments are applied on the right. After the fifth iteration each
/// observation's residual is capped at the 95th percentile of the current
/// residual norms. Throws TooFewViews (< 3) and DegenerateBaseline (no pair
/// of viewing rays at least 5 degrees apart).
EllipsoidResult estimate_ellipsoid(std::span<const EllipsoidObservation> obs, const Intrinsics& k,
                                   const EllipsoidParams& init,
                                   const SolverConfig& cfg = SolverConfig::ellipsoid_defaults(),
                                   WassersteinForm form = WassersteinForm::Frobenius);

/// Center on the back-projected ellipse center at depth_hint; isotropic
/// axes depth_hint * mean(a, b) / f; identity rotation.
EllipsoidParams initialize_ellipsoid(const Detection& detection, double depth_hint, const Pose& pose,
                                     const Intrinsics& k);

}  // namespace voom
