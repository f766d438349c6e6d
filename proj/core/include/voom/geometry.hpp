#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "voom/errors.hpp"

namespace voom {

using Eigen::Matrix2d;
using Eigen::Matrix3d;
using Eigen::Matrix4d;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::Vector4d;
using Matrix34d = Eigen::Matrix<double, 3, 4>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Pinhole camera intrinsics. All quantities in pixels.
struct Intrinsics {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  Matrix3d matrix() const;
  bool valid() const { return fx > 0 && fy > 0 && width > 0 && height > 0; }
  bool contains(const Vector2d& px, double margin = 0.0) const {
    return px.x() >= margin && px.y() >= margin && px.x() <= width - 1 - margin &&
           px.y() <= height - 1 - margin;
  }
};

/// Rigid transform mapping world coordinates into the camera frame
/// (camera-from-world): x_cam = rotation * x_world + translation.
struct Pose {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d translation = Vector3d::Zero();

  static Pose identity() { return {}; }
  static Pose from_quaternion(const Eigen::Quaterniond& q, const Vector3d& t);

  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;
  Vector3d operator*(const Vector3d& p) const { return rotation * p + translation; }

  /// Camera center in world coordinates (for a camera-from-world pose).
  Vector3d center() const { return -rotation.transpose() * translation; }
  Matrix34d matrix() const;
  Eigen::Quaterniond quaternion() const;
  bool valid(double tol = 1e-9) const;
};

/// Ellipse with major axis first; angle of the major axis in [-pi/2, pi/2),
/// measured from +x towards +y (image convention).
struct Ellipse2D {
  Vector2d center = Vector2d::Zero();
  Vector2d semi_axes = Vector2d::Ones();
  double angle = 0.0;

  /// Builds a canonical ellipse from arbitrary axis order and angle.
  static Ellipse2D make(const Vector2d& center, double a, double b, double angle);
  double area() const;
  bool valid() const {
    return semi_axes[0] > 0 && semi_axes[1] > 0 && semi_axes[0] >= semi_axes[1];
  }
};

struct Gaussian2D {
  Vector2d mean = Vector2d::Zero();
  Matrix2d covariance = Matrix2d::Identity();
};

struct Ellipsoid {
  Vector3d center = Vector3d::Zero();
  Vector3d semi_axes = Vector3d::Ones();
  Matrix3d rotation = Matrix3d::Identity();

  /// R diag(a^2, b^2, c^2) R^T; parameterization-free shape description.
  Matrix3d shape_matrix() const;
  bool valid() const;
};

/// Dual quadric, stored scale-normalized with matrix(3,3) == -1.
struct DualQuadric {
  Matrix4d matrix = Matrix4d::Identity();
};

struct BBox {
  Vector2d min = Vector2d::Zero();
  Vector2d max = Vector2d::Zero();

  double area() const { return (max - min).cwiseMax(0.0).prod(); }
  bool valid() const { return (min.array() <= max.array()).all(); }
};

// Ellipse fitting (direct least squares with the ellipse-specific constraint
// 4ac - b^2 = 1, solved in the numerically stable reduced 3x3 form).
// Input is normalized (centroid shift and isotropic scale) before solving.
// Throws TooFewPoints for fewer than 5 points and DegenerateFit when the
// best conic is not a real ellipse.
Ellipse2D fit_ellipse(std::span<const Vector2d> contour);

Gaussian2D ellipse_to_gaussian(const Ellipse2D& e);
Ellipse2D gaussian_to_ellipse(const Gaussian2D& g);

DualQuadric ellipsoid_to_dual_quadric(const Ellipsoid& e);
/// Inverse of ellipsoid_to_dual_quadric. Axes come back sorted in descending
/// order with a right-handed rotation, so the round trip is exact up to the
/// axis permutation symmetry of an ellipsoid.
Ellipsoid dual_quadric_to_ellipsoid(const DualQuadric& q);

/// C* = P Q* P^T with P = K [R | t], converted to an ellipse.
Ellipse2D project_dual_quadric(const DualQuadric& q, const Pose& pose, const Intrinsics& k);
Ellipse2D project_ellipsoid(const Ellipsoid& e, const Pose& pose, const Intrinsics& k);

Vector2d project_point(const Vector3d& p, const Pose& pose, const Intrinsics& k);
Vector3d back_project(const Vector2d& px, double depth, const Pose& pose, const Intrinsics& k);

BBox ellipse_bbox(const Ellipse2D& e);
BBox bbox_of_points(std::span<const Vector2d> pts);
double bbox_iou(const BBox& a, const BBox& b);
/// Axis-aligned ellipse inscribed in a box.
Ellipse2D box_inscribed_ellipse(const BBox& b);

/// Closed-form principal square root of a 2x2 SPD matrix.
Matrix2d sqrtm_spd2(const Matrix2d& m);

/// n points evenly spaced in the ellipse's parametric angle.
std::vector<Vector2d> sample_ellipse(const Ellipse2D& e, int n);
bool point_in_polygon(const Vector2d& p, std::span<const Vector2d> polygon);
bool point_in_ellipse(const Vector2d& p, const Ellipse2D& e);

}  // namespace voom
