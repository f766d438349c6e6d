#include "voom/lie.hpp"

#include <cmath>

namespace voom {

Matrix3d skew(const Vector3d& v) {
  Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Matrix3d so3_exp(const Vector3d& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) return Matrix3d::Identity() + skew(omega);
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Vector3d so3_log(const Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

namespace {

// Left Jacobian of SO(3).
Matrix3d so3_left_jacobian(const Vector3d& omega) {
  const double theta = omega.norm();
  const Matrix3d w = skew(omega);
  if (theta < 1e-8) return Matrix3d::Identity() + 0.5 * w;
  const double t2 = theta * theta;
  return Matrix3d::Identity() + (1.0 - std::cos(theta)) / t2 * w +
         (theta - std::sin(theta)) / (t2 * theta) * w * w;
}

}  // namespace

Pose se3_exp(const Vector6d& xi) {
  const Vector3d rho = xi.head<3>();
  const Vector3d omega = xi.tail<3>();
  Pose p;
  p.rotation = so3_exp(omega);
  p.translation = so3_left_jacobian(omega) * rho;
  return p;
}

Vector6d se3_log(const Pose& pose) {
  const Vector3d omega = so3_log(pose.rotation);
  Vector6d xi;
  xi.head<3>() = so3_left_jacobian(omega).inverse() * pose.translation;
  xi.tail<3>() = omega;
  return xi;
}

Pose left_update(const Pose& pose, const Vector6d& xi) {
  Pose out = se3_exp(xi) * pose;
  out.rotation = Eigen::Quaterniond(out.rotation).normalized().toRotationMatrix();
  return out;
}

double rotation_distance(const Pose& a, const Pose& b) {
  return Eigen::AngleAxisd(a.rotation * b.rotation.transpose()).angle();
}

}  // namespace voom
