#pragma once

#include "voom/geometry.hpp"

namespace voom {

Matrix3d skew(const Vector3d& v);
Matrix3d so3_exp(const Vector3d& omega);
Vector3d so3_log(const Matrix3d& r);

// Tangent vectors are ordered (translation, rotation).
Pose se3_exp(const Vector6d& xi);
Vector6d se3_log(const Pose& pose);

/// exp(xi) * pose, with the rotation re-orthonormalized.
Pose left_update(const Pose& pose, const Vector6d& xi);

/// Rotation angle of the relative rotation between two poses (radians).
double rotation_distance(const Pose& a, const Pose& b);

}  // namespace voom
