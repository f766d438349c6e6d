#include "voom/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace voom {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::DegenerateFit: return "DegenerateFit";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::NotAnEllipsoid: return "NotAnEllipsoid";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::DegenerateConic: return "DegenerateConic";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::UnknownKeyFrame: return "UnknownKeyFrame";
    case ErrorCode::UnknownObject: return "UnknownObject";
    case ErrorCode::UnknownMapPoint: return "UnknownMapPoint";
    case ErrorCode::TooFewMatches: return "TooFewMatches";
    case ErrorCode::TooFewViews: return "TooFewViews";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

namespace {

constexpr double kPi = std::numbers::pi;

double canonical_angle(double angle) {
  // Orientation of an axis is defined modulo pi.
  double a = std::fmod(angle + kPi / 2.0, kPi);
  if (a < 0) a += kPi;
  a -= kPi / 2.0;
  if (a >= kPi / 2.0) a -= kPi;
  return a;
}

}  // namespace

Matrix3d Intrinsics::matrix() const {
  Matrix3d k;
  k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return k;
}

Pose Pose::from_quaternion(const Eigen::Quaterniond& q, const Vector3d& t) {
  Pose p;
  p.rotation = q.normalized().toRotationMatrix();
  p.translation = t;
  return p;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

Matrix34d Pose::matrix() const {
  Matrix34d m;
  m.leftCols<3>() = rotation;
  m.col(3) = translation;
  return m;
}

Eigen::Quaterniond Pose::quaternion() const {
  Eigen::Quaterniond q(rotation);
  q.normalize();
  return q;
}

bool Pose::valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation * rotation.transpose() - Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

Ellipse2D Ellipse2D::make(const Vector2d& center, double a, double b, double angle) {
  Ellipse2D e;
  e.center = center;
  if (b > a) {
    std::swap(a, b);
    angle += kPi / 2.0;
  }
  e.semi_axes = Vector2d(a, b);
  e.angle = (a == b) ? 0.0 : canonical_angle(angle);
  return e;
}

double Ellipse2D::area() const { return kPi * semi_axes[0] * semi_axes[1]; }

Matrix3d Ellipsoid::shape_matrix() const {
  return rotation * semi_axes.array().square().matrix().asDiagonal() * rotation.transpose();
}

bool Ellipsoid::valid() const {
  if (!center.allFinite() || !semi_axes.allFinite() || (semi_axes.array() <= 0).any()) return false;
  Pose p;
  p.rotation = rotation;
  return p.valid(1e-9);
}

Gaussian2D ellipse_to_gaussian(const Ellipse2D& e) {
  const double c = std::cos(e.angle);
  const double s = std::sin(e.angle);
  Matrix2d u;
  u << c, -s, s, c;
  const Vector2d var = e.semi_axes.array().square();
  Gaussian2D g;
  g.mean = e.center;
  g.covariance = u * var.asDiagonal() * u.transpose();
  g.covariance(1, 0) = g.covariance(0, 1);
  return g;
}

Ellipse2D gaussian_to_ellipse(const Gaussian2D& g) {
  const Matrix2d& m = g.covariance;
  const double p = m(0, 0);
  const double r = m(1, 1);
  const double q = 0.5 * (m(0, 1) + m(1, 0));
  const double half_trace = 0.5 * (p + r);
  const double half_diff = 0.5 * (p - r);
  const double disc = std::hypot(half_diff, q);
  const double l_max = half_trace + disc;
  const double l_min = half_trace - disc;
  if (!(l_min > 0.0) || !std::isfinite(l_max)) {
    throw Error(ErrorCode::NotPositiveDefinite, "covariance eigenvalues must be positive");
  }
  const double a = std::sqrt(l_max);
  const double b = std::sqrt(l_min);
  Ellipse2D e;
  e.center = g.mean;
  e.semi_axes = Vector2d(a, b);
  if (disc <= 1e-14 * half_trace) {
    e.semi_axes = Vector2d::Constant(std::sqrt(half_trace));
    e.angle = 0.0;
  } else {
    e.angle = canonical_angle(0.5 * std::atan2(2.0 * q, p - r));
  }
  return e;
}

namespace {

// Conic x^T C x = 0 (homogeneous, symmetric 3x3) to ellipse parameters.
Ellipse2D conic_to_ellipse(const Matrix3d& conic) {
  const Matrix2d a = conic.topLeftCorner<2, 2>();
  const Vector2d b = conic.topRightCorner<2, 1>();
  const double det = a.determinant();
  if (!(std::abs(det) > 0.0) || !std::isfinite(det)) {
    throw Error(ErrorCode::DegenerateFit, "conic has no center");
  }
  const Vector2d center = -a.inverse() * b;
  const double c0 = conic(2, 2) + b.dot(center);
  // (x - x0)^T A (x - x0) = -c0  =>  shape S = -c0 A^{-1}
  Gaussian2D g;
  g.mean = center;
  g.covariance = -c0 * a.inverse();
  try {
    return gaussian_to_ellipse(g);
  } catch (const Error&) {
    throw Error(ErrorCode::DegenerateFit, "fitted conic is not a real ellipse");
  }
}

}  // namespace

Ellipse2D fit_ellipse(std::span<const Vector2d> contour) {
  const auto n = static_cast<Eigen::Index>(contour.size());
  if (n < 5) throw Error(ErrorCode::TooFewPoints, "ellipse fit needs at least 5 points");

  Vector2d mean = Vector2d::Zero();
  for (const auto& p : contour) mean += p;
  mean /= static_cast<double>(n);
  double spread = 0.0;
  for (const auto& p : contour) spread += (p - mean).norm();
  spread /= static_cast<double>(n);
  if (!(spread > 0.0) || !std::isfinite(spread)) {
    throw Error(ErrorCode::DegenerateFit, "contour points coincide");
  }
  const double scale = std::sqrt(2.0) / spread;

  Eigen::MatrixX3d d1(n, 3);
  Eigen::MatrixX3d d2(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector2d q = (contour[static_cast<std::size_t>(i)] - mean) * scale;
    d1.row(i) << q.x() * q.x(), q.x() * q.y(), q.y() * q.y();
    d2.row(i) << q.x(), q.y(), 1.0;
  }
  const Matrix3d s1 = d1.transpose() * d1;
  const Matrix3d s2 = d1.transpose() * d2;
  const Matrix3d s3 = d2.transpose() * d2;

  Eigen::FullPivLU<Matrix3d> lu(s3);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) throw Error(ErrorCode::DegenerateFit, "collinear contour");
  const Matrix3d t = -lu.inverse() * s2.transpose();
  Matrix3d m = s1 + s2 * t;
  // Premultiply by the inverse of the constraint block [[0,0,2],[0,-1,0],[2,0,0]].
  Matrix3d reduced;
  reduced.row(0) = m.row(2) / 2.0;
  reduced.row(1) = -m.row(1);
  reduced.row(2) = m.row(0) / 2.0;

  Eigen::EigenSolver<Matrix3d> es(reduced);
  int best = -1;
  double best_value = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    const Vector3d v = es.eigenvectors().col(i).real();
    const double cond = 4.0 * v[0] * v[2] - v[1] * v[1];
    const double lambda = std::abs(es.eigenvalues()[i].real());
    if (cond > 0.0 && lambda < best_value) {
      best = i;
      best_value = lambda;
    }
  }
  if (best < 0) throw Error(ErrorCode::DegenerateFit, "no elliptical solution");

  const Vector3d quad = es.eigenvectors().col(best).real();
  const Vector3d lin = t * quad;
  Matrix3d cn;
  cn << quad[0], quad[1] / 2, lin[0] / 2,  //
      quad[1] / 2, quad[2], lin[1] / 2,    //
      lin[0] / 2, lin[1] / 2, lin[2];
  Matrix3d h;
  h << scale, 0, -scale * mean.x(), 0, scale, -scale * mean.y(), 0, 0, 1;
  const Matrix3d conic = h.transpose() * cn * h;
  return conic_to_ellipse(conic);
}

DualQuadric ellipsoid_to_dual_quadric(const Ellipsoid& e) {
  Matrix4d t = Matrix4d::Identity();
  t.topLeftCorner<3, 3>() = e.rotation;
  t.topRightCorner<3, 1>() = e.center;
  Vector4d d;
  d << e.semi_axes.array().square(), -1.0;
  DualQuadric q;
  q.matrix = t * d.asDiagonal() * t.transpose();
  q.matrix = 0.5 * (q.matrix + q.matrix.transpose()).eval();
  return q;
}

Ellipsoid dual_quadric_to_ellipsoid(const DualQuadric& q) {
  Matrix4d m = 0.5 * (q.matrix + q.matrix.transpose());
  if (!m.allFinite() || !(m(3, 3) < 0.0)) {
    throw Error(ErrorCode::NotAnEllipsoid, "dual quadric (3,3) entry must be negative");
  }
  m /= -m(3, 3);
  Ellipsoid e;
  e.center = -m.topRightCorner<3, 1>();
  const Matrix3d shape = m.topLeftCorner<3, 3>() + e.center * e.center.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix3d> es(shape);
  const Vector3d ev = es.eigenvalues();
  if (!(ev[0] > 0.0)) throw Error(ErrorCode::NotAnEllipsoid, "non-positive semi-axis");
  // Eigen sorts ascending; report major axis first.
  Matrix3d r;
  for (int i = 0; i < 3; ++i) {
    e.semi_axes[i] = std::sqrt(ev[2 - i]);
    r.col(i) = es.eigenvectors().col(2 - i);
  }
  if (r.determinant() < 0) r.col(2) = -r.col(2);
  e.rotation = r;
  return e;
}

Ellipse2D project_dual_quadric(const DualQuadric& q, const Pose& pose, const Intrinsics& k) {
  Matrix4d m = q.matrix;
  if (m(3, 3) != 0.0) m /= -m(3, 3);
  const Vector3d center = -m.topRightCorner<3, 1>();
  if (!((pose * center).z() > 0.0)) {
    throw Error(ErrorCode::BehindCamera, "quadric center is not in front of the camera");
  }
  const Matrix34d p = k.matrix() * pose.matrix();
  Matrix3d c = p * m * p.transpose();
  if (!(c(2, 2) < 0.0)) throw Error(ErrorCode::DegenerateConic, "camera inside or on the quadric");
  c /= -c(2, 2);
  Gaussian2D g;
  g.mean = -c.topRightCorner<2, 1>();
  g.covariance = c.topLeftCorner<2, 2>() + g.mean * g.mean.transpose();
  g.covariance(1, 0) = g.covariance(0, 1) = 0.5 * (g.covariance(0, 1) + g.covariance(1, 0));
  try {
    return gaussian_to_ellipse(g);
  } catch (const Error&) {
    throw Error(ErrorCode::DegenerateConic, "projected conic is not an ellipse");
  }
}

Ellipse2D project_ellipsoid(const Ellipsoid& e, const Pose& pose, const Intrinsics& k) {
  return project_dual_quadric(ellipsoid_to_dual_quadric(e), pose, k);
}

Vector2d project_point(const Vector3d& p, const Pose& pose, const Intrinsics& k) {
  const Vector3d pc = pose * p;
  if (!(pc.z() > 0.0)) throw Error(ErrorCode::BehindCamera, "point depth must be positive");
  return {k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
}

Vector3d back_project(const Vector2d& px, double depth, const Pose& pose, const Intrinsics& k) {
  const Vector3d pc((px.x() - k.cx) / k.fx * depth, (px.y() - k.cy) / k.fy * depth, depth);
  return pose.rotation.transpose() * (pc - pose.translation);
}

BBox ellipse_bbox(const Ellipse2D& e) {
  const double c = std::cos(e.angle);
  const double s = std::sin(e.angle);
  const double a2 = e.semi_axes[0] * e.semi_axes[0];
  const double b2 = e.semi_axes[1] * e.semi_axes[1];
  const Vector2d half(std::sqrt(a2 * c * c + b2 * s * s), std::sqrt(a2 * s * s + b2 * c * c));
  return {e.center - half, e.center + half};
}

BBox bbox_of_points(std::span<const Vector2d> pts) {
  BBox b;
  if (pts.empty()) return b;
  b.min = b.max = pts.front();
  for (const auto& p : pts) {
    b.min = b.min.cwiseMin(p);
    b.max = b.max.cwiseMax(p);
  }
  return b;
}

double bbox_iou(const BBox& a, const BBox& b) {
  const BBox inter{a.min.cwiseMax(b.min), a.max.cwiseMin(b.max)};
  const double i = inter.area();
  const double u = a.area() + b.area() - i;
  if (!(u > 0.0)) return (a.min == b.min && a.max == b.max) ? 1.0 : 0.0;
  return std::clamp(i / u, 0.0, 1.0);
}

Ellipse2D box_inscribed_ellipse(const BBox& b) {
  const Vector2d half = 0.5 * (b.max - b.min);
  return Ellipse2D::make(0.5 * (b.min + b.max), half.x(), half.y(), 0.0);
}

Matrix2d sqrtm_spd2(const Matrix2d& m) {
  Matrix2d sym = m;
  sym(0, 1) = sym(1, 0) = 0.5 * (m(0, 1) + m(1, 0));
  const double det = sym.determinant();
  const double tr = sym.trace();
  if (!(det > 0.0) || !(tr > 0.0) || !std::isfinite(det)) {
    throw Error(ErrorCode::NotPositiveDefinite, "sqrtm_spd2 needs an SPD matrix");
  }
  const double s = std::sqrt(det);
  const double t = std::sqrt(tr + 2.0 * s);
  Matrix2d r = (sym + s * Matrix2d::Identity()) / t;
  r(1, 0) = r(0, 1);
  return r;
}

std::vector<Vector2d> sample_ellipse(const Ellipse2D& e, int n) {
  std::vector<Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(std::max(n, 0)));
  const double c = std::cos(e.angle);
  const double s = std::sin(e.angle);
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * kPi * i / n;
    const double x = e.semi_axes[0] * std::cos(t);
    const double y = e.semi_axes[1] * std::sin(t);
    pts.emplace_back(e.center.x() + c * x - s * y, e.center.y() + s * x + c * y);
  }
  return pts;
}

bool point_in_polygon(const Vector2d& p, std::span<const Vector2d> polygon) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vector2d& a = polygon[i];
    const Vector2d& b = polygon[j];
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x = (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x();
      if (p.x() < x) inside = !inside;
    }
  }
  return inside;
}

bool point_in_ellipse(const Vector2d& p, const Ellipse2D& e) {
  const double c = std::cos(e.angle);
  const double s = std::sin(e.angle);
  const Vector2d d = p - e.center;
  const double u = (c * d.x() + s * d.y()) / e.semi_axes[0];
  const double v = (-s * d.x() + c * d.y()) / e.semi_axes[1];
  return u * u + v * v <= 1.0;
}

}  // namespace voom
