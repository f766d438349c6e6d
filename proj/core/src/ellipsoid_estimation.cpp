#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Cholesky>

#include "voom/lie.hpp"
#include "voom/optimize.hpp"

namespace voom {

Ellipsoid EllipsoidParams::to_ellipsoid() const {
  Ellipsoid e;
  e.center = center;
  e.semi_axes = log_axes.array().exp();
  e.rotation = so3_exp(rotation);
  return e;
}

EllipsoidParams EllipsoidParams::from_ellipsoid(const Ellipsoid& e) {
  EllipsoidParams p;
  p.center = e.center;
  p.log_axes = e.semi_axes.array().log();
  p.rotation = so3_log(e.rotation);
  return p;
}

double ellipsoid_cost(std::span<const EllipsoidObservation> obs, const Intrinsics& k, const Ellipsoid& e,
                      WassersteinForm form) {
  const DualQuadric q = ellipsoid_to_dual_quadric(e);
  double cost = 0.0;
  for (const auto& o : obs) {
    try {
      cost += wasserstein2_sq(o.gaussian, ellipse_to_gaussian(project_dual_quadric(q, o.pose, k)), form);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return cost;
}

namespace {

using Vec9 = Eigen::Matrix<double, 9, 1>;
constexpr int kBlock = 6;

struct State {
  Vector3d center;
  Vector3d log_axes;
  Matrix3d rotation;

  Ellipsoid ellipsoid() const {
    Ellipsoid e;
    e.center = center;
    e.semi_axes = log_axes.array().exp();
    e.rotation = rotation;
    return e;
  }
  State plus(const Vec9& d) const {
    State s = *this;
    s.center += d.segment<3>(0);
    s.log_axes += d.segment<3>(3);
    s.rotation = rotation * so3_exp(d.segment<3>(6));
    s.rotation = Eigen::Quaterniond(s.rotation).normalized().toRotationMatrix();
    return s;
  }
};

bool residuals(const State& s, std::span<const EllipsoidObservation> obs, const Intrinsics& k,
               WassersteinForm form, Eigen::VectorXd& r) {
  r.resize(static_cast<Eigen::Index>(obs.size()) * kBlock);
  if (!s.log_axes.allFinite() || (s.log_axes.array() > 50.0).any()) return false;
  const DualQuadric q = ellipsoid_to_dual_quadric(s.ellipsoid());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    try {
      const Gaussian2D est = ellipse_to_gaussian(project_dual_quadric(q, obs[i].pose, k));
      r.segment<kBlock>(static_cast<Eigen::Index>(i) * kBlock) = wasserstein_residual(obs[i].gaussian, est, form);
    } catch (const Error&) {
      return false;
    }
  }
  return true;
}

double weighted_cost(const Eigen::VectorXd& r, const std::vector<double>& w) {
  double c = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    c += w[i] * w[i] * r.segment<kBlock>(static_cast<Eigen::Index>(i) * kBlock).squaredNorm();
  }
  return c;
}

std::vector<double> capped_weights(const Eigen::VectorXd& r, std::size_t n) {
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = r.segment<kBlock>(static_cast<Eigen::Index>(i) * kBlock).norm();
  std::vector<double> sorted = norms;
  std::sort(sorted.begin(), sorted.end());
  const auto idx = static_cast<std::size_t>(std::max(0.0, std::ceil(0.95 * static_cast<double>(n)) - 1.0));
  const double cap = sorted[std::min(idx, n - 1)];
  std::vector<double> w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] > cap && norms[i] > 0.0) w[i] = cap / norms[i];
  }
  return w;
}

void check_baseline(std::span<const EllipsoidObservation> obs, const Intrinsics& k) {
  std::vector<Vector3d> rays;
  rays.reserve(obs.size());
  for (const auto& o : obs) {
    const Vector3d ray_cam((o.gaussian.mean.x() - k.cx) / k.fx, (o.gaussian.mean.y() - k.cy) / k.fy, 1.0);
    rays.push_back((o.pose.rotation.transpose() * ray_cam).normalized());
  }
  const double min_cos = std::cos(5.0 * std::numbers::pi / 180.0);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    for (std::size_t j = i + 1; j < rays.size(); ++j) {
      if (rays[i].dot(rays[j]) <= min_cos) return;
    }
  }
  throw Error(ErrorCode::DegenerateBaseline, "viewing rays span less than 5 degrees");
}

}  // namespace

EllipsoidResult estimate_ellipsoid(std::span<const EllipsoidObservation> obs, const Intrinsics& k,
                                   const EllipsoidParams& init, const SolverConfig& cfg, WassersteinForm form) {
  if (obs.size() < 3) throw Error(ErrorCode::TooFewViews, "ellipsoid estimation needs >= 3 views");
  check_baseline(obs, k);

  EllipsoidResult result;
  State state{init.center, init.log_axes, so3_exp(init.rotation)};
  result.ellipsoid = state.ellipsoid();
  const std::size_t n = obs.size();
  std::vector<double> weights(n, 1.0);

  Eigen::VectorXd r;
  if (!residuals(state, obs, k, form, r)) {
    result.summary.initial_cost = result.summary.final_cost = std::numeric_limits<double>::infinity();
    return result;
  }
  double cost = weighted_cost(r, weights);
  result.summary.initial_cost = r.squaredNorm();
  double lambda = cfg.initial_damping;
  bool converged = cost == 0.0;

  Eigen::MatrixXd jac(r.size(), 9);
  Eigen::VectorXd rp;
  Eigen::VectorXd rm;
  for (int it = 0; it < cfg.max_iterations && !converged; ++it) {
    if (it >= 5) {
      weights = capped_weights(r, n);
      cost = weighted_cost(r, weights);
    }
    for (int j = 0; j < 9; ++j) {
      const double x = j < 3 ? state.center[j] : (j < 6 ? state.log_axes[j - 3] : 0.0);
      const double h = 1e-6 * std::max(1.0, std::abs(x));
      Vec9 d = Vec9::Zero();
      d[j] = h;
      const bool ok_p = residuals(state.plus(d), obs, k, form, rp);
      const bool ok_m = residuals(state.plus(-d), obs, k, form, rm);
      if (ok_p && ok_m) {
        jac.col(j) = (rp - rm) / (2.0 * h);
      } else if (ok_p) {
        jac.col(j) = (rp - r) / h;
      } else if (ok_m) {
        jac.col(j) = (r - rm) / h;
      } else {
        jac.col(j).setZero();
      }
    }
    Eigen::Matrix<double, 9, 9> hmat = Eigen::Matrix<double, 9, 9>::Zero();
    Vec9 g = Vec9::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const auto rows = static_cast<Eigen::Index>(i) * kBlock;
      const auto ji = jac.middleRows<kBlock>(rows);
      const double w2 = weights[i] * weights[i];
      hmat.noalias() += w2 * ji.transpose() * ji;
      g.noalias() += w2 * ji.transpose() * r.segment<kBlock>(rows);
    }
    Eigen::Matrix<double, 9, 9> damped = hmat;
    damped.diagonal() += lambda * hmat.diagonal().cwiseMax(1e-12);
    const Vec9 dx = damped.ldlt().solve(-g);
    const State trial = state.plus(dx);
    Eigen::VectorXd rt;
    const bool ok = dx.allFinite() && residuals(trial, obs, k, form, rt);
    const double trial_cost = ok ? weighted_cost(rt, weights) : std::numeric_limits<double>::infinity();
    if (trial_cost < cost) {
      const double rel = (cost - trial_cost) / cost;
      state = trial;
      r = rt;
      cost = trial_cost;
      lambda = std::max(lambda * 0.1, 1e-12);
      result.summary.iterations.push_back({it, cost, lambda, true});
      if (rel < cfg.min_relative_decrease || dx.norm() < cfg.min_step_norm || cost == 0.0) converged = true;
    } else {
      lambda *= 10.0;
      result.summary.iterations.push_back({it, cost, lambda, false});
      if (dx.norm() < cfg.min_step_norm || lambda > 1e12) converged = true;
    }
  }
  result.ellipsoid = state.ellipsoid();
  result.summary.final_cost = r.squaredNorm();
  result.summary.converged = converged;
  return result;
}

EllipsoidParams initialize_ellipsoid(const Detection& detection, double depth_hint, const Pose& pose,
                                     const Intrinsics& k) {
  if (!(depth_hint > 0.0)) throw Error(ErrorCode::InvalidInput, "depth hint must be positive");
  EllipsoidParams p;
  p.center = back_project(detection.ellipse.center, depth_hint, pose, k);
  const double f = 0.5 * (k.fx + k.fy);
  const double radius = depth_hint * 0.5 * (detection.ellipse.semi_axes[0] + detection.ellipse.semi_axes[1]) / f;
  p.log_axes = Vector3d::Constant(std::log(radius));
  p.rotation = Vector3d::Zero();
  return p;
}

}  // namespace voom
