#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "voom/lie.hpp"
#include "voom/optimize.hpp"

namespace voom {

bool SolverConfig::valid() const {
  return max_iterations > 0 && initial_damping > 0 && min_relative_decrease > 0 && min_step_norm > 0 &&
         huber_delta > 0 && chi2_threshold > 0 && outlier_rounds > 0 && pixel_sigma > 0;
}

Vector2d reprojection_residual(const Vector2d& pixel, const Vector3d& point, const Pose& pose,
                               const Intrinsics& k) {
  const Vector3d pc = pose * point;
  return Vector2d(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy) - pixel;
}

ReprojectionJacobians reprojection_jacobians(const Vector3d& point, const Pose& pose, const Intrinsics& k) {
  const Vector3d pc = pose * point;
  const double iz = 1.0 / pc.z();
  const double iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> dproj;
  dproj << k.fx * iz, 0, -k.fx * pc.x() * iz2,  //
      0, k.fy * iz, -k.fy * pc.y() * iz2;
  Eigen::Matrix<double, 3, 6> dpc;
  dpc.leftCols<3>().setIdentity();
  dpc.rightCols<3>() = -skew(pc);
  ReprojectionJacobians j;
  j.pose = dproj * dpc;
  j.point = dproj * pose.rotation;
  return j;
}

double numeric_jacobian_check(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residual,
                              const Eigen::VectorXd& params, const Eigen::MatrixXd& analytic, double step) {
  Eigen::MatrixXd numeric(analytic.rows(), analytic.cols());
  for (Eigen::Index j = 0; j < params.size(); ++j) {
    const double h = step * std::max(1.0, std::abs(params[j]));
    Eigen::VectorXd plus = params;
    Eigen::VectorXd minus = params;
    plus[j] += h;
    minus[j] -= h;
    numeric.col(j) = (residual(plus) - residual(minus)) / (2.0 * h);
  }
  const double scale = analytic.cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return (numeric - analytic).cwiseAbs().maxCoeff();
  return (numeric - analytic).cwiseAbs().maxCoeff() / scale;
}

namespace {

struct RobustTerm {
  double cost;
  double weight;
};

RobustTerm huber(double squared_error, double delta) {
  const double e = std::sqrt(squared_error);
  if (e <= delta) return {squared_error, 1.0};
  return {2.0 * delta * e - delta * delta, delta / e};
}

double robust_cost(const Pose& pose, std::span<const Correspondence> matches, const std::vector<bool>& active,
                   const Intrinsics& k, const SolverConfig& cfg) {
  const double inv_var = 1.0 / (cfg.pixel_sigma * cfg.pixel_sigma);
  double cost = 0.0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (!active[i]) continue;
    if (!((pose * matches[i].point).z() > 0.0)) return std::numeric_limits<double>::infinity();
    const double s = reprojection_residual(matches[i].pixel, matches[i].point, pose, k).squaredNorm() * inv_var;
    cost += huber(s, cfg.huber_delta).cost;
  }
  return cost;
}

// LM over the active set. Returns true when a termination criterion was met.
bool refine_pose(Pose& pose, std::span<const Correspondence> matches, const std::vector<bool>& active,
                 const Intrinsics& k, const SolverConfig& cfg, SolveSummary& summary) {
  const double inv_var = 1.0 / (cfg.pixel_sigma * cfg.pixel_sigma);
  double cost = robust_cost(pose, matches, active, k, cfg);
  if (!std::isfinite(cost)) return false;
  if (cost == 0.0) return true;
  double lambda = cfg.initial_damping;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
    Vector6d g = Vector6d::Zero();
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if (!active[i]) continue;
      const Vector2d r = reprojection_residual(matches[i].pixel, matches[i].point, pose, k);
      const double w = huber(r.squaredNorm() * inv_var, cfg.huber_delta).weight * inv_var;
      const auto j = reprojection_jacobians(matches[i].point, pose, k).pose;
      h.noalias() += w * j.transpose() * j;
      g.noalias() += w * j.transpose() * r;
    }
    Eigen::Matrix<double, 6, 6> damped = h;
    damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-12);
    const Vector6d dx = damped.ldlt().solve(-g);
    const Pose trial = left_update(pose, dx);
    const double trial_cost = robust_cost(trial, matches, active, k, cfg);
    const bool accepted = std::isfinite(trial_cost) && trial_cost < cost;
    if (accepted) {
      if (trial_cost > cost) summary.monotone = false;
      const double rel = (cost - trial_cost) / cost;
      pose = trial;
      cost = trial_cost;
      lambda = std::max(lambda * 0.1, 1e-12);
      summary.iterations.push_back({static_cast<int>(summary.iterations.size()), cost, lambda, true});
      if (rel < cfg.min_relative_decrease || dx.norm() < cfg.min_step_norm || cost == 0.0) return true;
    } else {
      lambda *= 10.0;
      summary.iterations.push_back({static_cast<int>(summary.iterations.size()), cost, lambda, false});
      if (dx.norm() < cfg.min_step_norm || lambda > 1e12) return true;
    }
  }
  return false;
}

}  // namespace

PoseResult optimize_pose(const Pose& initial, std::span<const Correspondence> matches, const Intrinsics& k,
                         const SolverConfig& cfg) {
  if (matches.size() < 6) throw Error(ErrorCode::TooFewMatches, "pose optimization needs >= 6 matches");
  const double inv_var = 1.0 / (cfg.pixel_sigma * cfg.pixel_sigma);
  PoseResult result;
  result.pose = initial;
  std::vector<bool> active(matches.size(), true);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (!((initial * matches[i].point).z() > 0.0)) active[i] = false;
  }
  result.summary.initial_cost = robust_cost(initial, matches, active, k, cfg);

  bool converged = false;
  for (int round = 0; round < cfg.outlier_rounds; ++round) {
    if (std::count(active.begin(), active.end(), true) < 6) break;
    converged = refine_pose(result.pose, matches, active, k, cfg, result.summary);
    for (std::size_t i = 0; i < matches.size(); ++i) {
      const Vector3d pc = result.pose * matches[i].point;
      if (!(pc.z() > 0.0)) {
        active[i] = false;
        continue;
      }
      const double chi2 =
          reprojection_residual(matches[i].pixel, matches[i].point, result.pose, k).squaredNorm() * inv_var;
      active[i] = chi2 <= cfg.chi2_threshold;
    }
  }
  result.inliers = active;
  result.inlier_count = static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
  result.summary.converged = converged;
  result.summary.final_cost = robust_cost(result.pose, matches, active, k, cfg);
  return result;
}

}  // namespace voom
