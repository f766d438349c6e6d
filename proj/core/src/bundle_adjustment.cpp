#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "voom/lie.hpp"
#include "voom/optimize.hpp"

namespace voom {

namespace {

using Mat66 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

struct Edge {
  int camera;  // index into cameras
  int point;   // index into points
  Vector2d pixel;
  KeyFrameId kf;
  PointId pid;
};

struct Camera {
  KeyFrameId id;
  Pose pose;
  bool fixed;
  int block = -1;  // row block in the reduced system, -1 when fixed
};

struct Problem {
  std::vector<Camera> cameras;
  std::vector<PointId> point_ids;
  std::vector<Vector3d> points;
  std::vector<Edge> edges;
  int free_cameras = 0;
};

double huber_cost(double s, double delta) {
  const double e = std::sqrt(s);
  return e <= delta ? s : 2.0 * delta * e - delta * delta;
}

double huber_weight(double s, double delta) {
  const double e = std::sqrt(s);
  return e <= delta ? 1.0 : delta / e;
}

double total_cost(const std::vector<Camera>& cams, const std::vector<Vector3d>& pts, const std::vector<Edge>& edges,
                  const std::vector<bool>& active, const Intrinsics& k, const SolverConfig& cfg) {
  const double inv_var = 1.0 / (cfg.pixel_sigma * cfg.pixel_sigma);
  double cost = 0.0;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!active[i]) continue;
    const Edge& e = edges[i];
    const Pose& pose = cams[static_cast<std::size_t>(e.camera)].pose;
    const Vector3d& p = pts[static_cast<std::size_t>(e.point)];
    if (!((pose * p).z() > 0.0)) return std::numeric_limits<double>::infinity();
    cost += huber_cost(reprojection_residual(e.pixel, p, pose, k).squaredNorm() * inv_var, cfg.huber_delta);
  }
  return cost;
}

// One LM run over the active edges; returns true on a termination criterion.
bool run_lm(Problem& prob, const std::vector<bool>& active, const Intrinsics& k, const SolverConfig& cfg,
            SolveSummary& summary) {
  const double inv_var = 1.0 / (cfg.pixel_sigma * cfg.pixel_sigma);
  const int nc = prob.free_cameras;
  const std::size_t np = prob.points.size();
  double cost = total_cost(prob.cameras, prob.points, prob.edges, active, k, cfg);
  if (!std::isfinite(cost) || cost == 0.0) return std::isfinite(cost);

  // Edges grouped per point.
  std::vector<std::vector<std::size_t>> by_point(np);
  for (std::size_t i = 0; i < prob.edges.size(); ++i) {
    if (active[i]) by_point[static_cast<std::size_t>(prob.edges[i].point)].push_back(i);
  }

  double lambda = cfg.initial_damping;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    Eigen::MatrixXd hcc = Eigen::MatrixXd::Zero(6 * nc, 6 * nc);
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(6 * nc);
    std::vector<Eigen::Matrix3d> hpp(np, Eigen::Matrix3d::Zero());
    std::vector<Vector3d> gp(np, Vector3d::Zero());
    // Per edge: camera-point coupling block (only for free cameras).
    std::vector<Mat63> hcp(prob.edges.size(), Mat63::Zero());

    for (std::size_t pi = 0; pi < np; ++pi) {
      for (std::size_t ei : by_point[pi]) {
        const Edge& e = prob.edges[ei];
        const Camera& cam = prob.cameras[static_cast<std::size_t>(e.camera)];
        const Vector3d& p = prob.points[pi];
        const Vector2d r = reprojection_residual(e.pixel, p, cam.pose, k);
        const double w = huber_weight(r.squaredNorm() * inv_var, cfg.huber_delta) * inv_var;
        const auto j = reprojection_jacobians(p, cam.pose, k);
        hpp[pi].noalias() += w * j.point.transpose() * j.point;
        gp[pi].noalias() += w * j.point.transpose() * r;
        if (cam.block >= 0) {
          const int b = 6 * cam.block;
          hcc.block<6, 6>(b, b).noalias() += w * j.pose.transpose() * j.pose;
          gc.segment<6>(b).noalias() += w * j.pose.transpose() * r;
          hcp[ei].noalias() = w * j.pose.transpose() * j.point;
        }
      }
    }

    // Damped reduced camera system.
    Eigen::MatrixXd s = hcc;
    for (int i = 0; i < 6 * nc; ++i) s(i, i) += lambda * std::max(hcc(i, i), 1e-12);
    Eigen::VectorXd rhs = -gc;
    std::vector<Eigen::Matrix3d> hpp_inv(np);
    for (std::size_t pi = 0; pi < np; ++pi) {
      Eigen::Matrix3d damped = hpp[pi];
      for (int d = 0; d < 3; ++d) damped(d, d) += lambda * std::max(hpp[pi](d, d), 1e-12);
      hpp_inv[pi] = damped.inverse();
      const auto& edges = by_point[pi];
      for (std::size_t a = 0; a < edges.size(); ++a) {
        const Edge& ea = prob.edges[edges[a]];
        const int ba = prob.cameras[static_cast<std::size_t>(ea.camera)].block;
        if (ba < 0) continue;
        const Mat63 tmp = hcp[edges[a]] * hpp_inv[pi];
        rhs.segment<6>(6 * ba).noalias() += tmp * gp[pi];
        for (std::size_t b = 0; b < edges.size(); ++b) {
          const Edge& eb = prob.edges[edges[b]];
          const int bb = prob.cameras[static_cast<std::size_t>(eb.camera)].block;
          if (bb < 0) continue;
          s.block<6, 6>(6 * ba, 6 * bb).noalias() -= tmp * hcp[edges[b]].transpose();
        }
      }
    }

    Eigen::VectorXd dc = Eigen::VectorXd::Zero(6 * nc);
    if (nc > 0) dc = s.ldlt().solve(rhs);
    std::vector<Camera> trial_cams = prob.cameras;
    for (auto& cam : trial_cams) {
      if (cam.block >= 0) cam.pose = left_update(cam.pose, dc.segment<6>(6 * cam.block));
    }
    std::vector<Vector3d> trial_pts = prob.points;
    double step_sq = dc.squaredNorm();
    for (std::size_t pi = 0; pi < np; ++pi) {
      if (by_point[pi].empty()) continue;
      Vector3d b = -gp[pi];
      for (std::size_t ei : by_point[pi]) {
        const int blk = prob.cameras[static_cast<std::size_t>(prob.edges[ei].camera)].block;
        if (blk >= 0) b.noalias() -= hcp[ei].transpose() * dc.segment<6>(6 * blk);
      }
      const Vector3d dp = hpp_inv[pi] * b;
      trial_pts[pi] += dp;
      step_sq += dp.squaredNorm();
    }
    const double step = std::sqrt(step_sq);
    const double trial_cost = total_cost(trial_cams, trial_pts, prob.edges, active, k, cfg);
    if (std::isfinite(trial_cost) && trial_cost < cost) {
      const double rel = (cost - trial_cost) / cost;
      prob.cameras = std::move(trial_cams);
      prob.points = std::move(trial_pts);
      cost = trial_cost;
      lambda = std::max(lambda * 0.1, 1e-12);
      summary.iterations.push_back({static_cast<int>(summary.iterations.size()), cost, lambda, true});
      if (rel < cfg.min_relative_decrease || step < cfg.min_step_norm) return true;
    } else {
      lambda *= 10.0;
      summary.iterations.push_back({static_cast<int>(summary.iterations.size()), cost, lambda, false});
      if (step < cfg.min_step_norm || lambda > 1e12) return true;
    }
  }
  return false;
}

}  // namespace

BundleAdjustmentResult local_bundle_adjustment(const Map& map, const LocalMap& local, const Intrinsics& k,
                                               const SolverConfig& cfg) {
  BundleAdjustmentResult result;
  Problem prob;
  std::map<KeyFrameId, int> cam_index;
  const auto gauge = map.first_keyframe();
  auto add_camera = [&](KeyFrameId id, bool fixed) {
    if (cam_index.count(id)) return;
    Camera c{id, map.keyframe(id).pose, fixed || (gauge && *gauge == id)};
    if (!c.fixed) c.block = prob.free_cameras++;
    cam_index[id] = static_cast<int>(prob.cameras.size());
    prob.cameras.push_back(c);
  };
  for (KeyFrameId id : local.keyframes) add_camera(id, false);
  for (KeyFrameId id : local.fixed_keyframes) add_camera(id, true);

  for (PointId pid : local.points) {
    if (!map.has_point(pid)) continue;
    const MapPoint& p = map.point(pid);
    std::vector<Edge> edges;
    for (const auto& [kf_id, kp] : p.observations) {
      auto it = cam_index.find(kf_id);
      if (it == cam_index.end()) continue;
      const KeyFrame& kf = map.keyframe(kf_id);
      edges.push_back({it->second, static_cast<int>(prob.points.size()),
                       kf.keypoints[static_cast<std::size_t>(kp)].pixel, kf_id, pid});
    }
    if (edges.size() < 2) continue;
    prob.point_ids.push_back(pid);
    prob.points.push_back(p.position);
    prob.edges.insert(prob.edges.end(), edges.begin(), edges.end());
  }

  const double inv_var = 1.0 / (cfg.pixel_sigma * cfg.pixel_sigma);
  auto classify = [&](std::vector<bool>& active) {
    for (std::size_t i = 0; i < prob.edges.size(); ++i) {
      const Edge& e = prob.edges[i];
      const Pose& pose = prob.cameras[static_cast<std::size_t>(e.camera)].pose;
      const Vector3d& p = prob.points[static_cast<std::size_t>(e.point)];
      const bool front = (pose * p).z() > 0.0;
      active[i] = front && reprojection_residual(e.pixel, p, pose, k).squaredNorm() * inv_var <= cfg.chi2_threshold;
    }
  };

  std::vector<bool> active(prob.edges.size(), true);
  for (std::size_t i = 0; i < prob.edges.size(); ++i) {
    const Edge& e = prob.edges[i];
    active[i] = (prob.cameras[static_cast<std::size_t>(e.camera)].pose * prob.points[static_cast<std::size_t>(e.point)]).z() > 0.0;
  }
  result.summary.initial_cost = total_cost(prob.cameras, prob.points, prob.edges, active, k, cfg);
  bool converged = run_lm(prob, active, k, cfg, result.summary);
  classify(active);
  converged = run_lm(prob, active, k, cfg, result.summary) && converged;
  classify(active);
  result.summary.final_cost = total_cost(prob.cameras, prob.points, prob.edges, active, k, cfg);
  result.summary.converged = converged;

  for (const auto& cam : prob.cameras) {
    if (!cam.fixed) result.poses[cam.id] = cam.pose;
  }
  for (std::size_t i = 0; i < prob.point_ids.size(); ++i) result.points[prob.point_ids[i]] = prob.points[i];
  for (std::size_t i = 0; i < prob.edges.size(); ++i) {
    if (!active[i]) result.outliers.emplace_back(prob.edges[i].kf, prob.edges[i].pid);
  }
  return result;
}

void apply_bundle_adjustment(Map& map, const BundleAdjustmentResult& result) {
  for (const auto& [id, pose] : result.poses) {
    if (map.has_keyframe(id)) map.set_keyframe_pose(id, pose);
  }
  for (const auto& [id, p] : result.points) {
    if (map.has_point(id) && p.allFinite()) map.set_point_position(id, p);
  }
  for (const auto& [kf, pid] : result.outliers) {
    if (map.has_point(pid) && map.has_keyframe(kf)) map.remove_point_observation(kf, pid);
  }
}

}  // namespace voom
