#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "optimize_suite.hpp"
#include "oracles.hpp"
#include "voom/lie.hpp"
#include "voom/optimize.hpp"

namespace voom {
namespace {

void expect_monotone(const SolveSummary& s) {
  EXPECT_TRUE(s.monotone);
  double cost = s.initial_cost;
  for (const auto& it : s.iterations) {
    if (!it.accepted) continue;
    EXPECT_LE(it.cost, cost * (1.0 + 1e-12) + 1e-15);
    cost = it.cost;
  }
  EXPECT_LE(s.final_cost, s.initial_cost * (1.0 + 1e-12) + 1e-15);
}

TEST(Jacobians, ReprojectionMatchesCentralDifferences) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Intrinsics k;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Pose pose;
    pose.rotation = test::random_rotation(rng);
    pose.translation = Vector3d(u(rng), u(rng), u(rng));
    const Vector3d pc(u(rng), u(rng), 3.0 + 2.0 * u(rng));
    const Vector3d pw = pose.inverse() * pc;
    const Vector2d pixel(320 + 50 * u(rng), 240 + 50 * u(rng));
    const ReprojectionJacobians j = reprojection_jacobians(pw, pose, k);

    const auto pose_residual = [&](const Eigen::VectorXd& xi) -> Eigen::VectorXd {
      return reprojection_residual(pixel, pw, left_update(pose, Vector6d(xi)), k);
    };
    worst = std::max(worst, numeric_jacobian_check(pose_residual, Eigen::VectorXd::Zero(6), j.pose));
    const auto point_residual = [&](const Eigen::VectorXd& p) -> Eigen::VectorXd {
      return reprojection_residual(pixel, Vector3d(p), pose, k);
    };
    worst = std::max(worst, numeric_jacobian_check(point_residual, pw, j.point));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Jacobians, CheckDetectsWrongJacobian) {
  const auto f = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x.array().square(); };
  Eigen::VectorXd x(2);
  x << 1.0, 2.0;
  const Eigen::MatrixXd right = (2.0 * x).asDiagonal();
  EXPECT_LT(numeric_jacobian_check(f, x, right), 1e-8);
  EXPECT_GT(numeric_jacobian_check(f, x, Eigen::MatrixXd(x.asDiagonal())), 0.1);
}

TEST(PoseOptimization, NoiselessRecovery) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = test::make_pose_problem(seed, 100, 0.0);
    const PoseResult r = optimize_pose(p.initial, p.matches, Intrinsics{});
    EXPECT_LT(rotation_distance(r.pose, p.truth), 1e-6);
    EXPECT_LT((r.pose.translation - p.truth.translation).norm(), 1e-6);
    EXPECT_EQ(r.inlier_count, p.matches.size());
    expect_monotone(r.summary);
  }
}

TEST(PoseOptimization, IdentityProblemHasZeroCostAndUpdate) {
  const auto p = test::make_pose_problem(3, 50, 0.0);
  const PoseResult r = optimize_pose(p.truth, p.matches, Intrinsics{});
  EXPECT_NEAR(r.summary.initial_cost, 0.0, 1e-16);
  EXPECT_NEAR(r.summary.final_cost, 0.0, 1e-16);
  EXPECT_LT(rotation_distance(r.pose, p.truth), 1e-12);
  EXPECT_LT((r.pose.translation - p.truth.translation).norm(), 1e-12);
}

TEST(PoseOptimization, ThirtyPercentOutliers) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto p = test::make_pose_problem(seed, 150, 0.3);
    const PoseResult r = optimize_pose(p.initial, p.matches, Intrinsics{});
    EXPECT_LT(rotation_distance(r.pose, p.truth), 5e-3);
    EXPECT_LT((r.pose.translation - p.truth.translation).norm(), 5e-3);
    int injected = 0, flagged = 0;
    for (std::size_t i = 0; i < p.matches.size(); ++i) {
      if (!p.is_outlier[i]) continue;
      ++injected;
      if (!r.inliers[i]) ++flagged;
    }
    EXPECT_GE(flagged, 0.95 * injected) << "seed " << seed;
    expect_monotone(r.summary);
  }
}

TEST(PoseOptimization, TooFewMatches) {
  const auto p = test::make_pose_problem(4, 5, 0.0);
  try {
    optimize_pose(p.initial, p.matches, Intrinsics{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewMatches);
  }
}

TEST(EllipsoidEstimation, TenViewNoiselessRecovery) {
  for (auto form : {WassersteinForm::Frobenius, WassersteinForm::BuresTrace}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto p = test::make_ellipsoid_problem(seed, 10);
      ASSERT_GT((p.init.center - p.truth.center).norm(), 1e-2);
      ASSERT_GT(test::sorted_axes_error(p.init.to_ellipsoid(), p.truth), 0.05);
      const EllipsoidResult r = estimate_ellipsoid(p.views, Intrinsics{}, p.init, SolverConfig::ellipsoid_defaults(), form);
      EXPECT_LT((r.ellipsoid.center - p.truth.center).norm(), 1e-3) << "seed " << seed;
      EXPECT_LT(test::sorted_axes_error(r.ellipsoid, p.truth), 0.01) << "seed " << seed;
      expect_monotone(r.summary);
    }
  }
}

TEST(EllipsoidEstimation, GroundTruthIsStationary) {
  const auto p = test::make_ellipsoid_problem(7, 10);
  EXPECT_LT(ellipsoid_cost(p.views, Intrinsics{}, p.truth), 1e-12);
  const auto init = EllipsoidParams::from_ellipsoid(p.truth);
  const EllipsoidResult r = estimate_ellipsoid(p.views, Intrinsics{}, init);
  EXPECT_LT(r.summary.final_cost, 1e-12);
  EXPECT_LT((r.ellipsoid.center - p.truth.center).norm(), 1e-9);
  EXPECT_LT((r.ellipsoid.shape_matrix() - p.truth.shape_matrix()).norm(), 1e-9);
}

TEST(EllipsoidEstimation, Preconditions) {
  const auto p = test::make_ellipsoid_problem(8, 10);
  const std::vector<EllipsoidObservation> two(p.views.begin(), p.views.begin() + 2);
  try {
    estimate_ellipsoid(two, Intrinsics{}, p.init);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewViews);
  }
  // Three views from (almost) the same ray.
  std::vector<EllipsoidObservation> narrow;
  for (int i = 0; i < 3; ++i) {
    const Pose pose = test::look_at(p.truth.center + Vector3d(3.0, 0.01 * i, 0.5), p.truth.center);
    narrow.push_back({ellipse_to_gaussian(project_ellipsoid(p.truth, pose, Intrinsics{})), pose});
  }
  try {
    estimate_ellipsoid(narrow, Intrinsics{}, p.init);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateBaseline);
  }
}

TEST(EllipsoidEstimation, RigidEquivariance) {
  const auto p = test::make_ellipsoid_problem(9, 10);
  Pose g;
  g.rotation = test::rotation_from_euler(0.3, -0.2, 1.1);
  g.translation = Vector3d(2.0, -1.0, 0.5);
  // World points map by g; camera-from-world poses compose with g^-1.
  std::vector<EllipsoidObservation> moved = p.views;
  for (auto& v : moved) v.pose = v.pose * g.inverse();
  EllipsoidParams init = p.init;
  const Ellipsoid e0 = p.init.to_ellipsoid();
  Ellipsoid e1 = e0;
  e1.center = g * e0.center;
  e1.rotation = g.rotation * e0.rotation;
  init = EllipsoidParams::from_ellipsoid(e1);

  const auto a = estimate_ellipsoid(p.views, Intrinsics{}, p.init).ellipsoid;
  const auto b = estimate_ellipsoid(moved, Intrinsics{}, init).ellipsoid;
  EXPECT_LT((g * a.center - b.center).norm(), 1e-6);
  const Matrix3d sa = g.rotation * a.shape_matrix() * g.rotation.transpose();
  EXPECT_LT((sa - b.shape_matrix()).norm(), 1e-6);
}

TEST(EllipsoidEstimation, InitializationFromDetection) {
  const Intrinsics k;
  Detection d;
  d.ellipse = Ellipse2D::make({400, 200}, 50, 30, 0.3);
  const Pose pose = test::look_at({0, -4, 1}, {0, 0, 1});
  const auto init = initialize_ellipsoid(d, 4.0, pose, k);
  const Ellipsoid e = init.to_ellipsoid();
  EXPECT_LT((e.center - back_project({400, 200}, 4.0, pose, k)).norm(), 1e-9);
  EXPECT_NEAR(e.semi_axes[0], 4.0 * 40.0 / 500.0, 1e-9);
  EXPECT_LT((e.rotation - Matrix3d::Identity()).norm(), 1e-12);
}

// Ring of keyframes looking at a point cloud; poses other than the first
// two are perturbed, observations are exact projections of the true points.
struct BaScene {
  Map map;
  std::map<KeyFrameId, Pose> truth;
};

BaScene make_ba_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const Intrinsics k;
  BaScene s;
  std::vector<Vector3d> pts;
  std::vector<PointId> ids;
  for (int i = 0; i < 150; ++i) {
    pts.emplace_back(2.0 * u(rng), 2.0 * u(rng), 1.0 * u(rng));
    const Vector3d noisy = pts.back() + 0.01 * Vector3d(n(rng), n(rng), n(rng));
    ids.push_back(s.map.add_map_point(noisy, {}));
  }
  s.map.add_object(Ellipsoid{}, 0);
  for (int f = 0; f < 8; ++f) {
    const double phi = 0.15 * f;
    const Pose truth = test::look_at({7.0 * std::cos(phi), 7.0 * std::sin(phi), 1.0}, Vector3d::Zero());
    KeyFrame kf;
    kf.frame_id = f;
    kf.timestamp = f;
    kf.pose = truth;
    if (f >= 2) {
      Vector6d xi;
      for (int j = 0; j < 6; ++j) xi[j] = 0.01 * n(rng);
      kf.pose = left_update(truth, xi);
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vector2d px = project_point(pts[i], truth, k);
      if (!k.contains(px)) continue;
      Keypoint kp;
      kp.pixel = px;
      kf.matched_points[static_cast<int>(kf.keypoints.size())] = ids[i];
      kf.keypoints.push_back(kp);
    }
    const KeyFrameId id = s.map.insert_keyframe(kf);
    s.truth[id] = truth;
  }
  return s;
}

std::uint64_t object_checksum(const Map& map) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [id, o] : map.objects()) {
    const Ellipsoid& e = o.ellipsoid;
    for (const double* block : {e.center.data(), e.semi_axes.data(), e.rotation.data()}) {
      const int n = block == e.rotation.data() ? 9 : 3;
      for (int i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &block[i], sizeof bits);
        h = (h ^ bits) * 1099511628211ull;
      }
    }
  }
  return h;
}

TEST(BundleAdjustment, ReducesErrorAndRespectsGauge) {
  BaScene s = make_ba_scene(41);
  const KeyFrameId last = s.map.keyframes().rbegin()->first;
  LocalMap local;
  for (const auto& [id, kf] : s.map.keyframes()) {
    if (id >= 1) local.keyframes.push_back(id);
  }
  std::reverse(local.keyframes.begin(), local.keyframes.end());
  ASSERT_EQ(local.keyframes.front(), last);
  for (const auto& [pid, p] : s.map.points()) local.points.push_back(pid);
  local.fixed_keyframes = {0};

  const std::uint64_t before = object_checksum(s.map);
  const Pose fixed0 = s.map.keyframe(0).pose;
  double err_before = 0.0;
  for (const auto& [id, t] : s.truth) err_before += (s.map.keyframe(id).pose.center() - t.center()).norm();

  SolverConfig cfg = SolverConfig::ba_defaults();
  cfg.max_iterations = 20;
  const auto r = local_bundle_adjustment(s.map, local, Intrinsics{}, cfg);
  expect_monotone(r.summary);
  EXPECT_LT(r.summary.final_cost, 0.1 * r.summary.initial_cost);
  EXPECT_FALSE(r.poses.count(0));
  apply_bundle_adjustment(s.map, r);

  EXPECT_EQ(object_checksum(s.map), before);
  EXPECT_EQ(std::memcmp(s.map.keyframe(0).pose.rotation.data(), fixed0.rotation.data(), sizeof(double) * 9), 0);
  EXPECT_EQ(std::memcmp(s.map.keyframe(0).pose.translation.data(), fixed0.translation.data(), sizeof(double) * 3), 0);
  double err_after = 0.0;
  for (const auto& [id, t] : s.truth) err_after += (s.map.keyframe(id).pose.center() - t.center()).norm();
  EXPECT_LT(err_after, 0.5 * err_before);
  EXPECT_TRUE(s.map.audit().empty());
}

TEST(BundleAdjustment, FirstKeyframeAnchorsEvenWhenLocal) {
  BaScene s = make_ba_scene(42);
  const LocalMap local = s.map.local_map_for_frame(s.map.keyframes().rbegin()->first);
  const Pose first = s.map.keyframe(0).pose;
  const auto r = local_bundle_adjustment(s.map, local, Intrinsics{});
  EXPECT_FALSE(r.poses.count(0));
  for (KeyFrameId f : local.fixed_keyframes) EXPECT_FALSE(r.poses.count(f));
  apply_bundle_adjustment(s.map, r);
  EXPECT_EQ(s.map.keyframe(0).pose.translation, first.translation);
  EXPECT_EQ(s.map.keyframe(0).pose.rotation, first.rotation);
  expect_monotone(r.summary);
}

}  // namespace
}  // namespace voom
