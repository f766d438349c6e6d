#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "voom/map.hpp"

namespace voom {
namespace {

KeyFrame make_keyframe(std::int64_t frame, int keypoints) {
  KeyFrame kf;
  kf.frame_id = frame;
  kf.timestamp = 0.1 * static_cast<double>(frame);
  kf.keypoints.resize(static_cast<std::size_t>(keypoints));
  return kf;
}

void expect_consistent(const Map& map) {
  const auto problems = map.audit();
  EXPECT_TRUE(problems.empty()) << (problems.empty() ? "" : problems.front());
  EXPECT_EQ(map.rebuild_point_graph(), map.point_graph());
  EXPECT_EQ(map.rebuild_object_graph(), map.object_graph());
}

// Random keyframes over a pool of points and objects, interleaved with
// culling, fusion and erasure.
Map random_map(std::uint64_t seed, int keyframes) {
  std::mt19937_64 rng(seed);
  Map map;
  std::vector<PointId> pool;
  std::vector<ObjectId> objects;
  for (int i = 0; i < 4; ++i) objects.push_back(map.add_object(Ellipsoid{}, i));
  for (int k = 0; k < keyframes; ++k) {
    for (int i = 0; i < 30; ++i) pool.push_back(map.add_map_point(Vector3d::Random(), {rng(), 0, 0, 0}));
    KeyFrame kf = make_keyframe(k, 80);
    std::set<PointId> used;
    for (int kp = 0; kp < 80; ++kp) {
      const PointId pid = pool[pool.size() - 1 - rng() % std::min<std::size_t>(pool.size(), 90)];
      if (!map.has_point(pid) || !used.insert(pid).second || rng() % 3 == 0) continue;
      kf.matched_points[kp] = pid;
    }
    const int n_det = static_cast<int>(rng() % 3);
    for (int d = 0; d < n_det; ++d) {
      Detection det;
      for (int kp = 20 * d; kp < 20 * d + 20; ++kp) det.keypoint_indices.push_back(kp);
      kf.detections.push_back(det);
      kf.detection_objects[d] = objects[(static_cast<std::size_t>(k / 3) + static_cast<std::size_t>(d)) % objects.size()];
    }
    const KeyFrameId id = map.insert_keyframe(std::move(kf));
    for (ObjectId o : objects) map.update_object_points(o);
    if (k % 4 == 3) map.cull_map_points();
    if (k % 5 == 4) {
      std::vector<PointId> live;
      for (const auto& [pid, p] : map.points()) live.push_back(pid);
      if (live.size() > 2) map.fuse_points(live[rng() % live.size()], live[rng() % live.size()]);
    }
    if (k % 7 == 6 && !map.points().empty()) map.erase_point(map.points().begin()->first);
    (void)id;
  }
  return map;
}

TEST(Map, InsertKeyframeAddsReciprocalObservations) {
  Map map;
  const PointId p0 = map.add_map_point({0, 0, 1}, {});
  const PointId p1 = map.add_map_point({1, 0, 1}, {});
  const ObjectId o = map.add_object(Ellipsoid{}, 3);
  KeyFrame kf = make_keyframe(0, 4);
  kf.matched_points = {{0, p0}, {2, p1}};
  kf.detections.resize(1);
  kf.detection_objects = {{0, o}};
  const KeyFrameId id = map.insert_keyframe(kf);
  EXPECT_EQ(map.point(p0).observations.at(id), 0);
  EXPECT_EQ(map.point(p1).observations.at(id), 2);
  EXPECT_EQ(map.point(p0).first_keyframe, id);
  EXPECT_TRUE(map.object(o).observations.count(id));
  EXPECT_TRUE(map.keyframe(id).observed_objects.count(o));
  expect_consistent(map);
}

TEST(Map, InsertKeyframeErrors) {
  Map map;
  KeyFrame kf = make_keyframe(0, 2);
  const KeyFrameId id = map.insert_keyframe(kf);
  kf.id = id;
  try {
    map.insert_keyframe(kf);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateId);
  }
  KeyFrame bad = make_keyframe(1, 2);
  bad.matched_points = {{0, 999}};
  try {
    map.insert_keyframe(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownMapPoint);
  }
  KeyFrame bad_obj = make_keyframe(2, 2);
  bad_obj.detections.resize(1);
  bad_obj.detection_objects = {{0, 42}};
  try {
    map.insert_keyframe(bad_obj);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownObject);
  }
  try {
    map.local_map_for_frame(77);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownKeyFrame);
  }
  expect_consistent(map);
}

TEST(Map, TwoKeyframesSharingOneObject) {
  Map map;
  const ObjectId o = map.add_object(Ellipsoid{}, 0);
  KeyFrameId ids[3];
  for (int i = 0; i < 2; ++i) {
    KeyFrame kf = make_keyframe(i, 0);
    kf.detections.resize(1);
    kf.detection_objects = {{0, o}};
    ids[i] = map.insert_keyframe(kf);
  }
  ids[2] = map.insert_keyframe(make_keyframe(2, 0));
  EXPECT_EQ(map.object_covisibility_neighbors(ids[0]), std::vector<KeyFrameId>{ids[1]});
  EXPECT_EQ(map.object_covisibility_neighbors(ids[1]), std::vector<KeyFrameId>{ids[0]});
  EXPECT_EQ(map.object_graph().weight(ids[0], ids[1]), 1);
  EXPECT_TRUE(map.object_covisibility_neighbors(ids[2]).empty());
}

TEST(Map, PointNeighborsRespectThresholdAndOrder) {
  Map map;
  std::vector<PointId> pts;
  for (int i = 0; i < 60; ++i) pts.push_back(map.add_map_point(Vector3d::Zero(), {}));
  // kf0 sees all 60; kf1 shares 14 with it, kf2 shares 15, kf3 shares 40.
  auto kf_with = [&](int frame, int from, int count) {
    KeyFrame kf = make_keyframe(frame, count);
    for (int i = 0; i < count; ++i) kf.matched_points[i] = pts[static_cast<std::size_t>(from + i)];
    return map.insert_keyframe(kf);
  };
  const KeyFrameId k0 = kf_with(0, 0, 60);
  const KeyFrameId k1 = kf_with(1, 0, 14);
  const KeyFrameId k2 = kf_with(2, 20, 15);
  const KeyFrameId k3 = kf_with(3, 20, 40);
  EXPECT_EQ(map.point_covisibility_neighbors(k0), (std::vector<KeyFrameId>{k3, k2}));
  EXPECT_EQ(map.point_covisibility_neighbors(k0, 20), (std::vector<KeyFrameId>{k3}));
  EXPECT_EQ(map.point_covisibility_neighbors(k1).size(), 0u);
  EXPECT_EQ(map.point_graph().weight(k0, k1), 14);
  EXPECT_EQ(map.point_graph().weight(k1, k0), 14);
  for (const auto& e : map.point_graph().edges()) EXPECT_GE(e.weight, Map::kPointEdgeThreshold);
  expect_consistent(map);
}

TEST(Map, LocalMapComposition) {
  Map map;
  std::vector<PointId> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(map.add_map_point(Vector3d::Zero(), {}));
  const ObjectId o = map.add_object(Ellipsoid{}, 0);
  auto kf_with = [&](int frame, int from, int count, bool object) {
    KeyFrame kf = make_keyframe(frame, count);
    for (int i = 0; i < count; ++i) kf.matched_points[i] = pts[static_cast<std::size_t>(from + i)];
    if (object) {
      kf.detections.resize(1);
      kf.detection_objects = {{0, o}};
    }
    return map.insert_keyframe(kf);
  };
  const KeyFrameId old = kf_with(0, 0, 20, true);     // shares only the object with `cur`
  const KeyFrameId near = kf_with(1, 40, 30, false);  // shares 20 points with `cur`
  const KeyFrameId far = kf_with(2, 60, 30, false);   // shares 10 points with `cur`
  const KeyFrameId cur = kf_with(3, 50, 20, true);

  const LocalMap local = map.local_map_for_frame(cur);
  EXPECT_EQ(local.keyframes.front(), cur);
  const std::set<KeyFrameId> kfs(local.keyframes.begin(), local.keyframes.end());
  EXPECT_EQ(kfs, (std::set<KeyFrameId>{cur, old, near}));
  std::set<PointId> expected;
  for (int i = 0; i < 20; ++i) expected.insert(pts[static_cast<std::size_t>(i)]);
  for (int i = 40; i < 70; ++i) expected.insert(pts[static_cast<std::size_t>(i)]);
  EXPECT_EQ(std::set<PointId>(local.points.begin(), local.points.end()), expected);
  EXPECT_EQ(local.fixed_keyframes, std::vector<KeyFrameId>{far});

  LocalMapOptions points_only;
  points_only.use_object_graph = false;
  const LocalMap pl = map.local_map_for_frame(cur, points_only);
  EXPECT_EQ(std::set<KeyFrameId>(pl.keyframes.begin(), pl.keyframes.end()), (std::set<KeyFrameId>{cur, near}));
}

TEST(Map, CullRemovesUnsupportedPointsAfterGrace) {
  Map map;
  const PointId lonely = map.add_map_point(Vector3d::Zero(), {});
  const PointId shared = map.add_map_point(Vector3d::Zero(), {});
  const PointId orphan = map.add_map_point(Vector3d::Zero(), {});
  KeyFrame a = make_keyframe(0, 2);
  a.matched_points = {{0, lonely}, {1, shared}};
  map.insert_keyframe(a);
  KeyFrame b = make_keyframe(1, 1);
  b.matched_points = {{0, shared}};
  map.insert_keyframe(b);
  EXPECT_EQ(map.cull_map_points(3), 1u);  // only the never-observed point
  EXPECT_FALSE(map.has_point(orphan));
  EXPECT_TRUE(map.has_point(lonely));
  map.insert_keyframe(make_keyframe(2, 0));
  map.insert_keyframe(make_keyframe(3, 0));
  EXPECT_EQ(map.cull_map_points(3), 1u);
  EXPECT_FALSE(map.has_point(lonely));
  EXPECT_TRUE(map.has_point(shared));
  expect_consistent(map);
}

TEST(Map, FuseMovesObservations) {
  Map map;
  const PointId p = map.add_map_point(Vector3d::Zero(), {});
  const PointId q = map.add_map_point(Vector3d::Zero(), {});
  KeyFrame a = make_keyframe(0, 1);
  a.matched_points = {{0, p}};
  const KeyFrameId ka = map.insert_keyframe(a);
  KeyFrame b = make_keyframe(1, 1);
  b.matched_points = {{0, q}};
  const KeyFrameId kb = map.insert_keyframe(b);
  map.fuse_points(q, p);
  EXPECT_FALSE(map.has_point(q));
  EXPECT_EQ(map.point(p).observations.size(), 2u);
  EXPECT_EQ(map.keyframe(kb).matched_points.at(0), p);
  EXPECT_EQ(map.keyframe(ka).matched_points.at(0), p);
  expect_consistent(map);
}

TEST(Map, ObjectPointOwnershipNeedsTwoViews) {
  Map map;
  const PointId p = map.add_map_point(Vector3d::Zero(), {});
  const ObjectId o = map.add_object(Ellipsoid{}, 0);
  auto kf = [&](int frame) {
    KeyFrame k = make_keyframe(frame, 1);
    k.matched_points = {{0, p}};
    Detection d;
    d.keypoint_indices = {0};
    k.detections.push_back(d);
    k.detection_objects = {{0, o}};
    return map.insert_keyframe(k);
  };
  kf(0);
  EXPECT_EQ(map.update_object_points(o), 0u);
  EXPECT_FALSE(map.point(p).owner_object.has_value());
  kf(1);
  EXPECT_EQ(map.update_object_points(o), 1u);
  EXPECT_EQ(map.point(p).owner_object, o);
  EXPECT_TRUE(map.object(o).map_point_ids.count(p));
  expect_consistent(map);
}

TEST(Map, IntegrityUnderRandomMutation) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Map map = random_map(seed, 40);
    expect_consistent(map);
    for (const auto& [pid, p] : map.points()) {
      if (p.owner_object) EXPECT_TRUE(map.object(*p.owner_object).map_point_ids.count(pid));
    }
    for (const auto& [kid, kf] : map.keyframes()) {
      for (KeyFrameId n : map.point_covisibility_neighbors(kid)) {
        EXPECT_EQ(map.point_graph().weight(kid, n), map.point_graph().weight(n, kid));
      }
    }
  }
}

TEST(Map, LocalMapFixedKeyframesAreExactlyOutsideObservers) {
  const Map map = random_map(99, 40);
  for (const auto& [kid, kf] : map.keyframes()) {
    const LocalMap local = map.local_map_for_frame(kid);
    const std::set<KeyFrameId> in(local.keyframes.begin(), local.keyframes.end());
    std::set<KeyFrameId> expected_fixed;
    for (PointId pid : local.points) {
      for (const auto& [obs, kp] : map.point(pid).observations) {
        if (!in.count(obs)) expected_fixed.insert(obs);
      }
    }
    EXPECT_EQ(std::set<KeyFrameId>(local.fixed_keyframes.begin(), local.fixed_keyframes.end()), expected_fixed);
    for (KeyFrameId n : map.object_covisibility_neighbors(kid)) EXPECT_TRUE(in.count(n));
  }
}

TEST(MapDump, RoundTrip) {
  Map map = random_map(5, 12);
  Ellipsoid e;
  e.center = {1.5, -2.25, 3.125};
  e.semi_axes = {0.5, 0.3, 0.2};
  e.rotation = test::rotation_from_euler(0.1, 0.2, 0.3);
  map.add_object(e, 9);
  std::stringstream ss;
  write_map_dump(map, ss);
  const MapDump d = read_map_dump(ss);
  ASSERT_EQ(d.points.size(), map.points().size());
  ASSERT_EQ(d.objects.size(), map.objects().size());
  ASSERT_EQ(d.keyframes.size(), map.keyframes().size());
  EXPECT_EQ(d.point_edges, map.point_graph().edges());
  EXPECT_EQ(d.object_edges, map.object_graph().edges());
  for (const auto& r : d.points) EXPECT_LT((r.position - map.point(r.id).position).norm(), 1e-8);
  const auto& last = d.objects.back();
  EXPECT_EQ(last.category, 9);
  EXPECT_LT((last.ellipsoid.center - e.center).norm(), 1e-8);
  EXPECT_LT((last.ellipsoid.rotation - e.rotation).norm(), 1e-8);
  std::istringstream bad("P 1 2 x\n");
  EXPECT_THROW(read_map_dump(bad), Error);
}

}  // namespace
}  // namespace voom
