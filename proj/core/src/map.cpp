#include "voom/map.hpp"

#include <algorithm>

namespace voom {

// ---------------------------------------------------------------------------
// CovisibilityGraph

void CovisibilityGraph::add(KeyFrameId a, KeyFrameId b, int delta) {
  if (a == b || delta == 0) return;
  for (auto [x, y] : {std::pair{a, b}, std::pair{b, a}}) {
    auto& row = counts_[x];
    const int w = (row[y] += delta);
    if (w <= 0) {
      row.erase(y);
      if (row.empty()) counts_.erase(x);
    }
  }
}

void CovisibilityGraph::remove_node(KeyFrameId id) {
  auto it = counts_.find(id);
  if (it == counts_.end()) return;
  for (const auto& [other, w] : it->second) {
    auto jt = counts_.find(other);
    if (jt == counts_.end()) continue;
    jt->second.erase(id);
    if (jt->second.empty()) counts_.erase(jt);
  }
  counts_.erase(id);
}

int CovisibilityGraph::weight(KeyFrameId a, KeyFrameId b) const {
  auto it = counts_.find(a);
  if (it == counts_.end()) return 0;
  auto jt = it->second.find(b);
  return jt == it->second.end() ? 0 : jt->second;
}

std::vector<KeyFrameId> CovisibilityGraph::neighbors(KeyFrameId id, int min_weight) const {
  std::vector<std::pair<int, KeyFrameId>> ranked;
  auto it = counts_.find(id);
  if (it == counts_.end()) return {};
  const int floor = std::max(min_weight, threshold_);
  for (const auto& [other, w] : it->second) {
    if (w >= floor) ranked.emplace_back(w, other);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& l, const auto& r) {
    return l.first != r.first ? l.first > r.first : l.second > r.second;
  });
  std::vector<KeyFrameId> out;
  out.reserve(ranked.size());
  for (const auto& [w, other] : ranked) out.push_back(other);
  return out;
}

std::vector<CovisibilityGraph::Edge> CovisibilityGraph::edges() const {
  std::vector<Edge> out;
  for (const auto& [a, row] : counts_) {
    for (const auto& [b, w] : row) {
      if (a < b && w >= threshold_) out.push_back({a, b, w});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Map

Map::Map() : point_graph_(kPointEdgeThreshold), object_graph_(kObjectEdgeThreshold) {}

const MapPoint& Map::point(PointId id) const {
  auto it = points_.find(id);
  if (it == points_.end()) throw Error(ErrorCode::UnknownMapPoint, std::to_string(id));
  return it->second;
}

const ObjectLandmark& Map::object(ObjectId id) const {
  auto it = objects_.find(id);
  if (it == objects_.end()) throw Error(ErrorCode::UnknownObject, std::to_string(id));
  return it->second;
}

const KeyFrame& Map::keyframe(KeyFrameId id) const {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) throw Error(ErrorCode::UnknownKeyFrame, std::to_string(id));
  return it->second;
}

MapPoint& Map::point_mut(PointId id) { return const_cast<MapPoint&>(point(id)); }
KeyFrame& Map::keyframe_mut(KeyFrameId id) { return const_cast<KeyFrame&>(keyframe(id)); }
ObjectLandmark& Map::object_mut(ObjectId id) { return const_cast<ObjectLandmark&>(object(id)); }

std::optional<KeyFrameId> Map::first_keyframe() const {
  if (keyframes_.empty()) return std::nullopt;
  return keyframes_.begin()->first;
}

PointId Map::add_map_point(const Vector3d& position, const Descriptor& descriptor) {
  if (!position.allFinite()) throw Error(ErrorCode::InvalidInput, "map point position not finite");
  MapPoint p;
  p.id = next_point_id_++;
  p.position = position;
  p.descriptor = descriptor;
  points_.emplace(p.id, std::move(p));
  return next_point_id_ - 1;
}

ObjectId Map::add_object(const Ellipsoid& ellipsoid, int category) {
  if (!ellipsoid.valid()) throw Error(ErrorCode::InvalidInput, "invalid ellipsoid");
  ObjectLandmark o;
  o.id = next_object_id_++;
  o.ellipsoid = ellipsoid;
  o.category = category;
  objects_.emplace(o.id, std::move(o));
  return next_object_id_ - 1;
}

KeyFrameId Map::insert_keyframe(KeyFrame kf) {
  if (kf.id < 0) kf.id = next_keyframe_id_;
  if (keyframes_.count(kf.id)) throw Error(ErrorCode::DuplicateId, "keyframe " + std::to_string(kf.id));
  if (!kf.pose.valid(1e-6)) throw Error(ErrorCode::InvalidInput, "keyframe pose invalid");
  for (const auto& [kp, pid] : kf.matched_points) {
    if (kp < 0 || kp >= static_cast<int>(kf.keypoints.size())) {
      throw Error(ErrorCode::InvalidInput, "matched keypoint index out of range");
    }
    if (!points_.count(pid)) throw Error(ErrorCode::UnknownMapPoint, std::to_string(pid));
  }
  for (const auto& [det, oid] : kf.detection_objects) {
    if (det < 0 || det >= static_cast<int>(kf.detections.size())) {
      throw Error(ErrorCode::InvalidInput, "detection index out of range");
    }
    if (!objects_.count(oid)) throw Error(ErrorCode::UnknownObject, std::to_string(oid));
  }

  const KeyFrameId id = kf.id;
  next_keyframe_id_ = std::max(next_keyframe_id_, id + 1);
  auto matched = std::move(kf.matched_points);
  auto det_objects = std::move(kf.detection_objects);
  kf.matched_points.clear();
  kf.detection_objects.clear();
  kf.observed_objects.clear();
  keyframes_.emplace(id, std::move(kf));

  for (const auto& [kp, pid] : matched) add_point_observation(id, kp, pid);
  for (const auto& [det, oid] : det_objects) add_object_observation(id, det, oid);
  return id;
}

void Map::add_point_observation(KeyFrameId kf_id, int keypoint, PointId pid) {
  KeyFrame& kf = keyframe_mut(kf_id);
  MapPoint& p = point_mut(pid);
  if (p.observations.count(kf_id)) return;  // one keypoint per point per keyframe
  if (kf.matched_points.count(keypoint)) return;
  for (const auto& [other, kp] : p.observations) point_graph_.add(kf_id, other, 1);
  p.observations.emplace(kf_id, keypoint);
  if (p.first_keyframe < 0 || kf_id < p.first_keyframe) p.first_keyframe = kf_id;
  kf.matched_points.emplace(keypoint, pid);
}

void Map::remove_point_observation(KeyFrameId kf_id, PointId pid) {
  MapPoint& p = point_mut(pid);
  auto it = p.observations.find(kf_id);
  if (it == p.observations.end()) return;
  KeyFrame& kf = keyframe_mut(kf_id);
  kf.matched_points.erase(it->second);
  p.observations.erase(it);
  for (const auto& [other, kp] : p.observations) point_graph_.add(kf_id, other, -1);
}

void Map::add_object_observation(KeyFrameId kf_id, int detection, ObjectId oid) {
  KeyFrame& kf = keyframe_mut(kf_id);
  ObjectLandmark& o = object_mut(oid);
  if (detection < 0 || detection >= static_cast<int>(kf.detections.size())) {
    throw Error(ErrorCode::InvalidInput, "detection index out of range");
  }
  if (o.observations.count(kf_id) || kf.detection_objects.count(detection)) return;
  for (const auto& [other, det] : o.observations) object_graph_.add(kf_id, other, 1);
  o.observations.emplace(kf_id, kf.detections[static_cast<std::size_t>(detection)]);
  kf.detection_objects.emplace(detection, oid);
  kf.observed_objects.insert(oid);
}

void Map::fuse_points(PointId from, PointId into) {
  if (from == into) return;
  const MapPoint src = point(from);
  point(into);
  for (const auto& [kf_id, kp] : src.observations) {
    remove_point_observation(kf_id, from);
    if (!point(into).observations.count(kf_id)) add_point_observation(kf_id, kp, into);
  }
  erase_point(from);
}

void Map::erase_point(PointId id) {
  MapPoint& p = point_mut(id);
  const auto obs = p.observations;
  for (const auto& [kf_id, kp] : obs) remove_point_observation(kf_id, id);
  set_owner(id, std::nullopt);
  points_.erase(id);
}

void Map::set_point_position(PointId id, const Vector3d& pos) { point_mut(id).position = pos; }

void Map::set_keyframe_pose(KeyFrameId id, const Pose& pose) { keyframe_mut(id).pose = pose; }

void Map::set_object_ellipsoid(ObjectId id, const Ellipsoid& e) {
  if (!e.valid()) throw Error(ErrorCode::InvalidInput, "invalid ellipsoid");
  object_mut(id).ellipsoid = e;
}

void Map::set_owner(PointId pid, std::optional<ObjectId> owner) {
  MapPoint& p = point_mut(pid);
  if (p.owner_object == owner) return;
  if (p.owner_object) {
    auto it = objects_.find(*p.owner_object);
    if (it != objects_.end()) it->second.map_point_ids.erase(pid);
  }
  p.owner_object = owner;
  if (owner) object_mut(*owner).map_point_ids.insert(pid);
}

std::size_t Map::update_object_points(ObjectId oid, int min_views) {
  const ObjectLandmark& o = object(oid);
  std::set<PointId> candidates(o.map_point_ids.begin(), o.map_point_ids.end());
  for (const auto& [kf_id, det] : o.observations) {
    const KeyFrame& kf = keyframe(kf_id);
    for (int kp : det.keypoint_indices) {
      auto it = kf.matched_points.find(kp);
      if (it != kf.matched_points.end()) candidates.insert(it->second);
    }
  }
  for (PointId pid : candidates) {
    const MapPoint& p = point(pid);
    std::map<ObjectId, int> votes;
    for (const auto& [kf_id, kp] : p.observations) {
      const KeyFrame& kf = keyframe(kf_id);
      for (const auto& [det_idx, owner] : kf.detection_objects) {
        const auto& inside = kf.detections[static_cast<std::size_t>(det_idx)].keypoint_indices;
        if (std::binary_search(inside.begin(), inside.end(), kp)) ++votes[owner];
      }
    }
    std::optional<ObjectId> best;
    int best_votes = 0;
    for (const auto& [owner, n] : votes) {
      if (n > best_votes) {
        best = owner;
        best_votes = n;
      }
    }
    if (best_votes < min_views) best.reset();
    // Keep an existing owner on ties.
    if (best && p.owner_object && votes[*p.owner_object] == best_votes) best = p.owner_object;
    set_owner(pid, best);
  }
  return object(oid).map_point_ids.size();
}

void Map::assign_object_points(ObjectId oid, const std::vector<PointId>& pts) {
  object(oid);
  for (PointId pid : pts) set_owner(pid, oid);
}

std::vector<KeyFrameId> Map::point_covisibility_neighbors(KeyFrameId id, int min_weight) const {
  keyframe(id);
  return point_graph_.neighbors(id, min_weight);
}

std::vector<KeyFrameId> Map::object_covisibility_neighbors(KeyFrameId id) const {
  keyframe(id);
  return object_graph_.neighbors(id, kObjectEdgeThreshold);
}

LocalMap Map::local_map_for_frame(KeyFrameId id, const LocalMapOptions& options) const {
  keyframe(id);
  LocalMap local;
  std::set<KeyFrameId> in_local{id};
  local.keyframes.push_back(id);
  if (options.use_object_graph) {
    for (KeyFrameId n : object_covisibility_neighbors(id)) {
      if (in_local.insert(n).second) local.keyframes.push_back(n);
    }
  }
  int added = 0;
  for (KeyFrameId n : point_covisibility_neighbors(id, options.point_min_weight)) {
    if (added >= options.max_point_neighbors) break;
    ++added;
    if (in_local.insert(n).second) local.keyframes.push_back(n);
  }

  std::set<PointId> pts;
  for (KeyFrameId k : local.keyframes) {
    for (const auto& [kp, pid] : keyframe(k).matched_points) pts.insert(pid);
  }
  local.points.assign(pts.begin(), pts.end());

  std::set<KeyFrameId> fixed;
  for (PointId pid : local.points) {
    for (const auto& [kf_id, kp] : point(pid).observations) {
      if (!in_local.count(kf_id)) fixed.insert(kf_id);
    }
  }
  local.fixed_keyframes.assign(fixed.begin(), fixed.end());
  return local;
}

std::size_t Map::cull_map_points(int grace_keyframes) {
  std::vector<PointId> doomed;
  for (const auto& [pid, p] : points_) {
    if (p.observations.empty()) {
      doomed.push_back(pid);
      continue;
    }
    const auto later = std::distance(keyframes_.upper_bound(p.first_keyframe), keyframes_.end());
    if (p.observations.size() < 2 && later >= grace_keyframes) doomed.push_back(pid);
  }
  for (PointId pid : doomed) erase_point(pid);
  return doomed.size();
}

CovisibilityGraph Map::rebuild_point_graph() const {
  CovisibilityGraph g(kPointEdgeThreshold);
  for (const auto& [pid, p] : points_) {
    for (auto a = p.observations.begin(); a != p.observations.end(); ++a) {
      for (auto b = std::next(a); b != p.observations.end(); ++b) g.add(a->first, b->first, 1);
    }
  }
  return g;
}

CovisibilityGraph Map::rebuild_object_graph() const {
  CovisibilityGraph g(kObjectEdgeThreshold);
  for (const auto& [oid, o] : objects_) {
    for (auto a = o.observations.begin(); a != o.observations.end(); ++a) {
      for (auto b = std::next(a); b != o.observations.end(); ++b) g.add(a->first, b->first, 1);
    }
  }
  return g;
}

std::vector<std::string> Map::audit() const {
  std::vector<std::string> issues;
  auto report = [&](const std::string& s) { issues.push_back(s); };

  for (const auto& [pid, p] : points_) {
    if (p.id != pid) report("point key/id mismatch " + std::to_string(pid));
    if (!p.position.allFinite()) report("point " + std::to_string(pid) + " not finite");
    for (const auto& [kf_id, kp] : p.observations) {
      auto it = keyframes_.find(kf_id);
      if (it == keyframes_.end()) {
        report("point " + std::to_string(pid) + " observed by missing keyframe " + std::to_string(kf_id));
        continue;
      }
      auto m = it->second.matched_points.find(kp);
      if (m == it->second.matched_points.end() || m->second != pid) {
        report("point " + std::to_string(pid) + " observation not reciprocated by keyframe " +
               std::to_string(kf_id));
      }
    }
    if (p.owner_object) {
      auto it = objects_.find(*p.owner_object);
      if (it == objects_.end() || !it->second.map_point_ids.count(pid)) {
        report("point " + std::to_string(pid) + " owner not reciprocated");
      }
    }
  }
  for (const auto& [kf_id, kf] : keyframes_) {
    if (!kf.pose.valid(1e-6)) report("keyframe " + std::to_string(kf_id) + " pose invalid");
    for (const auto& [kp, pid] : kf.matched_points) {
      if (kp < 0 || kp >= static_cast<int>(kf.keypoints.size())) {
        report("keyframe " + std::to_string(kf_id) + " keypoint index out of range");
      }
      auto it = points_.find(pid);
      if (it == points_.end()) {
        report("keyframe " + std::to_string(kf_id) + " references missing point " + std::to_string(pid));
        continue;
      }
      auto o = it->second.observations.find(kf_id);
      if (o == it->second.observations.end() || o->second != kp) {
        report("keyframe " + std::to_string(kf_id) + " match not reciprocated by point " +
               std::to_string(pid));
      }
    }
    for (const auto& [det, oid] : kf.detection_objects) {
      auto it = objects_.find(oid);
      if (it == objects_.end() || !it->second.observations.count(kf_id)) {
        report("keyframe " + std::to_string(kf_id) + " object link not reciprocated");
      }
      if (!kf.observed_objects.count(oid)) report("keyframe observed_objects out of sync");
    }
    if (kf.observed_objects.size() != kf.detection_objects.size()) {
      report("keyframe " + std::to_string(kf_id) + " observed_objects size mismatch");
    }
  }
  for (const auto& [oid, o] : objects_) {
    if (!o.ellipsoid.valid()) report("object " + std::to_string(oid) + " ellipsoid invalid");
    for (const auto& [kf_id, det] : o.observations) {
      auto it = keyframes_.find(kf_id);
      if (it == keyframes_.end() || !it->second.observed_objects.count(oid)) {
        report("object " + std::to_string(oid) + " observation not reciprocated");
      }
    }
    for (PointId pid : o.map_point_ids) {
      auto it = points_.find(pid);
      if (it == points_.end() || it->second.owner_object != oid) {
        report("object " + std::to_string(oid) + " point ownership dangling");
      }
    }
  }
  if (!(rebuild_point_graph() == point_graph_)) report("point covisibility graph out of sync");
  if (!(rebuild_object_graph() == object_graph_)) report("object covisibility graph out of sync");
  for (const auto& [a, row] : point_graph_.counts()) {
    for (const auto& [b, w] : row) {
      if (point_graph_.weight(b, a) != w) report("point graph asymmetric");
    }
  }
  return issues;
}

}  // namespace voom
