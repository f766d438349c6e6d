#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "voom/geometry.hpp"
#include "voom/observation.hpp"

namespace voom {

using KeyFrameId = std::int64_t;
using PointId = std::int64_t;
using ObjectId = std::int64_t;

struct MapPoint {
  PointId id = -1;
  Vector3d position = Vector3d::Zero();
  Descriptor descriptor{};
  std::map<KeyFrameId, int> observations;  // keyframe -> keypoint index
  std::optional<ObjectId> owner_object;
  KeyFrameId first_keyframe = -1;
};

struct ObjectLandmark {
  ObjectId id = -1;
  Ellipsoid ellipsoid;
  int category = 0;
  std::set<PointId> map_point_ids;
  std::map<KeyFrameId, Detection> observations;
};

struct KeyFrame {
  KeyFrameId id = -1;
  std::int64_t frame_id = -1;
  double timestamp = 0.0;
  Pose pose;
  std::vector<Keypoint> keypoints;
  std::vector<Detection> detections;
  std::map<int, PointId> matched_points;       // keypoint index -> map point
  std::map<int, ObjectId> detection_objects;   // detection index -> object
  std::set<ObjectId> observed_objects;
};

/// Weighted, symmetric keyframe graph. Raw shared-entity counts are stored;
/// edges below the graph's threshold are hidden from queries.
class CovisibilityGraph {
 public:
  explicit CovisibilityGraph(int edge_threshold = 1) : threshold_(edge_threshold) {}

  void add(KeyFrameId a, KeyFrameId b, int delta);
  void remove_node(KeyFrameId id);
  int weight(KeyFrameId a, KeyFrameId b) const;
  int threshold() const { return threshold_; }

  struct Edge {
    KeyFrameId a;
    KeyFrameId b;
    int weight;
    bool operator==(const Edge&) const = default;
  };
  /// Neighbors with weight >= max(min_weight, threshold), by descending
  /// weight and then descending id (most recent first).
  std::vector<KeyFrameId> neighbors(KeyFrameId id, int min_weight = 0) const;
  /// Each undirected edge once (a < b), sorted.
  std::vector<Edge> edges() const;
  const std::map<KeyFrameId, std::map<KeyFrameId, int>>& counts() const { return counts_; }

  bool operator==(const CovisibilityGraph& other) const { return counts_ == other.counts_; }

 private:
  int threshold_;
  std::map<KeyFrameId, std::map<KeyFrameId, int>> counts_;
};

struct LocalMap {
  std::vector<KeyFrameId> keyframes;  // current keyframe first
  std::vector<PointId> points;
  std::vector<KeyFrameId> fixed_keyframes;
};

struct LocalMapOptions {
  bool use_object_graph = true;
  int max_point_neighbors = 10;
  int point_min_weight = 15;
};

/// The hierarchical world model. Single writer; callers serialize access.
class Map {
 public:
  static constexpr int kPointEdgeThreshold = 15;
  static constexpr int kObjectEdgeThreshold = 1;

  Map();

  PointId add_map_point(const Vector3d& position, const Descriptor& descriptor);
  /// Stores the keyframe and adds the reciprocal point and object observations
  /// listed in matched_points and detection_objects. Throws DuplicateId,
  /// UnknownMapPoint or UnknownObject.
  KeyFrameId insert_keyframe(KeyFrame kf);
  ObjectId add_object(const Ellipsoid& ellipsoid, int category);

  void add_point_observation(KeyFrameId kf, int keypoint, PointId point);
  void remove_point_observation(KeyFrameId kf, PointId point);
  void add_object_observation(KeyFrameId kf, int detection, ObjectId object);
  /// Moves all observations of `from` onto `into` and erases `from`.
  void fuse_points(PointId from, PointId into);
  void erase_point(PointId id);
  void set_point_position(PointId id, const Vector3d& p);
  void set_keyframe_pose(KeyFrameId id, const Pose& pose);
  void set_object_ellipsoid(ObjectId id, const Ellipsoid& e);

  /// Re-derives point ownership for the given object: a point belongs to the
  /// object it was seen inside in the most keyframes, provided that count is
  /// at least min_views. Returns the object's resulting point set size.
  std::size_t update_object_points(ObjectId id, int min_views = 2);
  /// Explicitly binds points to an object (ownership moves if needed).
  void assign_object_points(ObjectId id, const std::vector<PointId>& points);

  std::vector<KeyFrameId> point_covisibility_neighbors(KeyFrameId id,
                                                       int min_weight = kPointEdgeThreshold) const;
  std::vector<KeyFrameId> object_covisibility_neighbors(KeyFrameId id) const;
  LocalMap local_map_for_frame(KeyFrameId id, const LocalMapOptions& options = {}) const;

  /// Removes points seen by fewer than two keyframes once at least
  /// `grace_keyframes` keyframes were inserted after their first one.
  std::size_t cull_map_points(int grace_keyframes = 3);

  /// Full referential-integrity and graph-consistency check; returns a list
  /// of human-readable violations (empty when consistent).
  std::vector<std::string> audit() const;
  CovisibilityGraph rebuild_point_graph() const;
  CovisibilityGraph rebuild_object_graph() const;

  const std::map<PointId, MapPoint>& points() const { return points_; }
  const std::map<ObjectId, ObjectLandmark>& objects() const { return objects_; }
  const std::map<KeyFrameId, KeyFrame>& keyframes() const { return keyframes_; }
  const CovisibilityGraph& point_graph() const { return point_graph_; }
  const CovisibilityGraph& object_graph() const { return object_graph_; }

  const MapPoint& point(PointId id) const;
  const ObjectLandmark& object(ObjectId id) const;
  const KeyFrame& keyframe(KeyFrameId id) const;
  bool has_point(PointId id) const { return points_.count(id) != 0; }
  bool has_keyframe(KeyFrameId id) const { return keyframes_.count(id) != 0; }
  bool has_object(ObjectId id) const { return objects_.count(id) != 0; }
  std::optional<KeyFrameId> first_keyframe() const;
  KeyFrameId next_keyframe_id() const { return next_keyframe_id_; }

 private:
  MapPoint& point_mut(PointId id);
  KeyFrame& keyframe_mut(KeyFrameId id);
  ObjectLandmark& object_mut(ObjectId id);
  void set_owner(PointId point, std::optional<ObjectId> owner);

  std::map<PointId, MapPoint> points_;
  std::map<ObjectId, ObjectLandmark> objects_;
  std::map<KeyFrameId, KeyFrame> keyframes_;
  CovisibilityGraph point_graph_;
  CovisibilityGraph object_graph_;
  PointId next_point_id_ = 0;
  ObjectId next_object_id_ = 0;
  KeyFrameId next_keyframe_id_ = 0;
};

/// Line-oriented text dump. Records, one per line, space separated:
///   P <id> <x> <y> <z> <owner_object|-1>
///   O <id> <category> <cx> <cy> <cz> <a> <b> <c> <qx> <qy> <qz> <qw>
///   K <id> <timestamp> <tx> <ty> <tz> <qx> <qy> <qz> <qw>   (world-from-camera)
///   EP <kf_a> <kf_b> <weight>   point covisibility edge (weight >= 15)
///   EO <kf_a> <kf_b> <weight>   object covisibility edge
/// Lines starting with '#' are comments.
void write_map_dump(const Map& map, std::ostream& out);

struct MapDump {
  struct PointRecord {
    PointId id;
    Vector3d position;
    ObjectId owner;
  };
  struct ObjectRecord {
    ObjectId id;
    int category;
    Ellipsoid ellipsoid;
  };
  struct KeyFrameRecord {
    KeyFrameId id;
    double timestamp;
    Pose world_from_camera;
  };
  std::vector<PointRecord> points;
  std::vector<ObjectRecord> objects;
  std::vector<KeyFrameRecord> keyframes;
  std::vector<CovisibilityGraph::Edge> point_edges;
  std::vector<CovisibilityGraph::Edge> object_edges;
};

MapDump read_map_dump(std::istream& in);

}  // namespace voom
