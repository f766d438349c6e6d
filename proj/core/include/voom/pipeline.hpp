#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voom/association.hpp"
#include "voom/config.hpp"
#include "voom/map.hpp"
#include "voom/optimize.hpp"
#include "voom/trajectory.hpp"

namespace voom {

/// Raw instance detection as delivered by a segmentation front end.
struct RawDetection {
  int category = 0;
  double confidence = 1.0;
  std::vector<Vector2d> contour;
  std::int64_t source_id = -1;
};

struct FrameInput {
  std::int64_t id = 0;
  double timestamp = 0.0;
  std::vector<Keypoint> keypoints;
  std::vector<RawDetection> detections;
};

enum class Ablation {
  Full,
  ObjectsInOdometryOnly,
  ObjectsInMappingOnly,
  /// IoU same-category association with box-inscribed observation ellipses.
  AlternateDAModel,
  /// No object landmarks at all; the reference points-only system.
  PointsOnly,
};

const char* to_string(Ablation a);

struct KeyframePolicy {
  double tracked_ratio = 0.9;
  int max_gap = 20;
  int min_gap = 3;
};

struct PipelineConfig {
  Ablation ablation = Ablation::Full;
  AssociationConfig association;
  DetectionPolicy detection;
  PointMatcherConfig matcher;
  SolverConfig pose_solver = SolverConfig::pose_defaults();
  SolverConfig ba_solver = SolverConfig::ba_defaults();
  SolverConfig ellipsoid_solver = SolverConfig::ellipsoid_defaults();
  WassersteinForm ellipsoid_form = WassersteinForm::Frobenius;
  KeyframePolicy keyframes;
  LocalMapOptions local_map;

  /// Keyframes in which an unmatched detection must be seen before it
  /// becomes a landmark.
  int object_init_views = 3;
  /// Candidates not re-observed for this many keyframes are dropped.
  int candidate_timeout = 8;
  bool cull_points = true;
  /// Fewer stage-2 inliers than this means tracking is lost.
  int min_tracked = 15;
  /// Object-aided re-association at keyframes ignores matches whose
  /// reprojection is further than this from the keypoint (pixels).
  double fusion_gate_px = 48.0;
  double max_depth = 12.0;
  bool deterministic = true;
  /// Keep per-iteration solver records for the diagnostics CSV.
  bool record_solves = false;

  bool objects_enabled() const { return ablation != Ablation::PointsOnly; }
  bool objects_in_odometry() const {
    return ablation == Ablation::Full || ablation == Ablation::ObjectsInOdometryOnly ||
           ablation == Ablation::AlternateDAModel;
  }
  bool objects_in_mapping() const {
    return ablation == Ablation::Full || ablation == Ablation::ObjectsInMappingOnly ||
           ablation == Ablation::AlternateDAModel;
  }
  /// Association settings after applying the ablation.
  AssociationConfig effective_association() const;
  DetectionPolicy effective_detection() const;
  void validate() const;
};

/// Reads pipeline settings from a key-value config (unknown keys are left
/// unconsumed for the caller to report).
PipelineConfig pipeline_config_from(const KeyValueConfig& kv, PipelineConfig base = {});
Ablation parse_ablation(const std::string& s);
DAMethod parse_da_method(const std::string& s);

/// Constant-velocity prediction from the most recent poses (oldest first).
/// One pose predicts itself; throws InvalidInput on an empty history.
Pose predict_pose(std::span<const Pose> history);

enum class TrackingState { Ok, Lost };

/// Association outcome of one detection, for evaluation.
struct DetectionLink {
  std::int64_t source_id = -1;
  ObjectId object_id = -1;  // -1 when unmatched
};

struct PointLink {
  std::int64_t source_id = -1;
  PointId point_id = -1;
};

struct FrameDiagnostics {
  std::int64_t frame_id = 0;
  double timestamp = 0.0;
  TrackingState state = TrackingState::Ok;
  bool keyframe = false;
  int object_matches = 0;
  int object_point_matches = 0;
  int projection_matches = 0;
  int local_map_matches = 0;
  int inliers_stage1 = 0;
  int inliers_stage2 = 0;
  Pose pose_stage1;  // camera-from-world, as estimated at tracking time
  Pose pose_stage2;
  /// Ground-truth ids of the detections offered to object association.
  std::vector<std::int64_t> detection_sources;
  std::vector<DetectionLink> detection_links;
  std::vector<PointLink> point_links;
};

struct SolveRecord {
  std::string kind;  // pose1, pose2, ba, ellipsoid
  std::int64_t frame_id = 0;
  std::int64_t subject = -1;  // object id for ellipsoid solves
  SolveSummary summary;
};

/// Counters used to check which object facilities each ablation touches.
struct CallAudit {
  int odometry_object_association = 0;
  int odometry_object_point_matching = 0;
  int mapping_object_association = 0;
  int mapping_object_point_matching = 0;
  int mapping_object_graph_queries = 0;
  int local_bundle_adjustments = 0;
  int ellipsoid_estimations = 0;
};

struct RunResult {
  std::vector<TrajectoryEntry> trajectory;
  Map map;
  std::vector<FrameDiagnostics> diagnostics;
  std::vector<SolveRecord> solves;
  CallAudit audit;
  std::size_t frames_total = 0;
  std::optional<std::int64_t> lost_at_frame;
};

/// Coarse-to-fine object-aided odometry with keyframe-based mapping.
class Pipeline {
 public:
  Pipeline(const Intrinsics& k, PipelineConfig cfg);
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  /// Tracks one frame and, when it becomes a keyframe, runs mapping (inline
  /// when deterministic, otherwise on the mapping thread). Frames after a
  /// tracking loss are rejected with state Lost.
  FrameDiagnostics process(const FrameInput& frame);
  /// Waits for pending mapping work.
  void flush();

  bool lost() const;
  /// Final estimate of every tracked frame, re-anchored on the current
  /// keyframe poses.
  std::vector<TrajectoryEntry> trajectory() const;
  const Map& map() const;
  const CallAudit& audit() const;
  const std::vector<SolveRecord>& solves() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

RunResult run_sequence(const Intrinsics& k, std::span<const FrameInput> frames, const PipelineConfig& cfg);

}  // namespace voom
