#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "voom/config.hpp"
#include "voom/dataset_io.hpp"

namespace voom {

enum class TrajectoryKind { Orbit, LoopWalk, Straight };

struct NoiseSpec {
  double keypoint_sigma_px = 0.7;
  double depth_sigma = 0.01;  // relative to depth
  double contour_sigma_px = 1.0;
  double dropout_rate = 0.05;
  double misclassification_rate = 0.05;
  double outlier_detection_rate = 0.02;  // per frame
  int descriptor_bit_flips = 5;
  double jitter_rotation_deg = 0.0;       // per-frame hand-held jitter
  double jitter_translation = 0.0;
};

struct SceneSpec {
  std::uint64_t seed = 1;
  Intrinsics camera;

  int object_count = 12;
  int category_count = 6;
  double object_size_min = 0.15;  // semi-axis range
  double object_size_max = 0.40;
  double object_ring_radius = 3.0;
  int points_per_object = 60;

  int background_points = 1500;
  double room_radius = 5.5;
  double room_height = 3.0;

  TrajectoryKind trajectory = TrajectoryKind::LoopWalk;
  int frames = 1000;
  double frame_rate = 30.0;
  double start_time = 1000.0;
  int laps = 3;
  double path_radius = 1.0;    // LoopWalk path; Orbit radius is room-relative
  double camera_height = 1.2;

  NoiseSpec noise;

  void validate() const;
};

/// Reads scene settings from a key-value config; unknown keys stay unconsumed.
SceneSpec scene_spec_from(const KeyValueConfig& kv, SceneSpec base = {});

/// Ground-truth camera-from-world poses, one per frame.
std::vector<Pose> generate_trajectory(const SceneSpec& spec);
Scene generate_landmarks(const SceneSpec& spec, std::mt19937_64& rng);

/// Renders one frame of observations of `scene` from `camera_from_world`.
FrameRecord render_frame(const Scene& scene, const SceneSpec& spec, const Pose& camera_from_world,
                         std::int64_t id, double timestamp, std::mt19937_64& rng);

/// Deterministic in the spec (including its seed). Throws InvalidSpec.
Dataset generate_scene(const SceneSpec& spec);

/// True when the segment from `from` to `to` passes through the ellipsoid
/// strictly before reaching `to`.
bool segment_hits_ellipsoid(const Vector3d& from, const Vector3d& to, const Ellipsoid& e);

}  // namespace voom
