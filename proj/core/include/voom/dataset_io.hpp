#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "voom/geometry.hpp"
#include "voom/observation.hpp"
#include "voom/pipeline.hpp"
#include "voom/trajectory.hpp"

namespace voom {

struct SceneObject {
  std::int64_t id = -1;
  int category = 0;
  Ellipsoid ellipsoid;
};

struct ScenePoint {
  std::int64_t id = -1;
  Vector3d position = Vector3d::Zero();
  Descriptor descriptor{};
  std::int64_t object_id = -1;  // -1 for background structure
};

/// Ground-truth landmarks of a dataset.
struct Scene {
  Intrinsics camera;
  std::vector<SceneObject> objects;
  std::vector<ScenePoint> points;
};

/// One input frame plus its ground-truth pose when known. Ground-truth ids of
/// keypoints and detections travel in their source_id fields.
struct FrameRecord {
  FrameInput input;
  std::optional<Pose> world_from_camera;
};

struct Dataset {
  Scene scene;
  std::vector<FrameRecord> frames;

  std::vector<FrameInput> inputs() const;
  std::vector<TrajectoryEntry> groundtruth() const;
};

// frames.jsonl, one object per line:
//   {"id": int, "timestamp": s,
//    "pose": [tx,ty,tz,qx,qy,qz,qw]            (optional, world-from-camera),
//    "keypoints": [{"uv":[u,v], "depth": d, "desc": "<64 hex>", "gt_id": int}],
//    "detections": [{"category": int, "confidence": c,
//                    "contour": [x0,y0,x1,y1,...], "gt_id": int}]}
// depth <= 0 and gt_id -1 mean unknown; "pose" and "gt_id" may be omitted.
std::string frame_to_json(const FrameRecord& frame);
FrameRecord frame_from_json(const std::string& line);

// scene.json:
//   {"camera": {"fx","fy","cx","cy","width","height"},
//    "objects": [{"id","category","center":[3],"semi_axes":[3],"rotation":[qx,qy,qz,qw]}],
//    "points": [{"id","position":[3],"object":int}]}
std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);

/// Writes groundtruth.txt, frames.jsonl and scene.json into `dir`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
/// Reads a dataset directory. scene.json and groundtruth.txt are optional
/// only in the sense that frames.jsonl alone suffices to run; scene.json is
/// required for the camera intrinsics. Throws Io or InvalidInput.
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace voom
