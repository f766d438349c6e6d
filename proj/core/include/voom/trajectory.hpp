#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "voom/geometry.hpp"

namespace voom {

/// One trajectory sample; the pose is world-from-camera (camera position and
/// orientation in the world), as in the TUM format.
struct TrajectoryEntry {
  double timestamp = 0.0;
  Pose world_from_camera;
};

/// `timestamp tx ty tz qx qy qz qw`, one pose per line, 9 significant digits.
void write_tum(std::ostream& out, std::span<const TrajectoryEntry> trajectory);
/// Ignores blank and '#' lines. Throws InvalidInput on malformed lines.
std::vector<TrajectoryEntry> read_tum(std::istream& in);

}  // namespace voom
