#pragma once

#include <optional>
#include <set>
#include <span>
#include <vector>

#include "voom/map.hpp"
#include "voom/metrics.hpp"
#include "voom/observation.hpp"

namespace voom {

/// Object data association strategies.
///  DA1: box IoU >= 0.3, same category only.
///  DA2: box IoU >= 0.3, any category.
///  DA3: box IoU, any category; threshold lowered to 0.1 when labels agree.
///  DA4: normalized Wasserstein similarity >= 0.005.
enum class DAMethod { DA1, DA2, DA3, DA4 };

struct AssociationConfig {
  DAMethod method = DAMethod::DA4;
  double iou_threshold = 0.3;
  double iou_threshold_same_label = 0.1;
  double nw_threshold = 0.005;
  MetricConfig metric{};

  bool valid() const;
};

struct ObjectMatch {
  int detection_index = -1;
  ObjectId object_id = -1;
  double score = 0.0;
};

struct ObjectAssociation {
  std::vector<ObjectMatch> matches;
  /// Usable detections left without a landmark (candidates for new objects).
  std::vector<int> unmatched;
};

struct PointMatch {
  int keypoint_index = -1;
  PointId map_point_id = -1;
  int descriptor_distance = 0;
};

struct PointMatcherConfig {
  int max_distance = 50;      // Hamming, 256-bit descriptors
  double ratio = 0.8;         // best / second best
  double search_radius = 8.0; // pixels, projection-window search
};

/// Association score of an observed ellipse against a predicted one under
/// the configured method, or nullopt when the pair is gated out.
std::optional<double> object_score(const Ellipse2D& observed, int observed_category,
                                   const Ellipse2D& predicted, int predicted_category,
                                   const AssociationConfig& cfg);

/// Matches frame detections to object landmarks projected with `pose`.
/// Objects that cannot be projected are skipped; truncated or low-confidence
/// detections never match. Assignment is greedy by descending score.
ObjectAssociation associate_objects(std::span<const Detection> detections,
                                    std::span<const ObjectLandmark* const> objects, const Pose& pose,
                                    const Intrinsics& k, const AssociationConfig& cfg,
                                    double min_confidence = 0.2);

/// Compares each matched object's map points with the keypoints inside the
/// matched detection by descriptor distance.
std::vector<PointMatch> associate_map_points_via_objects(std::span<const Keypoint> keypoints,
                                                         std::span<const Detection> detections,
                                                         std::span<const ObjectMatch> matches,
                                                         const Map& map, const Pose& pose,
                                                         const PointMatcherConfig& cfg = {});

/// Bucketed keypoint lookup by pixel position.
class KeypointGrid {
 public:
  KeypointGrid(std::span<const Keypoint> keypoints, const Intrinsics& k, double cell = 16.0);
  std::vector<int> query(const Vector2d& center, double radius) const;

 private:
  std::span<const Keypoint> keypoints_;
  double cell_;
  int cols_;
  int rows_;
  std::vector<std::vector<int>> cells_;
};

/// Projection-window search: each map point is projected with `pose` and
/// compared with keypoints within cfg.search_radius. Keypoints and points
/// already present in `claimed_keypoints` / `claimed_points` are skipped.
std::vector<PointMatch> match_local_map(std::span<const Keypoint> keypoints,
                                        std::span<const PointId> local_points, const Map& map,
                                        const Pose& pose, const Intrinsics& k,
                                        const std::set<int>& claimed_keypoints,
                                        const std::set<PointId>& claimed_points,
                                        const PointMatcherConfig& cfg = {});

/// Keeps at most one match per keypoint and per map point, preferring the
/// smaller descriptor distance.
std::vector<PointMatch> resolve_point_conflicts(std::vector<PointMatch> proposals);

// Assignment on dense score matrices (rows x cols). Entries below
// `threshold` are not admissible. Result: column per row, or -1.
using ScoreMatrix = Eigen::MatrixXd;
std::vector<int> greedy_assignment(const ScoreMatrix& scores, double threshold);
/// Exact maximum-total-score partial assignment by dynamic programming over
/// column subsets; intended for small matrices (cols <= 16).
std::vector<int> assignment_oracle(const ScoreMatrix& scores, double threshold);
double assignment_score(const ScoreMatrix& scores, const std::vector<int>& assignment);

const char* to_string(DAMethod m);

}  // namespace voom
