#include "voom/association.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

namespace voom {

const char* to_string(DAMethod m) {
  switch (m) {
    case DAMethod::DA1: return "DA1";
    case DAMethod::DA2: return "DA2";
    case DAMethod::DA3: return "DA3";
    case DAMethod::DA4: return "DA4";
  }
  return "?";
}

bool AssociationConfig::valid() const {
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  return in_unit(iou_threshold) && in_unit(iou_threshold_same_label) && in_unit(nw_threshold) &&
         metric.valid();
}

std::optional<double> object_score(const Ellipse2D& observed, int observed_category,
                                   const Ellipse2D& predicted, int predicted_category,
                                   const AssociationConfig& cfg) {
  const bool same_label = observed_category == predicted_category;
  switch (cfg.method) {
    case DAMethod::DA1: {
      if (!same_label) return std::nullopt;
      const double iou = bbox_iou(ellipse_bbox(observed), ellipse_bbox(predicted));
      if (iou >= cfg.iou_threshold) return iou;
      return std::nullopt;
    }
    case DAMethod::DA2: {
      const double iou = bbox_iou(ellipse_bbox(observed), ellipse_bbox(predicted));
      if (iou >= cfg.iou_threshold) return iou;
      return std::nullopt;
    }
    case DAMethod::DA3: {
      const double iou = bbox_iou(ellipse_bbox(observed), ellipse_bbox(predicted));
      const double threshold = same_label ? cfg.iou_threshold_same_label : cfg.iou_threshold;
      if (iou >= threshold) return iou;
      return std::nullopt;
    }
    case DAMethod::DA4: {
      const double nw = normalized_wasserstein(ellipse_to_gaussian(observed),
                                               ellipse_to_gaussian(predicted), cfg.metric);
      if (nw >= cfg.nw_threshold) return nw;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

ObjectAssociation associate_objects(std::span<const Detection> detections,
                                    std::span<const ObjectLandmark* const> objects, const Pose& pose,
                                    const Intrinsics& k, const AssociationConfig& cfg,
                                    double min_confidence) {
  ObjectAssociation result;
  std::vector<std::pair<const ObjectLandmark*, Ellipse2D>> projected;
  projected.reserve(objects.size());
  for (const ObjectLandmark* o : objects) {
    try {
      projected.emplace_back(o, project_ellipsoid(o->ellipsoid, pose, k));
    } catch (const Error&) {
    }
  }

  struct Candidate {
    double score;
    int det;
    ObjectId obj;
  };
  std::vector<Candidate> candidates;
  std::vector<bool> usable(detections.size(), false);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    const Detection& det = detections[d];
    if (det.truncated || det.confidence < min_confidence) continue;
    usable[d] = true;
    for (const auto& [obj, ellipse] : projected) {
      if (auto s = object_score(det.ellipse, det.category, ellipse, obj->category, cfg)) {
        candidates.push_back({*s, static_cast<int>(d), obj->id});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(b.score, a.det, a.obj) < std::tie(a.score, b.det, b.obj);
  });

  std::set<int> used_det;
  std::set<ObjectId> used_obj;
  for (const auto& c : candidates) {
    if (used_det.count(c.det) || used_obj.count(c.obj)) continue;
    used_det.insert(c.det);
    used_obj.insert(c.obj);
    result.matches.push_back({c.det, c.obj, c.score});
  }
  std::sort(result.matches.begin(), result.matches.end(),
            [](const ObjectMatch& a, const ObjectMatch& b) { return a.detection_index < b.detection_index; });
  for (std::size_t d = 0; d < detections.size(); ++d) {
    if (usable[d] && !used_det.count(static_cast<int>(d))) result.unmatched.push_back(static_cast<int>(d));
  }
  return result;
}

std::vector<PointMatch> resolve_point_conflicts(std::vector<PointMatch> proposals) {
  std::sort(proposals.begin(), proposals.end(), [](const PointMatch& a, const PointMatch& b) {
    return std::tie(a.descriptor_distance, a.keypoint_index, a.map_point_id) <
           std::tie(b.descriptor_distance, b.keypoint_index, b.map_point_id);
  });
  std::set<int> kps;
  std::set<PointId> pts;
  std::vector<PointMatch> out;
  for (const auto& m : proposals) {
    if (kps.count(m.keypoint_index) || pts.count(m.map_point_id)) continue;
    kps.insert(m.keypoint_index);
    pts.insert(m.map_point_id);
    out.push_back(m);
  }
  std::sort(out.begin(), out.end(),
            [](const PointMatch& a, const PointMatch& b) { return a.keypoint_index < b.keypoint_index; });
  return out;
}

namespace {

// Best keypoint among `candidates` for one descriptor, subject to the
// distance threshold and ratio test.
std::optional<PointMatch> best_descriptor_match(const Descriptor& d, PointId pid,
                                                std::span<const Keypoint> keypoints,
                                                const std::vector<int>& candidates,
                                                const PointMatcherConfig& cfg) {
  int best = std::numeric_limits<int>::max();
  int second = std::numeric_limits<int>::max();
  int best_kp = -1;
  for (int idx : candidates) {
    const int dist = hamming(d, keypoints[static_cast<std::size_t>(idx)].descriptor);
    if (dist < best) {
      second = best;
      best = dist;
      best_kp = idx;
    } else if (dist < second) {
      second = dist;
    }
  }
  if (best_kp < 0 || best > cfg.max_distance) return std::nullopt;
  if (second != std::numeric_limits<int>::max() && !(best < cfg.ratio * second)) return std::nullopt;
  return PointMatch{best_kp, pid, best};
}

}  // namespace

std::vector<PointMatch> associate_map_points_via_objects(std::span<const Keypoint> keypoints,
                                                         std::span<const Detection> detections,
                                                         std::span<const ObjectMatch> matches,
                                                         const Map& map, const Pose& pose,
                                                         const PointMatcherConfig& cfg) {
  std::vector<PointMatch> proposals;
  for (const auto& m : matches) {
    if (!map.has_object(m.object_id)) continue;
    if (m.detection_index < 0 || m.detection_index >= static_cast<int>(detections.size())) continue;
    const auto& inside = detections[static_cast<std::size_t>(m.detection_index)].keypoint_indices;
    if (inside.empty()) continue;
    for (PointId pid : map.object(m.object_id).map_point_ids) {
      const MapPoint& p = map.point(pid);
      if (!((pose * p.position).z() > 0.0)) continue;
      if (auto pm = best_descriptor_match(p.descriptor, pid, keypoints, inside, cfg)) {
        proposals.push_back(*pm);
      }
    }
  }
  return resolve_point_conflicts(std::move(proposals));
}

KeypointGrid::KeypointGrid(std::span<const Keypoint> keypoints, const Intrinsics& k, double cell)
    : keypoints_(keypoints), cell_(cell) {
  cols_ = std::max(1, static_cast<int>(std::ceil(k.width / cell_)));
  rows_ = std::max(1, static_cast<int>(std::ceil(k.height / cell_)));
  cells_.resize(static_cast<std::size_t>(cols_ * rows_));
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    const Vector2d& px = keypoints[i].pixel;
    const int cx = std::clamp(static_cast<int>(std::floor(px.x() / cell_)), 0, cols_ - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(px.y() / cell_)), 0, rows_ - 1);
    cells_[static_cast<std::size_t>(cy * cols_ + cx)].push_back(static_cast<int>(i));
  }
}

std::vector<int> KeypointGrid::query(const Vector2d& center, double radius) const {
  std::vector<int> out;
  const int x0 = std::clamp(static_cast<int>(std::floor((center.x() - radius) / cell_)), 0, cols_ - 1);
  const int x1 = std::clamp(static_cast<int>(std::floor((center.x() + radius) / cell_)), 0, cols_ - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor((center.y() - radius) / cell_)), 0, rows_ - 1);
  const int y1 = std::clamp(static_cast<int>(std::floor((center.y() + radius) / cell_)), 0, rows_ - 1);
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      for (int idx : cells_[static_cast<std::size_t>(y * cols_ + x)]) {
        if ((keypoints_[static_cast<std::size_t>(idx)].pixel - center).squaredNorm() <= r2) {
          out.push_back(idx);
        }
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PointMatch> match_local_map(std::span<const Keypoint> keypoints,
                                        std::span<const PointId> local_points, const Map& map,
                                        const Pose& pose, const Intrinsics& k,
                                        const std::set<int>& claimed_keypoints,
                                        const std::set<PointId>& claimed_points,
                                        const PointMatcherConfig& cfg) {
  const KeypointGrid grid(keypoints, k);
  std::vector<PointMatch> proposals;
  for (PointId pid : local_points) {
    if (claimed_points.count(pid) || !map.has_point(pid)) continue;
    const MapPoint& p = map.point(pid);
    const Vector3d pc = pose * p.position;
    if (!(pc.z() > 0.0)) continue;
    const Vector2d uv(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
    if (!k.contains(uv, -cfg.search_radius)) continue;
    std::vector<int> near = grid.query(uv, cfg.search_radius);
    std::erase_if(near, [&](int idx) { return claimed_keypoints.count(idx) != 0; });
    if (auto pm = best_descriptor_match(p.descriptor, pid, keypoints, near, cfg)) proposals.push_back(*pm);
  }
  return resolve_point_conflicts(std::move(proposals));
}

std::vector<int> greedy_assignment(const ScoreMatrix& scores, double threshold) {
  struct Entry {
    double score;
    int row;
    int col;
  };
  std::vector<Entry> entries;
  for (int r = 0; r < scores.rows(); ++r) {
    for (int c = 0; c < scores.cols(); ++c) {
      if (scores(r, c) >= threshold) entries.push_back({scores(r, c), r, c});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(b.score, a.row, a.col) < std::tie(a.score, b.row, b.col);
  });
  std::vector<int> assignment(static_cast<std::size_t>(scores.rows()), -1);
  std::vector<bool> col_used(static_cast<std::size_t>(scores.cols()), false);
  for (const auto& e : entries) {
    if (assignment[static_cast<std::size_t>(e.row)] >= 0 || col_used[static_cast<std::size_t>(e.col)]) continue;
    assignment[static_cast<std::size_t>(e.row)] = e.col;
    col_used[static_cast<std::size_t>(e.col)] = true;
  }
  return assignment;
}

std::vector<int> assignment_oracle(const ScoreMatrix& scores, double threshold) {
  const int rows = static_cast<int>(scores.rows());
  const int cols = static_cast<int>(scores.cols());
  if (cols > 16) throw Error(ErrorCode::InvalidInput, "assignment_oracle supports at most 16 columns");
  const std::size_t masks = std::size_t{1} << cols;
  const double neg = -std::numeric_limits<double>::infinity();
  // best[r][mask]: best total for rows r.. given used columns `mask`.
  std::vector<std::vector<double>> best(static_cast<std::size_t>(rows + 1), std::vector<double>(masks, neg));
  std::vector<std::vector<int>> choice(static_cast<std::size_t>(rows), std::vector<int>(masks, -1));
  std::fill(best[static_cast<std::size_t>(rows)].begin(), best[static_cast<std::size_t>(rows)].end(), 0.0);
  for (int r = rows - 1; r >= 0; --r) {
    for (std::size_t mask = 0; mask < masks; ++mask) {
      double b = best[static_cast<std::size_t>(r + 1)][mask];
      int ch = -1;
      for (int c = 0; c < cols; ++c) {
        if (mask & (std::size_t{1} << c)) continue;
        if (scores(r, c) < threshold) continue;
        const double v = scores(r, c) + best[static_cast<std::size_t>(r + 1)][mask | (std::size_t{1} << c)];
        if (v > b) {
          b = v;
          ch = c;
        }
      }
      best[static_cast<std::size_t>(r)][mask] = b;
      choice[static_cast<std::size_t>(r)][mask] = ch;
    }
  }
  std::vector<int> assignment(static_cast<std::size_t>(rows), -1);
  std::size_t mask = 0;
  for (int r = 0; r < rows; ++r) {
    const int c = choice[static_cast<std::size_t>(r)][mask];
    assignment[static_cast<std::size_t>(r)] = c;
    if (c >= 0) mask |= std::size_t{1} << c;
  }
  return assignment;
}

double assignment_score(const ScoreMatrix& scores, const std::vector<int>& assignment) {
  double total = 0.0;
  for (std::size_t r = 0; r < assignment.size(); ++r) {
    if (assignment[r] >= 0) total += scores(static_cast<int>(r), assignment[r]);
  }
  return total;
}

}  // namespace voom
