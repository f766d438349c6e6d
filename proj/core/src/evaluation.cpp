#include "voom/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include <Eigen/Geometry>

namespace voom {

AteResult ate(std::span<const TrajectoryEntry> estimated, std::span<const TrajectoryEntry> groundtruth, bool align,
              double max_dt) {
  std::vector<const TrajectoryEntry*> gt;
  gt.reserve(groundtruth.size());
  for (const auto& g : groundtruth) gt.push_back(&g);
  std::sort(gt.begin(), gt.end(), [](auto* a, auto* b) { return a->timestamp < b->timestamp; });

  std::vector<Vector3d> est_pos;
  std::vector<Vector3d> gt_pos;
  for (const auto& e : estimated) {
    auto it = std::lower_bound(gt.begin(), gt.end(), e.timestamp,
                               [](const TrajectoryEntry* g, double t) { return g->timestamp < t; });
    const TrajectoryEntry* best = nullptr;
    double best_dt = max_dt;
    for (auto c : {it, it == gt.begin() ? gt.end() : it - 1}) {
      if (c == gt.end()) continue;
      const double dt = std::abs((*c)->timestamp - e.timestamp);
      if (dt <= best_dt) {
        best_dt = dt;
        best = *c;
      }
    }
    if (!best) continue;
    est_pos.push_back(e.world_from_camera.translation);
    gt_pos.push_back(best->world_from_camera.translation);
  }
  if (est_pos.empty()) throw Error(ErrorCode::NoOverlap, "no trajectory samples pair up within the time tolerance");

  AteResult r;
  r.pairs = est_pos.size();
  if (align && r.pairs >= 3) {
    Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(r.pairs));
    Eigen::Matrix3Xd dst(3, static_cast<Eigen::Index>(r.pairs));
    for (std::size_t i = 0; i < r.pairs; ++i) {
      src.col(static_cast<Eigen::Index>(i)) = est_pos[i];
      dst.col(static_cast<Eigen::Index>(i)) = gt_pos[i];
    }
    const Matrix4d t = Eigen::umeyama(src, dst, false);
    r.alignment.rotation = t.topLeftCorner<3, 3>();
    r.alignment.translation = t.topRightCorner<3, 1>();
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < r.pairs; ++i) sum += ((r.alignment * est_pos[i]) - gt_pos[i]).squaredNorm();
  r.rmse = std::sqrt(sum / static_cast<double>(r.pairs));
  return r;
}

double ate_rmse(std::span<const TrajectoryEntry> estimated, std::span<const TrajectoryEntry> groundtruth,
                bool align) {
  return ate(estimated, groundtruth, align).rmse;
}

double MatchScores::precision() const {
  const auto n = true_positives + false_positives;
  return n ? static_cast<double>(true_positives) / static_cast<double>(n) : 0.0;
}

double MatchScores::recall() const {
  const auto n = true_positives + false_negatives;
  return n ? static_cast<double>(true_positives) / static_cast<double>(n) : 0.0;
}

double MatchScores::f1() const {
  const double p = precision();
  const double r = recall();
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

namespace {

template <typename Counts>
std::int64_t majority(const Counts& votes) {
  std::int64_t best = -1;
  int best_n = 0;
  for (const auto& [id, n] : votes) {
    if (n > best_n) {
      best = id;
      best_n = n;
    }
  }
  return best;
}

}  // namespace

AssociationReport association_report(const RunResult& run, const Dataset& dataset) {
  const Map& map = run.map;
  AssociationReport report;

  // Objects.
  std::map<ObjectId, std::int64_t> object_gt;
  std::map<std::int64_t, std::int64_t> gt_first_frame;  // gt id -> first frame with a landmark for it
  for (const auto& [oid, o] : map.objects()) {
    std::map<std::int64_t, int> votes;
    std::int64_t first = -1;
    for (const auto& [kf_id, det] : o.observations) {
      if (det.source_id >= 0) ++votes[det.source_id];
      const std::int64_t f = map.keyframe(kf_id).frame_id;
      if (first < 0 || f < first) first = f;
    }
    const std::int64_t g = majority(votes);
    object_gt[oid] = g;
    if (g >= 0) {
      auto it = gt_first_frame.find(g);
      if (it == gt_first_frame.end() || first < it->second) gt_first_frame[g] = first;
    }
  }
  for (const auto& d : run.diagnostics) {
    if (d.state != TrackingState::Ok) continue;
    std::set<std::int64_t> correct;
    for (const auto& link : d.detection_links) {
      auto it = object_gt.find(link.object_id);
      if (it == object_gt.end()) continue;
      if (link.source_id >= 0 && it->second == link.source_id) {
        ++report.objects.true_positives;
        correct.insert(link.source_id);
      } else {
        ++report.objects.false_positives;
      }
    }
    for (std::int64_t src : d.detection_sources) {
      if (src < 0 || correct.count(src)) continue;
      auto it = gt_first_frame.find(src);
      if (it != gt_first_frame.end() && it->second < d.frame_id) ++report.objects.false_negatives;
    }
  }

  // Points.
  std::map<PointId, std::int64_t> point_gt;
  std::set<std::int64_t> represented;
  for (const auto& [pid, p] : map.points()) {
    std::map<std::int64_t, int> votes;
    for (const auto& [kf_id, kp] : p.observations) {
      const std::int64_t s = map.keyframe(kf_id).keypoints[static_cast<std::size_t>(kp)].source_id;
      if (s >= 0) ++votes[s];
    }
    const std::int64_t g = majority(votes);
    point_gt[pid] = g;
    if (g >= 0) represented.insert(g);
  }
  std::map<std::int64_t, const FrameRecord*> frames_by_id;
  for (const auto& f : dataset.frames) frames_by_id[f.input.id] = &f;
  for (const auto& d : run.diagnostics) {
    if (d.state != TrackingState::Ok) continue;
    std::set<std::int64_t> correct;
    for (const auto& link : d.point_links) {
      auto it = point_gt.find(link.point_id);
      if (it == point_gt.end()) continue;
      if (link.source_id >= 0 && it->second == link.source_id) {
        ++report.points.true_positives;
        correct.insert(link.source_id);
      } else {
        ++report.points.false_positives;
      }
    }
    auto fit = frames_by_id.find(d.frame_id);
    if (fit == frames_by_id.end()) continue;
    for (const auto& kp : fit->second->input.keypoints) {
      if (kp.source_id >= 0 && represented.count(kp.source_id) && !correct.count(kp.source_id)) {
        ++report.points.false_negatives;
      }
    }
  }
  return report;
}

std::size_t ground_truth_object_count(const Dataset& dataset) {
  std::set<std::int64_t> ids;
  for (const auto& f : dataset.frames) {
    for (const auto& d : f.input.detections) {
      if (d.source_id >= 0) ids.insert(d.source_id);
    }
  }
  return ids.size();
}

std::vector<ObjectCountRow> object_count_report(const Dataset& dataset, const PipelineConfig& base,
                                                std::span<const DAMethod> methods,
                                                std::span<const ObservationModel> models) {
  const auto inputs = dataset.inputs();
  const std::size_t gt = ground_truth_object_count(dataset);
  std::vector<ObjectCountRow> rows;
  for (ObservationModel model : models) {
    for (DAMethod method : methods) {
      PipelineConfig cfg = base;
      cfg.ablation = Ablation::Full;
      cfg.association.method = method;
      cfg.detection.model = model;
      cfg.object_init_views = 1;
      const RunResult run = run_sequence(dataset.scene.camera, inputs, cfg);
      ObjectCountRow row;
      row.method = method;
      row.model = model;
      row.objects = run.map.objects().size();
      row.ground_truth = gt;
      row.object_f1 = association_report(run, dataset).objects.f1();
      row.completed = !run.lost_at_frame;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string format_object_count_table(std::span<const ObjectCountRow> rows) {
  std::string out = "method model objects gt object_f1 completed\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s %s %zu %zu %.4f %s\n", to_string(r.method),
                  r.model == ObservationModel::ContourFit ? "M2" : "M1", r.objects, r.ground_truth, r.object_f1,
                  r.completed ? "yes" : "no");
    out += buf;
  }
  return out;
}

std::vector<AblationRow> ablation_report(const Dataset& dataset, const PipelineConfig& base,
                                         std::span<const Ablation> variants) {
  const auto inputs = dataset.inputs();
  const auto gt = dataset.groundtruth();
  std::vector<AblationRow> rows;
  for (Ablation v : variants) {
    PipelineConfig cfg = base;
    cfg.ablation = v;
    const RunResult run = run_sequence(dataset.scene.camera, inputs, cfg);
    AblationRow row;
    row.ablation = v;
    row.frames_tracked = run.trajectory.size();
    row.completed = !run.lost_at_frame;
    row.ate_rmse = ate_rmse(run.trajectory, gt, true);
    rows.push_back(row);
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::string out = "variant ate_rmse frames_tracked completed\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s %.6f %zu %s\n", to_string(r.ablation), r.ate_rmse, r.frames_tracked,
                  r.completed ? "yes" : "no");
    out += buf;
  }
  return out;
}

}  // namespace voom
