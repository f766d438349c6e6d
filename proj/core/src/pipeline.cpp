#include "voom/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include "voom/lie.hpp"

namespace voom {

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::ObjectsInOdometryOnly: return "odom";
    case Ablation::ObjectsInMappingOnly: return "map";
    case Ablation::AlternateDAModel: return "alt";
    case Ablation::PointsOnly: return "points";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::Full;
  if (s == "odom") return Ablation::ObjectsInOdometryOnly;
  if (s == "map") return Ablation::ObjectsInMappingOnly;
  if (s == "alt") return Ablation::AlternateDAModel;
  if (s == "points") return Ablation::PointsOnly;
  throw Error(ErrorCode::InvalidInput, "unknown ablation '" + s + "'");
}

DAMethod parse_da_method(const std::string& s) {
  if (s == "1") return DAMethod::DA1;
  if (s == "2") return DAMethod::DA2;
  if (s == "3") return DAMethod::DA3;
  if (s == "4") return DAMethod::DA4;
  throw Error(ErrorCode::InvalidInput, "unknown association method '" + s + "'");
}

AssociationConfig PipelineConfig::effective_association() const {
  AssociationConfig a = association;
  if (ablation == Ablation::AlternateDAModel) a.method = DAMethod::DA1;
  return a;
}

DetectionPolicy PipelineConfig::effective_detection() const {
  DetectionPolicy d = detection;
  if (ablation == Ablation::AlternateDAModel) d.model = ObservationModel::BoxInscribed;
  return d;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidInput, "pipeline config: " + what); };
  if (!association.valid()) fail("association thresholds must lie in (0,1) and C > 0");
  if (!pose_solver.valid() || !ba_solver.valid() || !ellipsoid_solver.valid()) fail("solver settings must be positive");
  if (!(detection.min_confidence >= 0.0 && detection.min_confidence <= 1.0)) fail("min_confidence outside [0,1]");
  if (!(detection.border_fraction > 0.0 && detection.border_fraction <= 1.0)) fail("border_fraction outside (0,1]");
  if (matcher.max_distance < 0 || matcher.max_distance > 256) fail("hamming threshold outside [0,256]");
  if (!(matcher.ratio > 0.0 && matcher.ratio <= 1.0)) fail("ratio test outside (0,1]");
  if (!(matcher.search_radius > 0.0)) fail("search radius must be positive");
  if (!(keyframes.tracked_ratio > 0.0 && keyframes.tracked_ratio <= 1.0)) fail("keyframe ratio outside (0,1]");
  if (keyframes.min_gap < 1 || keyframes.max_gap < keyframes.min_gap) fail("keyframe gaps inconsistent");
  if (object_init_views < 1 || candidate_timeout < 1) fail("object initialization settings must be positive");
  if (min_tracked < 6) fail("min_tracked must be at least 6");
  if (!(fusion_gate_px > 0.0)) fail("fusion_gate_px must be positive");
  if (local_map.max_point_neighbors < 0 || local_map.point_min_weight < 1) fail("local map settings invalid");
  if (!(max_depth > 0.0)) fail("max_depth must be positive");
}

PipelineConfig pipeline_config_from(const KeyValueConfig& kv, PipelineConfig c) {
  c.ablation = parse_ablation(kv.get_string("ablation", to_string(c.ablation)));
  if (kv.has("da")) c.association.method = parse_da_method(kv.get_string("da", ""));
  const std::string model = kv.get_string("observation_model",
                                          c.detection.model == ObservationModel::ContourFit ? "contour" : "box");
  if (model == "contour") {
    c.detection.model = ObservationModel::ContourFit;
  } else if (model == "box") {
    c.detection.model = ObservationModel::BoxInscribed;
  } else {
    throw Error(ErrorCode::InvalidInput, "observation_model must be contour or box");
  }
  auto form = [&](const std::string& key, WassersteinForm f) {
    const std::string s = kv.get_string(key, f == WassersteinForm::Frobenius ? "frobenius" : "bures");
    if (s == "frobenius") return WassersteinForm::Frobenius;
    if (s == "bures") return WassersteinForm::BuresTrace;
    throw Error(ErrorCode::InvalidInput, key + " must be frobenius or bures");
  };
  c.association.metric.wasserstein_form = form("association_form", c.association.metric.wasserstein_form);
  c.ellipsoid_form = form("ellipsoid_form", c.ellipsoid_form);
  c.association.iou_threshold = kv.get_double("iou_threshold", c.association.iou_threshold);
  c.association.iou_threshold_same_label =
      kv.get_double("iou_threshold_same_label", c.association.iou_threshold_same_label);
  c.association.nw_threshold = kv.get_double("nw_threshold", c.association.nw_threshold);
  c.association.metric.c_norm = kv.get_double("c_norm", c.association.metric.c_norm);
  c.detection.min_confidence = kv.get_double("min_confidence", c.detection.min_confidence);
  c.detection.border_fraction = kv.get_double("border_fraction", c.detection.border_fraction);
  c.matcher.max_distance = static_cast<int>(kv.get_int("hamming_threshold", c.matcher.max_distance));
  c.matcher.ratio = kv.get_double("ratio_test", c.matcher.ratio);
  c.matcher.search_radius = kv.get_double("search_radius", c.matcher.search_radius);
  c.pose_solver.max_iterations = static_cast<int>(kv.get_int("pose_iterations", c.pose_solver.max_iterations));
  c.ba_solver.max_iterations = static_cast<int>(kv.get_int("ba_iterations", c.ba_solver.max_iterations));
  c.ellipsoid_solver.max_iterations =
      static_cast<int>(kv.get_int("ellipsoid_iterations", c.ellipsoid_solver.max_iterations));
  c.keyframes.tracked_ratio = kv.get_double("keyframe_tracked_ratio", c.keyframes.tracked_ratio);
  c.keyframes.max_gap = static_cast<int>(kv.get_int("keyframe_max_gap", c.keyframes.max_gap));
  c.keyframes.min_gap = static_cast<int>(kv.get_int("keyframe_min_gap", c.keyframes.min_gap));
  c.local_map.max_point_neighbors =
      static_cast<int>(kv.get_int("max_point_neighbors", c.local_map.max_point_neighbors));
  c.object_init_views = static_cast<int>(kv.get_int("object_init_views", c.object_init_views));
  c.candidate_timeout = static_cast<int>(kv.get_int("candidate_timeout", c.candidate_timeout));
  c.cull_points = kv.get_bool("cull_points", c.cull_points);
  c.min_tracked = static_cast<int>(kv.get_int("min_tracked", c.min_tracked));
  c.fusion_gate_px = kv.get_double("fusion_gate_px", c.fusion_gate_px);
  c.max_depth = kv.get_double("max_depth", c.max_depth);
  c.deterministic = kv.get_bool("deterministic", c.deterministic);
  c.validate();
  return c;
}

Pose predict_pose(std::span<const Pose> history) {
  if (history.empty()) throw Error(ErrorCode::InvalidInput, "pose history is empty");
  const Pose& last = history.back();
  if (history.size() == 1) return last;
  const Pose velocity = last * history[history.size() - 2].inverse();
  Pose p = velocity * last;
  p.rotation = Eigen::Quaterniond(p.rotation).normalized().toRotationMatrix();
  return p;
}

namespace {

struct TrackedFrame {
  std::int64_t frame_id;
  double timestamp;
  KeyFrameId reference;
  Pose relative;  // frame pose * reference pose^-1
};

struct Candidate {
  int category;
  std::vector<std::pair<KeyFrameId, int>> views;
  Vector3d center_sum = Vector3d::Zero();
  double radius_sum = 0.0;
  KeyFrameId last_seen;

  Vector3d center() const { return center_sum / static_cast<double>(views.size()); }
  double radius() const { return radius_sum / static_cast<double>(views.size()); }
};

struct MappingJob {
  KeyFrame keyframe;
  std::vector<ObjectMatch> odometry_matches;
  std::vector<int> odometry_unmatched;
};

double median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

struct Pipeline::Impl {
  Intrinsics k;
  PipelineConfig cfg;
  AssociationConfig assoc;
  DetectionPolicy det_policy;

  mutable std::mutex mutex;  // guards everything below touched by mapping
  Map map;
  std::map<KeyFrameId, Pose> pending_poses;
  std::vector<Candidate> candidates;
  CallAudit audit;
  std::vector<SolveRecord> solves;

  // Tracking-side state.
  std::vector<TrackedFrame> frames;
  std::vector<PointId> last_points;
  KeyFrameId reference = -1;
  KeyFrameId next_keyframe = 0;
  int reference_tracked = 0;
  int frames_since_keyframe = 0;
  bool lost = false;

  // Mapping thread (non-deterministic mode only).
  std::thread worker;
  std::deque<MappingJob> queue;
  std::condition_variable queue_cv;
  bool busy = false;
  bool stopping = false;

  Impl(const Intrinsics& intr, PipelineConfig c) : k(intr), cfg(std::move(c)) {
    if (!k.valid()) throw Error(ErrorCode::InvalidInput, "invalid intrinsics");
    cfg.validate();
    assoc = cfg.effective_association();
    det_policy = cfg.effective_detection();
    if (!cfg.deterministic) worker = std::thread([this] { mapping_loop(); });
  }

  ~Impl() {
    if (worker.joinable()) {
      {
        std::lock_guard lock(mutex);
        stopping = true;
      }
      queue_cv.notify_all();
      worker.join();
    }
  }

  // --- shared helpers (caller holds the lock) ------------------------------

  Pose keyframe_pose(KeyFrameId id) const {
    if (map.has_keyframe(id)) return map.keyframe(id).pose;
    return pending_poses.at(id);
  }

  Pose absolute_pose(const TrackedFrame& f) const { return f.relative * keyframe_pose(f.reference); }

  void record(const char* kind, std::int64_t frame_id, std::int64_t subject, const SolveSummary& s) {
    if (cfg.record_solves) solves.push_back({kind, frame_id, subject, s});
  }

  std::vector<const ObjectLandmark*> object_list() const {
    std::vector<const ObjectLandmark*> out;
    out.reserve(map.objects().size());
    for (const auto& [id, o] : map.objects()) out.push_back(&o);
    return out;
  }

  std::vector<Detection> build_detections(const FrameInput& f) const {
    std::vector<Detection> out;
    if (!cfg.objects_enabled()) return out;
    for (const auto& raw : f.detections) {
      if (raw.confidence < det_policy.min_confidence) continue;
      try {
        Detection d = make_detection(raw.category, raw.confidence, raw.contour, f.keypoints, k, det_policy);
        d.source_id = raw.source_id;
        out.push_back(std::move(d));
      } catch (const Error&) {
        // Unfittable contour: the instance is simply not used.
      }
    }
    return out;
  }

  bool usable(const Detection& d) const { return !d.truncated && d.confidence >= det_policy.min_confidence; }

  // --- tracking -------------------------------------------------------------

  int spawnable(const FrameInput& f, const std::set<int>& matched) const {
    int n = 0;
    for (std::size_t i = 0; i < f.keypoints.size(); ++i) {
      const double z = f.keypoints[i].depth;
      if (!matched.count(static_cast<int>(i)) && z > 0.0 && z <= cfg.max_depth) ++n;
    }
    return n;
  }

  FrameDiagnostics bootstrap(const FrameInput& f, std::vector<Detection> detections) {
    FrameDiagnostics diag;
    diag.frame_id = f.id;
    diag.timestamp = f.timestamp;
    diag.keyframe = true;
    KeyFrame kf;
    kf.id = next_keyframe++;
    kf.frame_id = f.id;
    kf.timestamp = f.timestamp;
    kf.keypoints = f.keypoints;
    kf.detections = std::move(detections);
    reference = kf.id;
    pending_poses[kf.id] = kf.pose;
    reference_tracked = spawnable(f, {});
    frames.push_back({f.id, f.timestamp, kf.id, Pose::identity()});
    frames_since_keyframe = 0;
    MappingJob job;
    job.keyframe = std::move(kf);
    for (std::size_t d = 0; d < job.keyframe.detections.size(); ++d) {
      if (usable(job.keyframe.detections[d])) job.odometry_unmatched.push_back(static_cast<int>(d));
    }
    // The first keyframe is mapped inline so that tracking has points to
    // search from the very next frame.
    {
      std::lock_guard lock(mutex);
      map_keyframe(std::move(job), &diag);
    }
    return diag;
  }

  FrameDiagnostics track(const FrameInput& f) {
    std::vector<Detection> detections = build_detections(f);
    std::unique_lock lock(mutex);
    if (frames.empty()) {
      lock.unlock();
      return bootstrap(f, std::move(detections));
    }
    if (f.timestamp <= frames.back().timestamp) {
      throw Error(ErrorCode::InvalidInput, "frame timestamps must be strictly increasing");
    }
    FrameDiagnostics diag;
    diag.frame_id = f.id;
    diag.timestamp = f.timestamp;

    std::vector<Pose> history;
    if (frames.size() >= 2) history.push_back(absolute_pose(frames[frames.size() - 2]));
    history.push_back(absolute_pose(frames.back()));
    const Pose predicted = predict_pose(history);

    // Stage 1: object-aided matches plus a projection search around the
    // previous frame's and the reference keyframe's points.
    std::vector<PointMatch> stage1;
    ObjectAssociation oassoc;
    if (cfg.objects_in_odometry()) {
      const auto objects = object_list();
      ++audit.odometry_object_association;
      oassoc = associate_objects(detections, objects, predicted, k, assoc, det_policy.min_confidence);
      diag.object_matches = static_cast<int>(oassoc.matches.size());
      for (const auto& d : detections) {
        if (usable(d)) diag.detection_sources.push_back(d.source_id);
      }
      if (!oassoc.matches.empty()) {
        ++audit.odometry_object_point_matching;
        stage1 = associate_map_points_via_objects(f.keypoints, detections, oassoc.matches, map, predicted,
                                                  cfg.matcher);
      }
      for (const auto& m : oassoc.matches) {
        diag.detection_links.push_back({detections[static_cast<std::size_t>(m.detection_index)].source_id,
                                        m.object_id});
      }
    }
    diag.object_point_matches = static_cast<int>(stage1.size());
    {
      std::set<int> claimed_kp;
      std::set<PointId> claimed_pt;
      for (const auto& m : stage1) {
        claimed_kp.insert(m.keypoint_index);
        claimed_pt.insert(m.map_point_id);
      }
      std::set<PointId> recent(last_points.begin(), last_points.end());
      if (map.has_keyframe(reference)) {
        for (const auto& [kp, pid] : map.keyframe(reference).matched_points) recent.insert(pid);
      }
      const std::vector<PointId> search(recent.begin(), recent.end());
      auto proj = match_local_map(f.keypoints, search, map, predicted, k, claimed_kp, claimed_pt, cfg.matcher);
      if (static_cast<int>(proj.size() + stage1.size()) < 2 * cfg.min_tracked) {
        PointMatcherConfig wide = cfg.matcher;
        wide.search_radius *= 4.0;
        proj = match_local_map(f.keypoints, search, map, predicted, k, claimed_kp, claimed_pt, wide);
      }
      diag.projection_matches = static_cast<int>(proj.size());
      stage1.insert(stage1.end(), proj.begin(), proj.end());
    }
    if (stage1.size() < 6) return lose(diag);

    std::vector<Correspondence> corr;
    corr.reserve(stage1.size());
    for (const auto& m : stage1) {
      corr.push_back({f.keypoints[static_cast<std::size_t>(m.keypoint_index)].pixel, map.point(m.map_point_id).position});
    }
    const PoseResult r1 = optimize_pose(predicted, corr, k, cfg.pose_solver);
    record("pose1", f.id, -1, r1.summary);
    diag.pose_stage1 = r1.pose;
    diag.inliers_stage1 = static_cast<int>(r1.inlier_count);

    // Stage 2: search the local map of keyframes seen through the stage-1
    // inliers and the reference keyframe's neighbourhood.
    std::vector<PointMatch> matches;
    std::set<int> claimed_kp;
    std::set<PointId> claimed_pt;
    std::map<KeyFrameId, int> votes;
    for (std::size_t i = 0; i < stage1.size(); ++i) {
      if (!r1.inliers[i]) continue;
      matches.push_back(stage1[i]);
      claimed_kp.insert(stage1[i].keypoint_index);
      claimed_pt.insert(stage1[i].map_point_id);
      for (const auto& [kf_id, kp] : map.point(stage1[i].map_point_id).observations) ++votes[kf_id];
    }
    std::vector<std::pair<int, KeyFrameId>> ranked;
    for (const auto& [kf_id, n] : votes) ranked.emplace_back(n, kf_id);
    std::sort(ranked.begin(), ranked.end(), std::greater<>());
    std::set<KeyFrameId> local_kfs;
    for (std::size_t i = 0; i < ranked.size() && i < 20; ++i) local_kfs.insert(ranked[i].second);
    if (map.has_keyframe(reference)) {
      local_kfs.insert(reference);
      const auto nb = map.point_covisibility_neighbors(reference, cfg.local_map.point_min_weight);
      for (std::size_t i = 0; i < nb.size() && static_cast<int>(i) < cfg.local_map.max_point_neighbors; ++i) {
        local_kfs.insert(nb[i]);
      }
    }
    std::set<PointId> local_set;
    for (KeyFrameId id : local_kfs) {
      for (const auto& [kp, pid] : map.keyframe(id).matched_points) local_set.insert(pid);
    }
    const std::vector<PointId> local_points(local_set.begin(), local_set.end());
    const auto extra = match_local_map(f.keypoints, local_points, map, r1.pose, k, claimed_kp, claimed_pt, cfg.matcher);
    diag.local_map_matches = static_cast<int>(extra.size());
    matches.insert(matches.end(), extra.begin(), extra.end());
    if (matches.size() < 6) return lose(diag);

    corr.clear();
    for (const auto& m : matches) {
      corr.push_back({f.keypoints[static_cast<std::size_t>(m.keypoint_index)].pixel, map.point(m.map_point_id).position});
    }
    const PoseResult r2 = optimize_pose(r1.pose, corr, k, cfg.pose_solver);
    record("pose2", f.id, -1, r2.summary);
    diag.pose_stage2 = r2.pose;
    diag.inliers_stage2 = static_cast<int>(r2.inlier_count);
    if (diag.inliers_stage2 < cfg.min_tracked) return lose(diag);

    std::map<int, PointId> inliers;
    last_points.clear();
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if (!r2.inliers[i]) continue;
      inliers.emplace(matches[i].keypoint_index, matches[i].map_point_id);
      last_points.push_back(matches[i].map_point_id);
      diag.point_links.push_back({f.keypoints[static_cast<std::size_t>(matches[i].keypoint_index)].source_id,
                                  matches[i].map_point_id});
    }
    std::sort(last_points.begin(), last_points.end());

    ++frames_since_keyframe;
    const bool want = diag.inliers_stage2 < cfg.keyframes.tracked_ratio * reference_tracked ||
                      frames_since_keyframe >= cfg.keyframes.max_gap;
    if (want && frames_since_keyframe >= cfg.keyframes.min_gap) {
      KeyFrame kf;
      kf.id = next_keyframe++;
      kf.frame_id = f.id;
      kf.timestamp = f.timestamp;
      kf.pose = r2.pose;
      kf.keypoints = f.keypoints;
      kf.detections = std::move(detections);
      kf.matched_points = inliers;
      std::set<int> matched_kps;
      for (const auto& [kp, pid] : inliers) matched_kps.insert(kp);
      reference_tracked = diag.inliers_stage2 + spawnable(f, matched_kps);
      reference = kf.id;
      frames_since_keyframe = 0;
      pending_poses[kf.id] = kf.pose;
      frames.push_back({f.id, f.timestamp, kf.id, Pose::identity()});
      diag.keyframe = true;
      MappingJob job;
      job.keyframe = std::move(kf);
      if (cfg.objects_in_odometry()) {
        job.odometry_matches = oassoc.matches;
        job.odometry_unmatched = oassoc.unmatched;
      }
      lock.unlock();
      submit(std::move(job), diag);
    } else {
      frames.push_back({f.id, f.timestamp, reference, r2.pose * keyframe_pose(reference).inverse()});
    }
    return diag;
  }

  FrameDiagnostics& lose(FrameDiagnostics& diag) {
    diag.state = TrackingState::Lost;
    lost = true;
    return diag;
  }

  // --- mapping --------------------------------------------------------------

  void submit(MappingJob job, FrameDiagnostics& diag) {
    if (cfg.deterministic) {
      std::lock_guard lock(mutex);
      map_keyframe(std::move(job), &diag);
      return;
    }
    std::unique_lock lock(mutex);
    queue_cv.wait(lock, [&] { return queue.size() < 2; });
    queue.push_back(std::move(job));
    lock.unlock();
    queue_cv.notify_all();
  }

  void mapping_loop() {
    std::unique_lock lock(mutex);
    for (;;) {
      queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
      if (queue.empty()) return;
      MappingJob job = std::move(queue.front());
      queue.pop_front();
      busy = true;
      map_keyframe(std::move(job), nullptr);
      busy = false;
      queue_cv.notify_all();
    }
  }

  void flush() {
    if (cfg.deterministic) return;
    std::unique_lock lock(mutex);
    queue_cv.wait(lock, [&] { return queue.empty() && !busy; });
  }

  void map_keyframe(MappingJob job, FrameDiagnostics* diag) {
    KeyFrame kf = std::move(job.keyframe);
    const KeyFrameId kf_id = kf.id;
    if (kf_id == 0) kf.pose = Pose::identity();

    // Drop matches to points removed since tracking.
    std::erase_if(kf.matched_points, [&](const auto& e) { return !map.has_point(e.second); });

    std::map<int, ObjectId> det_objects;
    std::vector<int> unmatched;
    if (cfg.objects_in_mapping()) {
      const auto objects = object_list();
      ++audit.mapping_object_association;
      const auto oassoc = associate_objects(kf.detections, objects, kf.pose, k, assoc, det_policy.min_confidence);
      for (const auto& m : oassoc.matches) det_objects[m.detection_index] = m.object_id;
      unmatched = oassoc.unmatched;
      if (!oassoc.matches.empty()) {
        ++audit.mapping_object_point_matching;
        reassociate_with_objects(kf, oassoc.matches);
      }
      if (diag) {
        diag->detection_links.clear();
        diag->detection_sources.clear();
        for (const auto& d : kf.detections) {
          if (usable(d)) diag->detection_sources.push_back(d.source_id);
        }
        for (const auto& m : oassoc.matches) {
          diag->detection_links.push_back({kf.detections[static_cast<std::size_t>(m.detection_index)].source_id,
                                           m.object_id});
        }
      }
    } else if (cfg.objects_enabled()) {
      for (const auto& m : job.odometry_matches) {
        if (map.has_object(m.object_id)) det_objects[m.detection_index] = m.object_id;
      }
      unmatched = job.odometry_unmatched;
      if (kf_id == 0 || !cfg.objects_in_odometry()) {
        unmatched.clear();
        for (std::size_t d = 0; d < kf.detections.size(); ++d) {
          if (usable(kf.detections[d]) && !det_objects.count(static_cast<int>(d))) {
            unmatched.push_back(static_cast<int>(d));
          }
        }
      }
    }

    spawn_points(kf);
    kf.detection_objects = det_objects;
    map.insert_keyframe(std::move(kf));
    pending_poses.erase(kf_id);

    std::set<ObjectId> touched;
    for (const auto& [det, oid] : det_objects) touched.insert(oid);
    if (cfg.objects_enabled()) {
      for (ObjectId oid : handle_candidates(kf_id, unmatched)) touched.insert(oid);
    }
    for (ObjectId oid : touched) map.update_object_points(oid);

    if (map.keyframes().size() >= 2) {
      LocalMapOptions opts = cfg.local_map;
      opts.use_object_graph = cfg.objects_in_mapping();
      if (opts.use_object_graph) ++audit.mapping_object_graph_queries;
      const LocalMap local = map.local_map_for_frame(kf_id, opts);
      ++audit.local_bundle_adjustments;
      const auto ba = local_bundle_adjustment(map, local, k, cfg.ba_solver);
      record("ba", map.keyframe(kf_id).frame_id, -1, ba.summary);
      apply_bundle_adjustment(map, ba);
    }

    for (ObjectId oid : touched) refine_object(oid, map.keyframe(kf_id).frame_id);
    if (cfg.cull_points) map.cull_map_points(3);
  }

  /// Object-aided re-association at keyframe insertion: map points of the
  /// matched objects claim keypoints; a younger point already bound to the
  /// same keypoint is treated as a duplicate and fused into the older one.
  void reassociate_with_objects(KeyFrame& kf, const std::vector<ObjectMatch>& matches) {
    const auto pm = associate_map_points_via_objects(kf.keypoints, kf.detections, matches, map, kf.pose, cfg.matcher);
    std::set<PointId> used;
    for (const auto& [kp, pid] : kf.matched_points) used.insert(pid);
    const double gate = cfg.fusion_gate_px;
    for (const auto& m : pm) {
      if (used.count(m.map_point_id) || !map.has_point(m.map_point_id)) continue;
      const MapPoint& p = map.point(m.map_point_id);
      const Vector3d pc = kf.pose * p.position;
      if (!(pc.z() > 0.0)) continue;
      const Vector2d& px = kf.keypoints[static_cast<std::size_t>(m.keypoint_index)].pixel;
      if (reprojection_residual(px, p.position, kf.pose, k).norm() > gate) continue;
      auto it = kf.matched_points.find(m.keypoint_index);
      if (it == kf.matched_points.end()) {
        kf.matched_points.emplace(m.keypoint_index, m.map_point_id);
        used.insert(m.map_point_id);
        continue;
      }
      const PointId other = it->second;
      if (!map.has_point(other)) continue;
      const MapPoint& o = map.point(other);
      const bool older = p.first_keyframe >= 0 && (o.first_keyframe < 0 || p.first_keyframe < o.first_keyframe);
      if (!older || o.owner_object) continue;
      map.fuse_points(other, m.map_point_id);
      used.erase(other);
      it->second = m.map_point_id;
      used.insert(m.map_point_id);
    }
  }

  void spawn_points(KeyFrame& kf) {
    for (std::size_t i = 0; i < kf.keypoints.size(); ++i) {
      const Keypoint& kp = kf.keypoints[i];
      if (kf.matched_points.count(static_cast<int>(i))) continue;
      if (!(kp.depth > 0.0 && kp.depth <= cfg.max_depth)) continue;
      const PointId pid = map.add_map_point(back_project(kp.pixel, kp.depth, kf.pose, k), kp.descriptor);
      kf.matched_points.emplace(static_cast<int>(i), pid);
    }
  }

  std::optional<double> depth_hint(const KeyFrame& kf, const Detection& d) const {
    std::vector<double> depths;
    for (int idx : d.keypoint_indices) {
      const double z = kf.keypoints[static_cast<std::size_t>(idx)].depth;
      if (z > 0.0 && z <= cfg.max_depth) depths.push_back(z);
    }
    if (depths.empty()) return std::nullopt;
    return median(std::move(depths));
  }

  /// Tracks unmatched detections across keyframes and promotes consistent
  /// ones to landmarks. Returns the ids of objects created.
  std::vector<ObjectId> handle_candidates(KeyFrameId kf_id, const std::vector<int>& unmatched) {
    const KeyFrame& kf = map.keyframe(kf_id);
    struct Fresh {
      int det;
      Vector3d center;
      double radius;
    };
    std::vector<Fresh> fresh;
    for (int d : unmatched) {
      const Detection& det = kf.detections[static_cast<std::size_t>(d)];
      if (!usable(det)) continue;
      const auto z = depth_hint(kf, det);
      if (!z) continue;
      const EllipsoidParams init = initialize_ellipsoid(det, *z, kf.pose, k);
      fresh.push_back({d, init.center, std::exp(init.log_axes[0])});
    }

    // Associate fresh detections with pending candidates using the
    // configured association score plus a 3D consistency gate.
    std::vector<ObjectLandmark> proxies;
    proxies.reserve(candidates.size());
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      ObjectLandmark o;
      o.id = static_cast<ObjectId>(c);
      o.category = candidates[c].category;
      o.ellipsoid.center = candidates[c].center();
      o.ellipsoid.semi_axes = Vector3d::Constant(candidates[c].radius());
      proxies.push_back(std::move(o));
    }
    std::vector<const ObjectLandmark*> proxy_ptrs;
    for (const auto& o : proxies) proxy_ptrs.push_back(&o);
    std::vector<Detection> dets;
    for (const auto& f : fresh) dets.push_back(kf.detections[static_cast<std::size_t>(f.det)]);
    std::vector<bool> taken(fresh.size(), false);
    if (cfg.object_init_views > 1 && !proxies.empty() && !dets.empty()) {
      const auto a = associate_objects(dets, proxy_ptrs, kf.pose, k, assoc, det_policy.min_confidence);
      for (const auto& m : a.matches) {
        const auto fi = static_cast<std::size_t>(m.detection_index);
        Candidate& c = candidates[static_cast<std::size_t>(m.object_id)];
        const double gate = 2.0 * std::max(c.radius(), fresh[fi].radius);
        if ((c.center() - fresh[fi].center).norm() > gate) continue;
        c.views.emplace_back(kf_id, fresh[fi].det);
        c.center_sum += fresh[fi].center;
        c.radius_sum += fresh[fi].radius;
        c.last_seen = kf_id;
        taken[fi] = true;
      }
    }
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      if (taken[i]) continue;
      Candidate c;
      c.category = kf.detections[static_cast<std::size_t>(fresh[i].det)].category;
      c.views.emplace_back(kf_id, fresh[i].det);
      c.center_sum = fresh[i].center;
      c.radius_sum = fresh[i].radius;
      c.last_seen = kf_id;
      candidates.push_back(std::move(c));
    }

    std::vector<ObjectId> created;
    std::vector<Candidate> keep;
    for (auto& c : candidates) {
      if (static_cast<int>(c.views.size()) >= cfg.object_init_views) {
        Ellipsoid e;
        e.center = c.center();
        e.semi_axes = Vector3d::Constant(c.radius());
        std::map<int, int> cat_votes;
        for (const auto& [kf_view, det] : c.views) {
          ++cat_votes[map.keyframe(kf_view).detections[static_cast<std::size_t>(det)].category];
        }
        const int category = std::max_element(cat_votes.begin(), cat_votes.end(), [](const auto& a, const auto& b) {
                               return a.second < b.second;
                             })->first;
        const ObjectId oid = map.add_object(e, category);
        for (const auto& [kf_view, det] : c.views) {
          if (map.has_keyframe(kf_view)) map.add_object_observation(kf_view, det, oid);
        }
        created.push_back(oid);
      } else if (kf_id - c.last_seen < cfg.candidate_timeout) {
        keep.push_back(std::move(c));
      }
    }
    candidates = std::move(keep);
    return created;
  }

  void refine_object(ObjectId oid, std::int64_t frame_id) {
    if (!map.has_object(oid)) return;
    const ObjectLandmark& o = map.object(oid);
    std::vector<EllipsoidObservation> obs;
    for (const auto& [kf_id, det] : o.observations) {
      if (det.truncated || !map.has_keyframe(kf_id)) continue;
      obs.push_back({ellipse_to_gaussian(det.ellipse), map.keyframe(kf_id).pose});
    }
    constexpr std::size_t kMaxViews = 40;
    if (obs.size() > kMaxViews) {
      std::vector<EllipsoidObservation> thinned;
      for (std::size_t i = 0; i < kMaxViews; ++i) thinned.push_back(obs[i * obs.size() / kMaxViews]);
      thinned.back() = obs.back();
      obs = std::move(thinned);
    }
    if (obs.size() < 3) return;
    const double before = ellipsoid_cost(obs, k, o.ellipsoid, cfg.ellipsoid_form);
    try {
      ++audit.ellipsoid_estimations;
      const auto r = estimate_ellipsoid(obs, k, EllipsoidParams::from_ellipsoid(o.ellipsoid), cfg.ellipsoid_solver,
                                        cfg.ellipsoid_form);
      record("ellipsoid", frame_id, oid, r.summary);
      const double after = ellipsoid_cost(obs, k, r.ellipsoid, cfg.ellipsoid_form);
      if (r.ellipsoid.valid() && after <= before) map.set_object_ellipsoid(oid, r.ellipsoid);
    } catch (const Error&) {
      // Too few views or too short a baseline: keep the current estimate.
    }
  }

  std::vector<TrajectoryEntry> trajectory() const {
    std::lock_guard lock(mutex);
    std::vector<TrajectoryEntry> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back({f.timestamp, absolute_pose(f).inverse()});
    return out;
  }
};

Pipeline::Pipeline(const Intrinsics& k, PipelineConfig cfg) : impl_(std::make_unique<Impl>(k, std::move(cfg))) {}
Pipeline::~Pipeline() = default;

FrameDiagnostics Pipeline::process(const FrameInput& frame) {
  if (impl_->lost) {
    FrameDiagnostics d;
    d.frame_id = frame.id;
    d.timestamp = frame.timestamp;
    d.state = TrackingState::Lost;
    return d;
  }
  return impl_->track(frame);
}

void Pipeline::flush() { impl_->flush(); }
bool Pipeline::lost() const { return impl_->lost; }
std::vector<TrajectoryEntry> Pipeline::trajectory() const { return impl_->trajectory(); }
const Map& Pipeline::map() const { return impl_->map; }
const CallAudit& Pipeline::audit() const { return impl_->audit; }
const std::vector<SolveRecord>& Pipeline::solves() const { return impl_->solves; }

RunResult run_sequence(const Intrinsics& k, std::span<const FrameInput> frames, const PipelineConfig& cfg) {
  Pipeline pipeline(k, cfg);
  RunResult result;
  result.frames_total = frames.size();
  for (const auto& f : frames) {
    FrameDiagnostics d = pipeline.process(f);
    const bool lost = d.state == TrackingState::Lost;
    result.diagnostics.push_back(std::move(d));
    if (lost) {
      result.lost_at_frame = f.id;
      break;
    }
  }
  pipeline.flush();
  result.trajectory = pipeline.trajectory();
  result.map = pipeline.map();
  result.audit = pipeline.audit();
  result.solves = pipeline.solves();
  return result;
}

}  // namespace voom
