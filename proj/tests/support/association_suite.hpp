#pragma once

#include <random>
#include <vector>

#include "oracles.hpp"
#include "voom/association.hpp"

namespace voom::test {

/// One synthetic frame: object landmarks and, for each, a detection ellipse
/// (detection i belongs to object i).
struct AssociationFrame {
  Pose pose;
  std::vector<ObjectLandmark> objects;
  std::vector<Detection> detections;
};

/// Frames of well-separated objects in front of a camera at the origin.
/// Object extents are drawn from [min_axis, max_axis] metres at depths 3-8 m;
/// objects whose projection falls outside the image or exceeds
/// max_projected_area px^2 are dropped. Detections are the true projections,
/// each centre shifted by center_shift_px in a random direction.
inline std::vector<AssociationFrame> make_association_suite(std::uint64_t seed, int frames, int objects_per_frame,
                                                            double min_axis, double max_axis,
                                                            double max_projected_area, double center_shift_px) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Intrinsics k;
  std::vector<AssociationFrame> suite;
  for (int f = 0; f < frames; ++f) {
    AssociationFrame frame;
    // Objects on a coarse image grid so that true projections do not overlap.
    const int cols = 5, rows = 4;
    std::vector<int> cells(cols * rows);
    for (int i = 0; i < cols * rows; ++i) cells[static_cast<std::size_t>(i)] = i;
    std::shuffle(cells.begin(), cells.end(), rng);
    for (int i = 0; i < objects_per_frame && i < cols * rows; ++i) {
      const int cell = cells[static_cast<std::size_t>(i)];
      const double px = (cell % cols + 0.25 + 0.5 * u01(rng)) * k.width / cols;
      const double py = (cell / cols + 0.25 + 0.5 * u01(rng)) * k.height / rows;
      const double depth = 3.0 + 5.0 * u01(rng);
      ObjectLandmark o;
      o.id = static_cast<ObjectId>(frame.objects.size());
      o.category = static_cast<int>(rng() % 5);
      o.ellipsoid.center = back_project({px, py}, depth, frame.pose, k);
      for (int a = 0; a < 3; ++a) o.ellipsoid.semi_axes[a] = min_axis + (max_axis - min_axis) * u01(rng);
      o.ellipsoid.rotation = random_rotation(rng);
      Ellipse2D proj;
      try {
        proj = project_ellipsoid(o.ellipsoid, frame.pose, k);
      } catch (const Error&) {
        continue;
      }
      if (proj.area() > max_projected_area || !k.contains(proj.center, 2.0 * proj.semi_axes[0])) continue;
      const double phi = 2.0 * kPi * u01(rng);
      Detection d;
      d.category = o.category;
      d.ellipse = proj;
      d.ellipse.center += center_shift_px * Vector2d(std::cos(phi), std::sin(phi));
      d.source_id = o.id;
      frame.objects.push_back(o);
      frame.detections.push_back(d);
    }
    suite.push_back(std::move(frame));
  }
  return suite;
}

/// Number of detections matched to their own object.
inline int count_true_matches(const AssociationFrame& frame, const Pose& predicted, const AssociationConfig& cfg) {
  std::vector<const ObjectLandmark*> ptrs;
  for (const auto& o : frame.objects) ptrs.push_back(&o);
  const auto result = associate_objects(frame.detections, ptrs, predicted, Intrinsics{}, cfg);
  int n = 0;
  for (const auto& m : result.matches) {
    if (frame.detections[static_cast<std::size_t>(m.detection_index)].source_id == m.object_id) ++n;
  }
  return n;
}

inline int count_matches(const AssociationFrame& frame, const Pose& predicted, const AssociationConfig& cfg) {
  std::vector<const ObjectLandmark*> ptrs;
  for (const auto& o : frame.objects) ptrs.push_back(&o);
  return static_cast<int>(associate_objects(frame.detections, ptrs, predicted, Intrinsics{}, cfg).matches.size());
}

inline ScoreMatrix random_score_matrix(std::mt19937_64& rng, int n = 5) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScoreMatrix s(n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) s(r, c) = u(rng);
  }
  return s;
}

}  // namespace voom::test
