#include <cstdio>

#include "voom/observation.hpp"

namespace voom {

std::string descriptor_to_hex(const Descriptor& d) {
  std::string out;
  out.reserve(64);
  char buf[17];
  for (auto word : d) {
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(word));
    out += buf;
  }
  return out;
}

Descriptor descriptor_from_hex(const std::string& hex) {
  if (hex.size() != 64) throw Error(ErrorCode::InvalidInput, "descriptor must be 64 hex digits");
  Descriptor d{};
  for (std::size_t i = 0; i < d.size(); ++i) {
    try {
      std::size_t used = 0;
      d[i] = std::stoull(hex.substr(i * 16, 16), &used, 16);
      if (used != 16) throw Error(ErrorCode::InvalidInput, "bad descriptor digit");
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidInput, "bad descriptor: " + hex);
    }
  }
  return d;
}

Detection make_detection(int category, double confidence, std::vector<Vector2d> contour,
                         const std::vector<Keypoint>& keypoints, const Intrinsics& k,
                         const DetectionPolicy& policy) {
  Detection det;
  det.category = category;
  det.confidence = confidence;
  det.contour = std::move(contour);
  if (policy.model == ObservationModel::ContourFit) {
    det.ellipse = fit_ellipse(det.contour);
  } else {
    if (det.contour.size() < 3) throw Error(ErrorCode::TooFewPoints, "contour too short");
    const BBox box = bbox_of_points(det.contour);
    if (!(box.area() > 0.0)) throw Error(ErrorCode::DegenerateFit, "empty contour box");
    det.ellipse = box_inscribed_ellipse(box);
  }
  std::size_t on_border = 0;
  for (const auto& p : det.contour) {
    if (!k.contains(p, policy.border_margin_px)) ++on_border;
  }
  det.truncated = static_cast<double>(on_border) > policy.border_fraction * det.contour.size();

  const BBox box = bbox_of_points(det.contour);
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    const Vector2d& px = keypoints[i].pixel;
    if ((px.array() < box.min.array()).any() || (px.array() > box.max.array()).any()) continue;
    if (point_in_polygon(px, det.contour)) det.keypoint_indices.push_back(static_cast<int>(i));
  }
  return det;
}

}  // namespace voom
