#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "voom/geometry.hpp"

namespace voom {

/// 256-bit binary feature descriptor.
using Descriptor = std::array<std::uint64_t, 4>;

inline int hamming(const Descriptor& a, const Descriptor& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
}

std::string descriptor_to_hex(const Descriptor& d);
Descriptor descriptor_from_hex(const std::string& hex);

struct Keypoint {
  Vector2d pixel = Vector2d::Zero();
  double depth = 0.0;  // <= 0 when unavailable
  Descriptor descriptor{};
  std::int64_t source_id = -1;  // external label (e.g. ground truth), unused by the algorithms
};

/// How an observation ellipse is derived from a segmentation instance.
enum class ObservationModel {
  BoxInscribed,  // axis-aligned ellipse inscribed in the contour's bounding box
  ContourFit,    // direct least-squares ellipse through the contour
};

struct Detection {
  int category = 0;
  double confidence = 1.0;
  std::vector<Vector2d> contour;
  Ellipse2D ellipse;
  std::vector<int> keypoint_indices;
  /// More than the allowed fraction of contour points lie on the image border.
  bool truncated = false;
  std::int64_t source_id = -1;
};

struct DetectionPolicy {
  double min_confidence = 0.2;
  ObservationModel model = ObservationModel::ContourFit;
  double border_fraction = 0.2;
  double border_margin_px = 1.0;
};

/// Builds a detection from a raw instance contour: fits the observation
/// ellipse, flags border truncation and collects the keypoints inside the
/// contour polygon. Throws the fitting errors of fit_ellipse.
Detection make_detection(int category, double confidence, std::vector<Vector2d> contour,
                         const std::vector<Keypoint>& keypoints, const Intrinsics& k,
                         const DetectionPolicy& policy);

}  // namespace voom
