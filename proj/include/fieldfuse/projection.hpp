// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "fieldfuse/scene.hpp"

namespace fieldfuse {

struct PixelHit {
  std::uint32_t image_index = 0;
  int u = 0;
  int v = 0;
  double cam_distance = 0.0;  // camera-frame z, always > 0

  friend bool operator==(const PixelHit&, const PixelHit&) = default;
};

struct PointPixelPair {
  std::uint32_t point_index = 0;
  PixelHit hit;

  friend bool operator==(const PointPixelPair&, const PointPixelPair&) = default;
};

struct OcclusionConfig {
  double sigma_ratio = 0.2;  // sigma = sigma_ratio * D
  bool enabled = true;
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double z = 0.0;
};

/// Continuous pixel coordinates and camera-frame depth, or nullopt when the
/// point is on or behind the image plane (z <= 0).
std::optional<Projection> project_point(const Eigen::Vector3d& p, const Camera& camera);

/// Nearest pixel for a continuous coordinate, or nullopt when outside the
/// open interval (-0.5, size - 0.5).
std::optional<int> nearest_pixel(double coord, int size);

/// True when a stored depth value is usable (finite and > 0).
inline bool depth_valid(float d) { return std::isfinite(d) && d > 0.0f; }

/// All (point, pixel) pairs for one image, sorted by point index. The pixel
/// depth check is |z - D| <= sigma_ratio * D when occlusion is enabled.
std::vector<PointPixelPair> visible_pairs(const PointCloud& cloud, const FeatureImage& image,
                                          std::uint32_t image_index, const OcclusionConfig& occ);

/// Pairs over all images sorted by (point_index, image_index).
std::vector<PointPixelPair> visible_pairs(const Scene& scene, const OcclusionConfig& occ);

}  // namespace fieldfuse
