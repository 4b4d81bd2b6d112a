// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/projection.hpp"

#include <algorithm>
#include <cmath>

#include "fieldfuse/error.hpp"

namespace fieldfuse {

std::optional<Projection> project_point(const Eigen::Vector3d& p, const Camera& camera) {
  const Eigen::Vector3d pc = camera.extrinsics.topLeftCorner<3, 3>() * p + camera.extrinsics.topRightCorner<3, 1>();
  if (!(pc.z() > 0.0)) return std::nullopt;
  return Projection{camera.fx() * pc.x() / pc.z() + camera.cx(), camera.fy() * pc.y() / pc.z() + camera.cy(), pc.z()};
}

std::optional<int> nearest_pixel(double coord, int size) {
  if (!(coord > -0.5) || !(coord < static_cast<double>(size) - 0.5)) return std::nullopt;
  return static_cast<int>(std::floor(coord + 0.5));
}

namespace {

std::optional<PixelHit> pair_point(const Eigen::Vector3d& p, const FeatureImage& image, std::uint32_t image_index,
                                   const OcclusionConfig& occ) {
  const auto proj = project_point(p, image.camera);
  if (!proj) return std::nullopt;
  const auto u = nearest_pixel(proj->u, image.camera.width);
  const auto v = nearest_pixel(proj->v, image.camera.height);
  if (!u || !v) return std::nullopt;
  if (occ.enabled) {
    const float d = (*image.depth)[image.pixel_index(*u, *v)];
    if (!depth_valid(d)) return std::nullopt;
    const double depth = d;
    if (std::abs(proj->z - depth) > occ.sigma_ratio * depth) return std::nullopt;
  }
  return PixelHit{image_index, *u, *v, proj->z};
}

}  // namespace

std::vector<PointPixelPair> visible_pairs(const PointCloud& cloud, const FeatureImage& image,
                                          std::uint32_t image_index, const OcclusionConfig& occ) {
  if (occ.enabled && !image.depth)
    throw Error(ErrorCode::MissingDepth, "occlusion test needs a depth map for image " + std::to_string(image_index));
  if (occ.sigma_ratio < 0.0) throw Error(ErrorCode::InvalidArgument, "sigma_ratio must be non-negative");

  const auto m = static_cast<std::int64_t>(cloud.size());
  std::vector<std::optional<PixelHit>> hits(cloud.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) hits[i] = pair_point(cloud.positions[i], image, image_index, occ);

  std::vector<PointPixelPair> pairs;
  for (std::size_t i = 0; i < hits.size(); ++i)
    if (hits[i]) pairs.push_back({static_cast<std::uint32_t>(i), *hits[i]});
  return pairs;
}

std::vector<PointPixelPair> visible_pairs(const Scene& scene, const OcclusionConfig& occ) {
  std::vector<PointPixelPair> all;
  for (std::size_t k = 0; k < scene.images.size(); ++k) {
    auto pairs = visible_pairs(scene.cloud, scene.images[k], static_cast<std::uint32_t>(k), occ);
    all.insert(all.end(), pairs.begin(), pairs.end());
  }
  std::stable_sort(all.begin(), all.end(), [](const PointPixelPair& a, const PointPixelPair& b) {
    return a.point_index < b.point_index;
  });
  return all;
}

}  // namespace fieldfuse
