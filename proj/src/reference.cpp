// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/reference.hpp"

#include <algorithm>
#include <cmath>

#include "fieldfuse/error.hpp"

namespace fieldfuse::reference {

std::vector<PointPixelPair> visible_pairs(const Scene& scene, const OcclusionConfig& occ) {
  std::vector<PointPixelPair> pairs;
  for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
    for (std::size_t k = 0; k < scene.images.size(); ++k) {
      const auto& image = scene.images[k];
      if (occ.enabled && !image.depth) throw Error(ErrorCode::MissingDepth, "image without depth");
      const auto proj = project_point(scene.cloud.positions[i], image.camera);
      if (!proj) continue;
      const auto u = nearest_pixel(proj->u, image.camera.width);
      const auto v = nearest_pixel(proj->v, image.camera.height);
      if (!u || !v) continue;
      if (occ.enabled) {
        const float d = (*image.depth)[image.pixel_index(*u, *v)];
        if (!depth_valid(d) || std::abs(proj->z - d) > occ.sigma_ratio * d) continue;
      }
      pairs.push_back({static_cast<std::uint32_t>(i), {static_cast<std::uint32_t>(k), *u, *v, proj->z}});
    }
  }
  return pairs;
}

FusedFeatureCloud fuse_average(const Scene& scene, const OcclusionConfig& occ) {
  const std::size_t m = scene.cloud.size();
  const std::size_t c = scene.feature_dim();
  std::vector<std::vector<std::span<const float>>> members(m);
  for (const auto& p : reference::visible_pairs(scene, occ)) {
    const auto& image = scene.images[p.hit.image_index];
    members[p.point_index].push_back(image.features.row(image.pixel_index(p.hit.u, p.hit.v)));
  }
  FusedFeatureCloud fused{FeatureMatrix(m, c, 0.0f), std::vector<std::uint32_t>(m, 0)};
  for (std::size_t i = 0; i < m; ++i) {
    auto& rows = members[i];
    fused.view_count[i] = static_cast<std::uint32_t>(rows.size());
    if (rows.empty()) continue;
    std::stable_sort(rows.begin(), rows.end(), [](auto a, auto b) {
      return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
    });
    for (std::size_t k = 0; k < c; ++k) {
      double sum = 0.0;
      for (const auto& r : rows) sum += r[k];
      fused.features(i, k) = static_cast<float>(sum / static_cast<double>(rows.size()));
    }
  }
  return fused;
}

FeatureMatrix field_eval(const DistilledField& field, std::span<const Eigen::Vector3d> positions) {
  FeatureMatrix out(positions.size(), field.dim());
  std::vector<double> acc(field.dim());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t l = 0; l < field.level_count(); ++l) {
      const auto& level = field.level(l);
      const double h = level.voxel_size();
      const Eigen::Vector3d g = positions[i] / h;
      const Eigen::Vector3d lo = g.array().floor();
      const Eigen::Vector3d t = g - lo;
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const double w = (dx ? t.x() : 1.0 - t.x()) * (dy ? t.y() : 1.0 - t.y()) * (dz ? t.z() : 1.0 - t.z());
            const CellKey key{static_cast<std::int32_t>(lo.x()) + dx, static_cast<std::int32_t>(lo.y()) + dy,
                              static_cast<std::int32_t>(lo.z()) + dz};
            const auto slot = level.find(key);
            if (slot < 0 || w == 0.0) continue;
            const auto v = level.values(static_cast<std::size_t>(slot));
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += w * static_cast<double>(v[k]);
          }
    }
    for (std::size_t k = 0; k < acc.size(); ++k) out(i, k) = static_cast<float>(acc[k]);
  }
  return out;
}

Matrix<float> similarity_scores(const FeatureMatrix& features, const PromptSet& prompts) {
  Matrix<float> scores(features.rows(), prompts.size(), 0.0f);
  for (std::size_t i = 0; i < features.rows(); ++i)
    for (std::size_t n = 0; n < prompts.size(); ++n)
      scores(i, n) = static_cast<float>(cosine(features.row(i), prompts.embeddings.row(n)));
  return scores;
}

ConfusionMatrix confusion(std::span<const std::int32_t> gt, std::span<const std::int32_t> pred, std::size_t num_classes) {
  ConfusionMatrix conf(num_classes, num_classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i] >= 0 && pred[i] >= 0) ++conf(static_cast<std::size_t>(gt[i]), static_cast<std::size_t>(pred[i]));
  return conf;
}

}  // namespace fieldfuse::reference
