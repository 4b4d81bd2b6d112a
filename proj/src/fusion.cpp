// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fieldfuse/error.hpp"
#include "fieldfuse/rng.hpp"

namespace fieldfuse {
namespace {

using Row = std::span<const float>;

// Canonical member order: lexicographic on feature values. Summing in this
// order makes the result independent of how the scene's images are ordered.
void canonical_sort(std::vector<Row>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](Row a, Row b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  });
}

double distance(Row a, Row b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const double d = static_cast<double>(a[c]) - static_cast<double>(b[c]);
    s += d * d;
  }
  return std::sqrt(s);
}

void pool_average(std::vector<Row> rows, std::span<float> out) {
  canonical_sort(rows);
  for (std::size_t c = 0; c < out.size(); ++c) {
    double sum = 0.0;
    for (const auto& r : rows) sum += r[c];
    out[c] = static_cast<float>(sum / static_cast<double>(rows.size()));
  }
}

// Member minimizing summed Euclidean distance to the others; ties keep the
// earliest hit (lowest image index).
std::size_t pool_median(const std::vector<Row>& rows) {
  std::vector<Row> canonical = rows;
  canonical_sort(canonical);
  std::size_t best = 0;
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double sum = 0.0;
    for (const auto& other : canonical) sum += distance(rows[i], other);
    if (sum < best_sum) {
      best_sum = sum;
      best = i;
    }
  }
  return best;
}

}  // namespace

std::size_t random_pick(std::uint64_t seed, std::size_t point, std::size_t k) {
  SplitMix64 rng(mix64(seed) ^ mix64(static_cast<std::uint64_t>(point) + 0x5bd1e995ULL));
  return static_cast<std::size_t>(rng.below(k));
}

HitTable collect_hits(const Scene& scene, const OcclusionConfig& occ) {
  const std::size_t m = scene.cloud.size();
  std::vector<std::vector<PointPixelPair>> per_image(scene.images.size());
  for (std::size_t k = 0; k < scene.images.size(); ++k)
    per_image[k] = visible_pairs(scene.cloud, scene.images[k], static_cast<std::uint32_t>(k), occ);

  HitTable table;
  table.offsets.assign(m + 1, 0);
  for (const auto& pairs : per_image)
    for (const auto& p : pairs) ++table.offsets[p.point_index + 1];
  for (std::size_t i = 0; i < m; ++i) table.offsets[i + 1] += table.offsets[i];
  table.hits.resize(table.offsets[m]);
  std::vector<std::size_t> cursor(table.offsets.begin(), table.offsets.end() - 1);
  for (const auto& pairs : per_image)
    for (const auto& p : pairs) table.hits[cursor[p.point_index]++] = p.hit;
  return table;
}

FusedFeatureCloud pool_hits(const Scene& scene, const HitTable& table, const PoolConfig& pool) {
  const std::size_t m = scene.cloud.size();
  const std::size_t c = scene.feature_dim();
  if (table.offsets.size() != m + 1) throw Error(ErrorCode::ShapeMismatch, "hit table does not match cloud");
  for (const auto& image : scene.images)
    if (image.feature_dim() != c) throw Error(ErrorCode::InconsistentFeatureDim, "feature dims differ across images");

  FusedFeatureCloud fused{FeatureMatrix(m, c, 0.0f), std::vector<std::uint32_t>(m, 0)};
  const auto count = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(dynamic, 256)
  for (std::int64_t i = 0; i < count; ++i) {
    const auto hits = table.of(static_cast<std::size_t>(i));
    fused.view_count[i] = static_cast<std::uint32_t>(hits.size());
    if (hits.empty()) continue;
    std::vector<Row> rows;
    rows.reserve(hits.size());
    for (const auto& h : hits) {
      const auto& image = scene.images[h.image_index];
      rows.push_back(image.features.row(image.pixel_index(h.u, h.v)));
    }
    auto out = fused.features.row(static_cast<std::size_t>(i));
    switch (pool.kind) {
      case PoolKind::Average:
        pool_average(std::move(rows), out);
        break;
      case PoolKind::Random: {
        const auto& r = rows[random_pick(pool.seed, static_cast<std::size_t>(i), rows.size())];
        std::copy(r.begin(), r.end(), out.begin());
        break;
      }
      case PoolKind::Median: {
        const auto& r = rows[pool_median(rows)];
        std::copy(r.begin(), r.end(), out.begin());
        break;
      }
    }
  }
  return fused;
}

FusedFeatureCloud fuse(const Scene& scene, const OcclusionConfig& occ, const PoolConfig& pool) {
  if (scene.images.empty()) throw Error(ErrorCode::InvalidArgument, "scene has no images");
  return pool_hits(scene, collect_hits(scene, occ), pool);
}

std::vector<std::int32_t> majority_vote_labels(std::span<const ViewLabels> views, std::size_t num_points) {
  std::vector<std::map<std::int32_t, std::size_t>> votes(num_points);
  for (const auto& view : views)
    for (const auto& [point, label] : view) {
      if (point >= num_points) throw Error(ErrorCode::InvalidArgument, "view label for point out of range");
      if (label < 0) throw Error(ErrorCode::LabelOutOfRange, "view labels must be non-negative");
      ++votes[point][label];
    }
  std::vector<std::int32_t> labels(num_points, -1);
  for (std::size_t i = 0; i < num_points; ++i) {
    std::size_t best = 0;
    for (const auto& [label, n] : votes[i])  // ascending label id, so ties keep the lowest
      if (n > best) {
        best = n;
        labels[i] = label;
      }
  }
  return labels;
}

}  // namespace fieldfuse
