// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "fieldfuse/projection.hpp"
#include "fieldfuse/scene.hpp"
#include "fieldfuse/tensor.hpp"

namespace fieldfuse {

/// Per-point fused features. Rows with view_count 0 are all-zero.
struct FusedFeatureCloud {
  FeatureMatrix features;
  std::vector<std::uint32_t> view_count;

  std::size_t size() const noexcept { return view_count.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
};

enum class PoolKind { Average, Random, Median };

struct PoolConfig {
  PoolKind kind = PoolKind::Average;
  std::uint64_t seed = 0;  // Random only
};

/// Pixel hits grouped by point (CSR layout); hits of a point are in
/// ascending image order.
struct HitTable {
  std::vector<std::size_t> offsets;  // size M + 1
  std::vector<PixelHit> hits;

  std::span<const PixelHit> of(std::size_t point) const {
    return {hits.data() + offsets[point], offsets[point + 1] - offsets[point]};
  }
};

HitTable collect_hits(const Scene& scene, const OcclusionConfig& occ);

FusedFeatureCloud fuse(const Scene& scene, const OcclusionConfig& occ, const PoolConfig& pool);

/// Pooling over an explicit hit table; `fuse` is collect_hits + this.
FusedFeatureCloud pool_hits(const Scene& scene, const HitTable& table, const PoolConfig& pool);

/// One view's labels: point index -> label.
using ViewLabels = std::map<std::uint32_t, std::int32_t>;

/// Plurality label per point across views, ties to the lowest label id,
/// -1 for points no view covers.
std::vector<std::int32_t> majority_vote_labels(std::span<const ViewLabels> views, std::size_t num_points);

/// Index of the random pick among `k` hits for `point` (splitmix64 of seed
/// and point index), shared with tests.
std::size_t random_pick(std::uint64_t seed, std::size_t point, std::size_t k);

}  // namespace fieldfuse
