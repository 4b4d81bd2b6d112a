// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fieldfuse/field.hpp"
#include "fieldfuse/fusion.hpp"
#include "fieldfuse/scene.hpp"
#include "fieldfuse/tensor.hpp"

namespace fieldfuse {

/// m x N cosine scores. Rows of all-zero features score 0 and are flagged.
struct SimilarityMatrix {
  Matrix<float> scores;
  std::vector<std::uint8_t> zero_row;
};

SimilarityMatrix similarities(const FeatureMatrix& features, const PromptSet& prompts);

/// Cosine in double; 0 when either side has (numerically) zero norm.
double cosine(std::span<const float> a, std::span<const float> b);

/// max_n cos(row, t_n), or -infinity for a zero row.
double max_similarity(std::span<const float> row, const PromptSet& prompts);

enum class FeatureSource : std::uint8_t { From2D = 0, From3D = 1, None = 2 };

struct EnsembleResult {
  FeatureMatrix features;
  std::vector<FeatureSource> source;
  std::vector<double> score;  // max prompt similarity of the chosen feature; -inf for None
};

/// Scores closer than this pick the 3D feature.
inline constexpr double kEnsembleTie = 1e-12;

/// Per point, keeps whichever of the fused (2D) and distilled (3D) features
/// reaches the higher max similarity over `prompts`. Points with no views have
/// s2D = -inf; points where the field is zero have s3D = -inf.
EnsembleResult ensemble(const FusedFeatureCloud& fused, const FeatureMatrix& distilled, const PromptSet& prompts);
EnsembleResult ensemble(const FusedFeatureCloud& fused, const DistilledField& field, const PointCloud& cloud,
                        const PromptSet& prompts);

struct Segmentation {
  std::vector<std::int32_t> labels;  // -1 for zero features
  std::vector<float> confidence;     // winning cosine, 0 for zero features
};

/// argmax_n cos(feature, t_n) with ties to the lowest n.
Segmentation segment(const FeatureMatrix& features, const PromptSet& prompts);

/// Per-point cosine to one query vector (text or image embedding).
std::vector<float> heatmap(const FeatureMatrix& features, std::span<const float> query);

struct RetrievalHit {
  std::int32_t region_id = 0;
  std::uint32_t point_index = 0;
  float score = 0.0f;

  friend bool operator==(const RetrievalHit&, const RetrievalHit&) = default;
};

/// Best point of each region, regions ranked by that score (ties: lower
/// region id, then lower point index), truncated to top_k.
std::vector<RetrievalHit> retrieve(const FeatureMatrix& features, std::span<const std::int32_t> regions,
                                   std::span<const float> query, std::size_t top_k);

/// Wire quantization of a score in [-1, 1]: round((s + 1) * 127.5).
std::uint8_t quantize_score(float score);
float dequantize_score(std::uint8_t level);

}  // namespace fieldfuse
