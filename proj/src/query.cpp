// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/query.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "fieldfuse/distill.hpp"
#include "fieldfuse/error.hpp"

namespace fieldfuse {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * static_cast<double>(b[k]);
  return s;
}

void require_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw Error(ErrorCode::DimMismatch, std::string(what) + " dim " + std::to_string(got) + " != " + std::to_string(want));
}

std::vector<double> prompt_norms(const PromptSet& prompts) {
  std::vector<double> norms(prompts.size());
  for (std::size_t n = 0; n < prompts.size(); ++n) norms[n] = norm(prompts.embeddings.row(n));
  return norms;
}

// Cosines of one row against all prompts; false for a zero row.
bool row_cosines(std::span<const float> row, const PromptSet& prompts, std::span<const double> prompt_norm,
                 std::span<double> out) {
  const double nr = norm(row);
  if (nr < kZeroNorm) return false;
  for (std::size_t n = 0; n < prompts.size(); ++n) {
    const double np = prompt_norm[n];
    out[n] = np < kZeroNorm ? 0.0 : dot(row, prompts.embeddings.row(n)) / (nr * np);
  }
  return true;
}

}  // namespace

double cosine(std::span<const float> a, std::span<const float> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  return dot(a, b) / (na * nb);
}

SimilarityMatrix similarities(const FeatureMatrix& features, const PromptSet& prompts) {
  require_dim(features.cols(), prompts.dim(), "feature");
  const std::size_t m = features.rows();
  const std::size_t n = prompts.size();
  SimilarityMatrix sim{Matrix<float>(m, n, 0.0f), std::vector<std::uint8_t>(m, 0)};
  const auto norms = prompt_norms(prompts);
  const auto count = static_cast<std::int64_t>(m);
#pragma omp parallel
  {
    std::vector<double> cos(n);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
      if (!row_cosines(features.row(i), prompts, norms, cos)) {
        sim.zero_row[i] = 1;
        continue;
      }
      auto out = sim.scores.row(static_cast<std::size_t>(i));
      for (std::size_t k = 0; k < n; ++k) out[k] = static_cast<float>(cos[k]);
    }
  }
  return sim;
}

double max_similarity(std::span<const float> row, const PromptSet& prompts) {
  require_dim(row.size(), prompts.dim(), "feature");
  const auto norms = prompt_norms(prompts);
  std::vector<double> cos(prompts.size());
  if (!row_cosines(row, prompts, norms, cos)) return kNegInf;
  return *std::max_element(cos.begin(), cos.end());
}

EnsembleResult ensemble(const FusedFeatureCloud& fused, const FeatureMatrix& distilled, const PromptSet& prompts) {
  if (prompts.size() == 0) throw Error(ErrorCode::InvalidArgument, "ensemble needs at least one prompt");
  require_dim(fused.dim(), prompts.dim(), "fused feature");
  require_dim(distilled.cols(), prompts.dim(), "distilled feature");
  if (distilled.rows() != fused.size()) throw Error(ErrorCode::ShapeMismatch, "fused and distilled row counts differ");

  const std::size_t m = fused.size();
  EnsembleResult out{FeatureMatrix(m, prompts.dim(), 0.0f), std::vector<FeatureSource>(m, FeatureSource::None),
                     std::vector<double>(m, kNegInf)};
  const auto norms = prompt_norms(prompts);
  const auto count = static_cast<std::int64_t>(m);
#pragma omp parallel
  {
    std::vector<double> cos(prompts.size());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
      const auto f2 = fused.features.row(i);
      const auto f3 = distilled.row(i);
      double s2 = kNegInf;
      double s3 = kNegInf;
      if (fused.view_count[i] > 0 && row_cosines(f2, prompts, norms, cos)) s2 = *std::max_element(cos.begin(), cos.end());
      if (row_cosines(f3, prompts, norms, cos)) s3 = *std::max_element(cos.begin(), cos.end());
      if (s2 == kNegInf && s3 == kNegInf) continue;
      const bool pick2d = s3 == kNegInf || (s2 != kNegInf && s2 - s3 > kEnsembleTie);
      const auto& src = pick2d ? f2 : f3;
      std::copy(src.begin(), src.end(), out.features.row(static_cast<std::size_t>(i)).begin());
      out.source[i] = pick2d ? FeatureSource::From2D : FeatureSource::From3D;
      out.score[i] = pick2d ? s2 : s3;
    }
  }
  return out;
}

EnsembleResult ensemble(const FusedFeatureCloud& fused, const DistilledField& field, const PointCloud& cloud,
                        const PromptSet& prompts) {
  if (cloud.size() != fused.size()) throw Error(ErrorCode::ShapeMismatch, "cloud and fused features differ in size");
  require_dim(field.dim(), prompts.dim(), "field");
  return ensemble(fused, field_eval(field, cloud.positions), prompts);
}

Segmentation segment(const FeatureMatrix& features, const PromptSet& prompts) {
  require_dim(features.cols(), prompts.dim(), "feature");
  const std::size_t m = features.rows();
  Segmentation seg{std::vector<std::int32_t>(m, -1), std::vector<float>(m, 0.0f)};
  const auto norms = prompt_norms(prompts);
  const auto count = static_cast<std::int64_t>(m);
#pragma omp parallel
  {
    std::vector<double> cos(prompts.size());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
      if (!row_cosines(features.row(i), prompts, norms, cos)) continue;
      // max_element returns the first maximum: ties go to the lowest index
      const auto best = std::max_element(cos.begin(), cos.end());
      seg.labels[i] = static_cast<std::int32_t>(best - cos.begin());
      seg.confidence[i] = static_cast<float>(*best);
    }
  }
  return seg;
}

std::vector<float> heatmap(const FeatureMatrix& features, std::span<const float> query) {
  require_dim(query.size(), features.cols(), "query");
  const double nq = norm(query);
  if (nq < kZeroNorm) throw Error(ErrorCode::ZeroQuery, "query embedding is all zero");
  std::vector<float> scores(features.rows(), 0.0f);
  const auto count = static_cast<std::int64_t>(features.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < count; ++i) {
    const auto row = features.row(i);
    const double nr = norm(row);
    if (nr < kZeroNorm) continue;
    scores[i] = static_cast<float>(dot(row, query) / (nr * nq));
  }
  return scores;
}

std::vector<RetrievalHit> retrieve(const FeatureMatrix& features, std::span<const std::int32_t> regions,
                                   std::span<const float> query, std::size_t top_k) {
  if (regions.empty()) throw Error(ErrorCode::NoRegions, "retrieval needs per-point region ids");
  if (regions.size() != features.rows()) throw Error(ErrorCode::ShapeMismatch, "region ids and features differ in length");
  if (top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");
  const auto scores = heatmap(features, query);

  // A hit beats another when it scores higher, or ties with a lower point index.
  auto better = [](const RetrievalHit& a, const RetrievalHit& b) {
    return a.score > b.score || (a.score == b.score && a.point_index < b.point_index);
  };
  std::map<std::int32_t, RetrievalHit> best;
#pragma omp parallel
  {
    std::map<std::int32_t, RetrievalHit> local;
#pragma omp for schedule(static) nowait
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(scores.size()); ++i) {
      const RetrievalHit hit{regions[i], static_cast<std::uint32_t>(i), scores[i]};
      auto [it, inserted] = local.try_emplace(hit.region_id, hit);
      if (!inserted && better(hit, it->second)) it->second = hit;
    }
#pragma omp critical
    for (const auto& [region, hit] : local) {
      auto [it, inserted] = best.try_emplace(region, hit);
      if (!inserted && better(hit, it->second)) it->second = hit;
    }
  }

  std::vector<RetrievalHit> hits;
  hits.reserve(best.size());
  for (const auto& [region, hit] : best) hits.push_back(hit);
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.region_id != b.region_id) return a.region_id < b.region_id;
    return a.point_index < b.point_index;
  });
  if (hits.size() > top_k) hits.resize(top_k);
  return hits;
}

std::uint8_t quantize_score(float score) {
  const double s = std::clamp(static_cast<double>(score), -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((s + 1.0) * 127.5));
}

float dequantize_score(std::uint8_t level) { return static_cast<float>(static_cast<double>(level) / 127.5 - 1.0); }

}  // namespace fieldfuse
