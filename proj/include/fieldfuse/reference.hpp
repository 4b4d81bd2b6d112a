// SPDX-License-Identifier: Apache-2.0
#pragma once

// Single-threaded reference versions of the OpenMP kernels. They share no
// loop code with the parallel paths and exist for equivalence tests and the
// benchmark baseline.

#include <span>
#include <vector>

#include "fieldfuse/eval.hpp"
#include "fieldfuse/field.hpp"
#include "fieldfuse/fusion.hpp"
#include "fieldfuse/projection.hpp"
#include "fieldfuse/query.hpp"

namespace fieldfuse::reference {

std::vector<PointPixelPair> visible_pairs(const Scene& scene, const OcclusionConfig& occ);

FusedFeatureCloud fuse_average(const Scene& scene, const OcclusionConfig& occ);

FeatureMatrix field_eval(const DistilledField& field, std::span<const Eigen::Vector3d> positions);

Matrix<float> similarity_scores(const FeatureMatrix& features, const PromptSet& prompts);

ConfusionMatrix confusion(std::span<const std::int32_t> gt, std::span<const std::int32_t> pred, std::size_t num_classes);

}  // namespace fieldfuse::reference
