// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "fieldfuse/field.hpp"
#include "fieldfuse/fusion.hpp"
#include "fieldfuse/scene.hpp"
#include "fieldfuse/tensor.hpp"

namespace fieldfuse {

struct TrainConfig {
  int levels = 3;
  double base_voxel = 0.0;  // <= 0: coarsest level spans the cloud in 16 cells
  int iters = 500;
  std::size_t batch_points = 20000;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  double init_scale = 1e-2;  // magnitude of lazily created cells
  int full_loss_every = 0;   // > 0: also record the loss over all supervised points
};

struct TrainResult {
  DistilledField field;
  std::vector<double> batch_loss;  // one entry per step
  std::vector<double> full_loss;   // every full_loss_every steps, plus the final state
};

/// Output rows with norm below this count as zero for the cosine loss.
inline constexpr double kZeroNorm = 1e-12;

/// 1 - cos(a, b) for one row. When `grad` is non-empty it receives
/// d(1 - cos)/da; rows with |a| ~ 0 give loss 1 and a zero gradient.
double cosine_distance(std::span<const double> a, std::span<const float> b, std::span<double> grad);

/// Mean of 1 - cos over rows. `grad` (optional, m x C) receives dL/df3d.
double cosine_loss(const FeatureMatrix& f3d, const FeatureMatrix& f2d, Matrix<double>* grad = nullptr);

/// Lattice voxel sizes for a cloud: base / 2^l for l in [0, levels).
std::vector<double> level_voxel_sizes(const Bounds& bounds, const TrainConfig& cfg);
Bounds bounds_of(const PointCloud& cloud);

TrainResult train(const PointCloud& cloud, const FusedFeatureCloud& fused, const TrainConfig& cfg);

/// Sparse gradient of the mean cosine loss w.r.t. stored cell parameters.
struct FieldGradient {
  double loss = 0.0;
  // grads[l][slot * C + k]; untouched slots are zero.
  std::vector<std::vector<double>> grads;
};

FieldGradient loss_gradient(const DistilledField& field, std::span<const Eigen::Vector3d> positions,
                            const FeatureMatrix& targets);

/// Loss over a batch with all arithmetic in double.
double batch_loss(const DistilledField& field, std::span<const Eigen::Vector3d> positions,
                  const FeatureMatrix& targets);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients against central differences on `num_params`
/// random parameters of cells the batch touches. Relative error is
/// |a - n| / max(|a|, |n|, 1e-8).
GradCheckResult grad_check(const DistilledField& field, std::span<const Eigen::Vector3d> positions,
                           const FeatureMatrix& targets, std::size_t num_params = 100, std::uint64_t seed = 0,
                           double step = 1e-3);

}  // namespace fieldfuse
