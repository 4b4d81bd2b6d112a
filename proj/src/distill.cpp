// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fieldfuse/error.hpp"
#include "fieldfuse/rng.hpp"

namespace fieldfuse {
namespace {

constexpr int kCorners = 8;

std::uint64_t cell_seed(std::uint64_t seed, std::size_t level, const CellKey& key) {
  std::uint64_t h = mix64(seed ^ (0xa0761d6478bd642fULL * (level + 1)));
  h = mix64(h ^ static_cast<std::uint32_t>(key.x));
  h = mix64(h ^ static_cast<std::uint32_t>(key.y));
  return mix64(h ^ static_cast<std::uint32_t>(key.z));
}

// Per-point stencil slots: level-major, 8 corners each; -1 for absent or
// zero-weight corners.
struct PointStencils {
  std::vector<Stencil> stencils;   // n * L
  std::vector<std::int64_t> slots;  // n * L * 8
};

PointStencils locate(const DistilledField& field, std::span<const Eigen::Vector3d> positions) {
  const std::size_t levels = field.level_count();
  PointStencils ps;
  ps.stencils.resize(positions.size() * levels);
  ps.slots.assign(positions.size() * levels * kCorners, -1);
  const auto n = static_cast<std::int64_t>(positions.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < levels; ++l) {
      const auto& level = field.level(l);
      auto& s = ps.stencils[i * levels + l];
      s = make_stencil(positions[i], level.voxel_size());
      for (int c = 0; c < kCorners; ++c)
        if (s.weights[c] != 0.0) ps.slots[(i * levels + l) * kCorners + c] = level.find(s.corner(c));
    }
  }
  return ps;
}

// Forward pass plus per-row d(1 - cos)/df. Returns per-row losses.
std::vector<double> forward_backward(const DistilledField& field, const PointStencils& ps, std::size_t n,
                                     std::span<const float> targets_flat, Matrix<double>& row_grads) {
  const std::size_t levels = field.level_count();
  const std::size_t dim = field.dim();
  std::vector<double> losses(n);
  row_grads = Matrix<double>(n, dim);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel
  {
    std::vector<double> acc(dim);
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < count; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t l = 0; l < levels; ++l) {
        const auto& s = ps.stencils[i * levels + l];
        for (int c = 0; c < kCorners; ++c) {
          const auto slot = ps.slots[(i * levels + l) * kCorners + c];
          if (slot < 0) continue;
          const auto v = field.level(l).values(static_cast<std::size_t>(slot));
          for (std::size_t k = 0; k < dim; ++k) acc[k] += s.weights[c] * static_cast<double>(v[k]);
        }
      }
      losses[i] = cosine_distance(acc, targets_flat.subspan(i * dim, dim), row_grads.row(static_cast<std::size_t>(i)));
    }
  }
  return losses;
}

void check_batch(std::span<const Eigen::Vector3d> positions, const FeatureMatrix& targets, std::size_t dim) {
  if (positions.empty()) throw Error(ErrorCode::EmptyBatch, "batch has no rows");
  if (targets.rows() != positions.size()) throw Error(ErrorCode::ShapeMismatch, "targets and positions differ in rows");
  if (targets.cols() != dim) throw Error(ErrorCode::DimMismatch, "target dim differs from field dim");
}

}  // namespace

double cosine_distance(std::span<const double> a, std::span<const float> b, std::span<double> grad) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double bk = b[k];
    ab += a[k] * bk;
    aa += a[k] * a[k];
    bb += bk * bk;
  }
  const double na = std::sqrt(aa);
  const double nb = std::sqrt(bb);
  if (na < kZeroNorm || nb < kZeroNorm) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return 1.0;
  }
  const double cos = ab / (na * nb);
  if (!grad.empty()) {
    // d(1 - cos)/da = -(b / (|a||b|) - cos * a / |a|^2)
    for (std::size_t k = 0; k < a.size(); ++k) grad[k] = -(static_cast<double>(b[k]) / (na * nb) - cos * a[k] / aa);
  }
  return 1.0 - cos;
}

double cosine_loss(const FeatureMatrix& f3d, const FeatureMatrix& f2d, Matrix<double>* grad) {
  if (f3d.rows() == 0) throw Error(ErrorCode::EmptyBatch, "cosine loss over zero rows");
  if (f3d.rows() != f2d.rows()) throw Error(ErrorCode::ShapeMismatch, "row counts differ");
  if (f3d.cols() != f2d.cols()) throw Error(ErrorCode::DimMismatch, "feature dims differ");
  const std::size_t m = f3d.rows();
  const std::size_t dim = f3d.cols();
  if (grad) *grad = Matrix<double>(m, dim);
  std::vector<double> a(dim);
  std::vector<double> g(dim);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = f3d.row(i);
    std::copy(row.begin(), row.end(), a.begin());
    total += cosine_distance(a, f2d.row(i), grad ? std::span<double>(g) : std::span<double>());
    if (grad)
      for (std::size_t k = 0; k < dim; ++k) (*grad)(i, k) = g[k] / static_cast<double>(m);
  }
  return total / static_cast<double>(m);
}

Bounds bounds_of(const PointCloud& cloud) {
  Bounds b;
  b.min = b.max = cloud.positions.front();
  for (const auto& p : cloud.positions) {
    b.min = b.min.cwiseMin(p);
    b.max = b.max.cwiseMax(p);
  }
  return b;
}

std::vector<double> level_voxel_sizes(const Bounds& bounds, const TrainConfig& cfg) {
  if (cfg.levels < 1) throw Error(ErrorCode::InvalidArgument, "levels must be >= 1");
  double base = cfg.base_voxel;
  if (!(base > 0.0)) {
    const double extent = (bounds.max - bounds.min).maxCoeff();
    base = extent > 0.0 ? extent / 16.0 : 1.0;
  }
  std::vector<double> sizes(static_cast<std::size_t>(cfg.levels));
  for (int l = 0; l < cfg.levels; ++l) sizes[l] = std::ldexp(base, -l);
  return sizes;
}

TrainResult train(const PointCloud& cloud, const FusedFeatureCloud& fused, const TrainConfig& cfg) {
  if (fused.size() != cloud.size()) throw Error(ErrorCode::ShapeMismatch, "fused features and cloud differ in size");
  if (cfg.batch_points < 1) throw Error(ErrorCode::InvalidArgument, "batch_points must be >= 1");
  if (cfg.iters < 0) throw Error(ErrorCode::InvalidArgument, "iters must be >= 0");
  std::vector<std::size_t> supervised;
  for (std::size_t i = 0; i < fused.size(); ++i)
    if (fused.view_count[i] > 0) supervised.push_back(i);
  if (supervised.empty()) throw Error(ErrorCode::NoSupervision, "no point has a fused feature");

  const Bounds bounds = bounds_of(cloud);
  const auto sizes = level_voxel_sizes(bounds, cfg);
  const std::size_t dim = fused.dim();
  const std::size_t levels = sizes.size();
  TrainResult result{DistilledField(dim, sizes, bounds), {}, {}};
  auto& field = result.field;
  if (cfg.iters == 0) return result;

  const std::size_t batch = std::min(cfg.batch_points, supervised.size());
  std::vector<std::vector<double>> moment1(levels), moment2(levels), grads(levels);
  std::vector<std::vector<char>> touched_flag(levels);
  std::vector<std::vector<std::size_t>> touched(levels);
  std::vector<Eigen::Vector3d> positions(batch);
  FeatureMatrix targets(batch, dim);
  std::vector<float> init(dim);
  std::vector<std::size_t> order = supervised;
  SplitMix64 rng(cfg.seed);

  std::vector<Eigen::Vector3d> all_positions;
  FeatureMatrix all_targets;
  if (cfg.full_loss_every > 0) {
    all_positions.reserve(supervised.size());
    all_targets = FeatureMatrix(supervised.size(), dim);
    for (std::size_t j = 0; j < supervised.size(); ++j) {
      all_positions.push_back(cloud.positions[supervised[j]]);
      const auto src = fused.features.row(supervised[j]);
      std::copy(src.begin(), src.end(), all_targets.row(j).begin());
    }
    result.full_loss.push_back(batch_loss(field, all_positions, all_targets));
  }

  for (int step = 1; step <= cfg.iters; ++step) {
    if (batch < supervised.size()) {
      // partial Fisher-Yates: the first `batch` entries become the sample
      for (std::size_t j = 0; j < batch; ++j) std::swap(order[j], order[j + rng.below(order.size() - j)]);
    }
    for (std::size_t j = 0; j < batch; ++j) {
      positions[j] = cloud.positions[order[j]];
      const auto src = fused.features.row(order[j]);
      std::copy(src.begin(), src.end(), targets.row(j).begin());
    }

    // Create the cells this batch touches, in batch order.
    auto ps = locate(field, positions);
    for (std::size_t j = 0; j < batch; ++j)
      for (std::size_t l = 0; l < levels; ++l) {
        const auto& s = ps.stencils[j * levels + l];
        for (int c = 0; c < kCorners; ++c) {
          auto& slot = ps.slots[(j * levels + l) * kCorners + c];
          if (slot >= 0 || s.weights[c] == 0.0) continue;
          const CellKey key = s.corner(c);
          slot = field.level(l).find(key);
          if (slot >= 0) continue;
          SplitMix64 cell_rng(cell_seed(cfg.seed, l, key));
          for (auto& v : init) v = static_cast<float>(cfg.init_scale * (2.0 * cell_rng.uniform() - 1.0));
          slot = static_cast<std::int64_t>(field.level(l).insert(key, init));
        }
      }
    for (std::size_t l = 0; l < levels; ++l) {
      const std::size_t n = field.level(l).cell_count() * dim;
      moment1[l].resize(n, 0.0);
      moment2[l].resize(n, 0.0);
      grads[l].resize(n, 0.0);
      touched_flag[l].resize(field.level(l).cell_count(), 0);
    }

    Matrix<double> row_grads;
    const auto losses = forward_backward(field, ps, batch, targets.data(), row_grads);
    result.batch_loss.push_back(std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(batch));

    const double scale = 1.0 / static_cast<double>(batch);
    for (std::size_t j = 0; j < batch; ++j) {
      const auto g = row_grads.row(j);
      for (std::size_t l = 0; l < levels; ++l) {
        const auto& s = ps.stencils[j * levels + l];
        for (int c = 0; c < kCorners; ++c) {
          const auto slot = ps.slots[(j * levels + l) * kCorners + c];
          if (slot < 0) continue;
          const auto base = static_cast<std::size_t>(slot) * dim;
          const double w = s.weights[c] * scale;
          for (std::size_t k = 0; k < dim; ++k) grads[l][base + k] += w * g[k];
          if (!touched_flag[l][slot]) {
            touched_flag[l][slot] = 1;
            touched[l].push_back(static_cast<std::size_t>(slot));
          }
        }
      }
    }

    const double correction1 = 1.0 - std::pow(cfg.beta1, step);
    const double correction2 = 1.0 - std::pow(cfg.beta2, step);
    for (std::size_t l = 0; l < levels; ++l) {
      auto& level = field.level(l);
      const auto count = static_cast<std::int64_t>(touched[l].size());
#pragma omp parallel for schedule(static)
      for (std::int64_t t = 0; t < count; ++t) {
        const std::size_t slot = touched[l][t];
        auto values = level.values(slot);
        for (std::size_t k = 0; k < dim; ++k) {
          const std::size_t idx = slot * dim + k;
          const double g = grads[l][idx];
          moment1[l][idx] = cfg.beta1 * moment1[l][idx] + (1.0 - cfg.beta1) * g;
          moment2[l][idx] = cfg.beta2 * moment2[l][idx] + (1.0 - cfg.beta2) * g * g;
          const double m_hat = moment1[l][idx] / correction1;
          const double v_hat = moment2[l][idx] / correction2;
          values[k] = static_cast<float>(values[k] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
          grads[l][idx] = 0.0;
        }
        touched_flag[l][slot] = 0;
      }
      touched[l].clear();
    }

    if (cfg.full_loss_every > 0 && (step % cfg.full_loss_every == 0 || step == cfg.iters))
      result.full_loss.push_back(batch_loss(field, all_positions, all_targets));
  }
  return result;
}

FieldGradient loss_gradient(const DistilledField& field, std::span<const Eigen::Vector3d> positions,
                            const FeatureMatrix& targets) {
  check_batch(positions, targets, field.dim());
  const std::size_t n = positions.size();
  const std::size_t dim = field.dim();
  const auto ps = locate(field, positions);
  Matrix<double> row_grads;
  const auto losses = forward_backward(field, ps, n, targets.data(), row_grads);

  FieldGradient out;
  out.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
  out.grads.resize(field.level_count());
  for (std::size_t l = 0; l < field.level_count(); ++l) out.grads[l].assign(field.level(l).cell_count() * dim, 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t l = 0; l < field.level_count(); ++l) {
      const auto& s = ps.stencils[j * field.level_count() + l];
      for (int c = 0; c < kCorners; ++c) {
        const auto slot = ps.slots[(j * field.level_count() + l) * kCorners + c];
        if (slot < 0) continue;
        for (std::size_t k = 0; k < dim; ++k)
          out.grads[l][static_cast<std::size_t>(slot) * dim + k] += s.weights[c] * scale * row_grads(j, k);
      }
    }
  return out;
}

double batch_loss(const DistilledField& field, std::span<const Eigen::Vector3d> positions,
                  const FeatureMatrix& targets) {
  check_batch(positions, targets, field.dim());
  const auto ps = locate(field, positions);
  Matrix<double> row_grads;
  const auto losses = forward_backward(field, ps, positions.size(), targets.data(), row_grads);
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(positions.size());
}

GradCheckResult grad_check(const DistilledField& field, std::span<const Eigen::Vector3d> positions,
                           const FeatureMatrix& targets, std::size_t num_params, std::uint64_t seed, double step) {
  check_batch(positions, targets, field.dim());
  const auto analytic = loss_gradient(field, positions, targets);

  struct Param {
    std::size_t level, slot, channel;
  };
  std::vector<Param> candidates;
  const auto ps = locate(field, positions);
  {
    std::vector<std::vector<char>> seen(field.level_count());
    for (std::size_t l = 0; l < field.level_count(); ++l) seen[l].assign(field.level(l).cell_count(), 0);
    for (std::size_t j = 0; j < positions.size(); ++j)
      for (std::size_t l = 0; l < field.level_count(); ++l)
        for (int c = 0; c < kCorners; ++c) {
          const auto slot = ps.slots[(j * field.level_count() + l) * kCorners + c];
          if (slot < 0 || seen[l][slot]) continue;
          seen[l][slot] = 1;
          for (std::size_t k = 0; k < field.dim(); ++k) candidates.push_back({l, static_cast<std::size_t>(slot), k});
        }
  }
  GradCheckResult result;
  if (candidates.empty()) return result;

  SplitMix64 rng(seed);
  for (std::size_t j = 0; j < std::min(num_params, candidates.size()); ++j)
    std::swap(candidates[j], candidates[j + rng.below(candidates.size() - j)]);
  candidates.resize(std::min(num_params, candidates.size()));

  DistilledField probe = field;
  for (const auto& p : candidates) {
    float& value = probe.level(p.level).values(p.slot)[p.channel];
    const float original = value;
    // Step sizes after float rounding, so the difference quotient is exact in x.
    const float plus = static_cast<float>(original + step);
    const float minus = static_cast<float>(original - step);
    value = plus;
    const double loss_plus = batch_loss(probe, positions, targets);
    value = minus;
    const double loss_minus = batch_loss(probe, positions, targets);
    value = original;
    const double numeric = (loss_plus - loss_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
    const double exact = analytic.grads[p.level][p.slot * field.dim() + p.channel];
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(exact - numeric) / denom);
    ++result.checked;
  }
  return result;
}

}  // namespace fieldfuse
