// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "fieldfuse/tensor.hpp"

namespace fieldfuse {

struct CellKey {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  friend bool operator==(const CellKey&, const CellKey&) = default;
  friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    // Teschner et al. spatial hash primes.
    return static_cast<std::size_t>((static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.x)) * 73856093ULL) ^
                                    (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.y)) * 19349663ULL) ^
                                    (static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.z)) * 83492791ULL));
  }
};

/// One resolution of the field: a sparse map from lattice vertex to a
/// C-dim parameter vector. Absent vertices read as zero.
class FieldLevel {
 public:
  FieldLevel(double voxel_size, std::size_t dim) : voxel_size_(voxel_size), dim_(dim) {}

  double voxel_size() const noexcept { return voxel_size_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t cell_count() const noexcept { return keys_.size(); }

  /// Slot of a stored cell, or -1.
  std::int64_t find(const CellKey& key) const;
  /// Slot of `key`, inserting `init` (size dim) when absent.
  std::size_t insert(const CellKey& key, std::span<const float> init);

  std::span<float> values(std::size_t slot) { return {values_.data() + slot * dim_, dim_}; }
  std::span<const float> values(std::size_t slot) const { return {values_.data() + slot * dim_, dim_}; }
  const CellKey& key(std::size_t slot) const { return keys_[slot]; }

  /// Slots in ascending key order; used for canonical serialization.
  std::vector<std::size_t> sorted_slots() const;

 private:
  double voxel_size_;
  std::size_t dim_;
  std::unordered_map<CellKey, std::uint32_t, CellKeyHash> index_;
  std::vector<CellKey> keys_;
  std::vector<float> values_;
};

struct Bounds {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();
};

/// Trilinear stencil of one position at one level: the lower lattice corner
/// and the 8 corner weights in (dx, dy, dz) bit order, corner = dx | dy<<1 | dz<<2.
struct Stencil {
  CellKey base;
  std::array<double, 8> weights{};

  CellKey corner(int c) const { return {base.x + (c & 1), base.y + ((c >> 1) & 1), base.z + ((c >> 2) & 1)}; }
};

Stencil make_stencil(const Eigen::Vector3d& p, double voxel_size);

/// Sum over levels of trilinearly interpolated lattice vectors.
class DistilledField {
 public:
  DistilledField() = default;
  DistilledField(std::size_t dim, std::span<const double> voxel_sizes, Bounds bounds);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t level_count() const noexcept { return levels_.size(); }
  FieldLevel& level(std::size_t l) { return levels_[l]; }
  const FieldLevel& level(std::size_t l) const { return levels_[l]; }
  const Bounds& bounds() const noexcept { return bounds_; }
  std::size_t total_cells() const;

  /// Field value at `p` accumulated in double precision.
  void eval(const Eigen::Vector3d& p, std::span<double> out) const;

  /// Structural equality: same levels, same stored cells with identical bits.
  bool same_as(const DistilledField& other) const;

 private:
  std::size_t dim_ = 0;
  std::vector<FieldLevel> levels_;
  Bounds bounds_;
};

/// Evaluate at many positions (OpenMP over positions). Output m x C float.
FeatureMatrix field_eval(const DistilledField& field, std::span<const Eigen::Vector3d> positions);

// Field container: "OVFF" | u32 version=1 | u64 header_len | JSON header |
// per level: n x 3 i32 cell coords, n x C f32 values (little-endian, cells in
// ascending (x, y, z) order). The JSON header carries dim, bounds and
// per-level voxel_size / num_cells.
std::vector<std::uint8_t> encode_field(const DistilledField& field);
DistilledField decode_field(std::span<const std::uint8_t> bytes);
void save_field(const std::filesystem::path& path, const DistilledField& field);
DistilledField load_field(const std::filesystem::path& path);

}  // namespace fieldfuse
