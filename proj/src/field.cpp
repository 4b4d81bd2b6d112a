// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/field.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "fieldfuse/error.hpp"
#include "fieldfuse/io.hpp"

namespace fieldfuse {
namespace {

constexpr char kFieldMagic[4] = {'O', 'V', 'F', 'F'};
constexpr std::uint32_t kFieldVersion = 1;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  auto bits = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.insert(out.end(), bits.begin(), bits.end());
}

template <typename T>
T take_le(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  if (bytes.size() - pos < sizeof(T)) throw Error(ErrorCode::TruncatedPayload, "field file ends early");
  std::array<std::uint8_t, sizeof(T)> bits;
  std::memcpy(bits.data(), bytes.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  pos += sizeof(T);
  return std::bit_cast<T>(bits);
}

std::int32_t lattice(double g) {
  const double f = std::floor(g);
  if (!(f >= std::numeric_limits<std::int32_t>::min() + 1.0 && f <= std::numeric_limits<std::int32_t>::max() - 1.0))
    throw Error(ErrorCode::InvalidArgument, "position outside the representable lattice");
  return static_cast<std::int32_t>(f);
}

}  // namespace

std::int64_t FieldLevel::find(const CellKey& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::size_t FieldLevel::insert(const CellKey& key, std::span<const float> init) {
  auto [it, inserted] = index_.try_emplace(key, static_cast<std::uint32_t>(keys_.size()));
  if (inserted) {
    keys_.push_back(key);
    values_.insert(values_.end(), init.begin(), init.end());
  }
  return it->second;
}

std::vector<std::size_t> FieldLevel::sorted_slots() const {
  std::vector<std::size_t> slots(keys_.size());
  std::iota(slots.begin(), slots.end(), 0);
  std::sort(slots.begin(), slots.end(), [&](std::size_t a, std::size_t b) { return keys_[a] < keys_[b]; });
  return slots;
}

Stencil make_stencil(const Eigen::Vector3d& p, double voxel_size) {
  Stencil s;
  std::array<double, 3> t{};
  std::array<std::int32_t, 3> base{};
  for (int a = 0; a < 3; ++a) {
    const double g = p[a] / voxel_size;
    base[a] = lattice(g);
    t[a] = g - static_cast<double>(base[a]);
  }
  s.base = {base[0], base[1], base[2]};
  for (int c = 0; c < 8; ++c) {
    const double wx = (c & 1) ? t[0] : 1.0 - t[0];
    const double wy = ((c >> 1) & 1) ? t[1] : 1.0 - t[1];
    const double wz = ((c >> 2) & 1) ? t[2] : 1.0 - t[2];
    s.weights[c] = wx * wy * wz;
  }
  return s;
}

DistilledField::DistilledField(std::size_t dim, std::span<const double> voxel_sizes, Bounds bounds)
    : dim_(dim), bounds_(bounds) {
  if (dim == 0) throw Error(ErrorCode::InvalidArgument, "field dim must be >= 1");
  if (voxel_sizes.empty()) throw Error(ErrorCode::InvalidArgument, "field needs at least one level");
  for (std::size_t l = 0; l < voxel_sizes.size(); ++l) {
    if (!(voxel_sizes[l] > 0.0) || !std::isfinite(voxel_sizes[l]))
      throw Error(ErrorCode::InvalidArgument, "voxel sizes must be positive");
    if (l > 0 && !(voxel_sizes[l] < voxel_sizes[l - 1]))
      throw Error(ErrorCode::InvalidArgument, "voxel sizes must strictly decrease (coarse to fine)");
    levels_.emplace_back(voxel_sizes[l], dim);
  }
}

std::size_t DistilledField::total_cells() const {
  std::size_t n = 0;
  for (const auto& l : levels_) n += l.cell_count();
  return n;
}

void DistilledField::eval(const Eigen::Vector3d& p, std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (const auto& level : levels_) {
    if (level.cell_count() == 0) continue;
    const Stencil s = make_stencil(p, level.voxel_size());
    for (int c = 0; c < 8; ++c) {
      const auto slot = level.find(s.corner(c));
      if (slot < 0 || s.weights[c] == 0.0) continue;
      const auto v = level.values(static_cast<std::size_t>(slot));
      for (std::size_t k = 0; k < dim_; ++k) out[k] += s.weights[c] * static_cast<double>(v[k]);
    }
  }
}

bool DistilledField::same_as(const DistilledField& other) const {
  if (dim_ != other.dim_ || levels_.size() != other.levels_.size()) return false;
  if (bounds_.min != other.bounds_.min || bounds_.max != other.bounds_.max) return false;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const auto& a = levels_[l];
    const auto& b = other.levels_[l];
    if (a.voxel_size() != b.voxel_size() || a.cell_count() != b.cell_count()) return false;
    for (std::size_t slot = 0; slot < a.cell_count(); ++slot) {
      const auto other_slot = b.find(a.key(slot));
      if (other_slot < 0) return false;
      const auto va = a.values(slot);
      const auto vb = b.values(static_cast<std::size_t>(other_slot));
      if (std::memcmp(va.data(), vb.data(), va.size_bytes()) != 0) return false;
    }
  }
  return true;
}

FeatureMatrix field_eval(const DistilledField& field, std::span<const Eigen::Vector3d> positions) {
  FeatureMatrix out(positions.size(), field.dim());
  const auto m = static_cast<std::int64_t>(positions.size());
#pragma omp parallel
  {
    std::vector<double> acc(field.dim());
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < m; ++i) {
      field.eval(positions[i], acc);
      auto row = out.row(static_cast<std::size_t>(i));
      for (std::size_t k = 0; k < acc.size(); ++k) row[k] = static_cast<float>(acc[k]);
    }
  }
  return out;
}

std::vector<std::uint8_t> encode_field(const DistilledField& field) {
  nlohmann::json header;
  header["dim"] = field.dim();
  header["bounds"] = {{"min", {field.bounds().min.x(), field.bounds().min.y(), field.bounds().min.z()}},
                      {"max", {field.bounds().max.x(), field.bounds().max.y(), field.bounds().max.z()}}};
  header["levels"] = nlohmann::json::array();
  for (std::size_t l = 0; l < field.level_count(); ++l)
    header["levels"].push_back({{"voxel_size", field.level(l).voxel_size()}, {"num_cells", field.level(l).cell_count()}});
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kFieldMagic), std::end(kFieldMagic));
  put_le<std::uint32_t>(out, kFieldVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (std::size_t l = 0; l < field.level_count(); ++l) {
    const auto& level = field.level(l);
    const auto slots = level.sorted_slots();
    for (auto s : slots) {
      put_le<std::int32_t>(out, level.key(s).x);
      put_le<std::int32_t>(out, level.key(s).y);
      put_le<std::int32_t>(out, level.key(s).z);
    }
    for (auto s : slots)
      for (float v : level.values(s)) put_le<float>(out, v);
  }
  return out;
}

DistilledField decode_field(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFieldMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "not a field file");
  std::size_t pos = 4;
  const auto version = take_le<std::uint32_t>(bytes, pos);
  if (version != kFieldVersion) throw Error(ErrorCode::UnsupportedVersion, "field version " + std::to_string(version));
  const auto header_len = take_le<std::uint64_t>(bytes, pos);
  if (header_len > bytes.size() - pos) throw Error(ErrorCode::TruncatedPayload, "field header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("field header: ") + e.what());
  }
  pos += header_len;

  std::size_t dim = 0;
  std::vector<double> sizes;
  std::vector<std::size_t> counts;
  Bounds bounds;
  try {
    dim = header.at("dim").get<std::size_t>();
    for (int a = 0; a < 3; ++a) {
      bounds.min[a] = header.at("bounds").at("min").at(a).get<double>();
      bounds.max[a] = header.at("bounds").at("max").at(a).get<double>();
    }
    for (const auto& l : header.at("levels")) {
      sizes.push_back(l.at("voxel_size").get<double>());
      counts.push_back(l.at("num_cells").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("field header: ") + e.what());
  }

  DistilledField field(dim, sizes, bounds);
  std::vector<float> values(dim);
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    const std::size_t n = counts[l];
    if (n > (bytes.size() - pos) / (12 + 4 * dim)) throw Error(ErrorCode::TruncatedPayload, "field cell table truncated");
    std::vector<CellKey> keys(n);
    for (auto& k : keys) {
      k.x = take_le<std::int32_t>(bytes, pos);
      k.y = take_le<std::int32_t>(bytes, pos);
      k.z = take_le<std::int32_t>(bytes, pos);
    }
    for (const auto& k : keys) {
      for (auto& v : values) {
        v = take_le<float>(bytes, pos);
        if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "field cell holds a non-finite value");
      }
      if (field.level(l).find(k) >= 0) throw Error(ErrorCode::ParseError, "duplicate field cell");
      field.level(l).insert(k, values);
    }
  }
  if (pos != bytes.size()) throw Error(ErrorCode::TruncatedPayload, "trailing bytes after field tables");
  return field;
}

void save_field(const std::filesystem::path& path, const DistilledField& field) {
  io::write_file(path, encode_field(field));
}

DistilledField load_field(const std::filesystem::path& path) { return decode_field(io::read_file(path)); }

}  // namespace fieldfuse
