// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fieldfuse/scene.hpp"
#include "fieldfuse/tensor.hpp"

namespace fieldfuse::io {

// ".feat" tensor container:
//   "OVFT" | u32 version=1 | u32 ndims | ndims x u64 dims | u32 dtype (0=f32) | payload
// All integers and the payload are little-endian, payload row-major.
inline constexpr char kFeatMagic[4] = {'O', 'V', 'F', 'T'};
inline constexpr std::uint32_t kFeatVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;

std::vector<std::uint8_t> encode_feat(const Tensor& tensor);
Tensor decode_feat(std::span<const std::uint8_t> bytes);
Tensor load_feat(const std::filesystem::path& path);
void save_feat(const std::filesystem::path& path, const Tensor& tensor);

// Convenience views for 2-D tensors.
FeatureMatrix load_matrix(const std::filesystem::path& path);
void save_matrix(const std::filesystem::path& path, const FeatureMatrix& matrix);
Tensor to_tensor(const FeatureMatrix& matrix);
FeatureMatrix to_matrix(const Tensor& tensor);

PointCloud load_ply(const std::filesystem::path& path);
PointCloud parse_ply(std::span<const std::uint8_t> bytes);
enum class PlyFormat { Ascii, BinaryLittleEndian };
void save_ply(const std::filesystem::path& path, const PointCloud& cloud,
              PlyFormat format = PlyFormat::BinaryLittleEndian);

Camera load_camera(const std::filesystem::path& path);
void save_camera(const std::filesystem::path& path, const Camera& camera);
std::string camera_to_json(const Camera& camera);
Camera camera_from_json(const std::string& text);

SceneManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const SceneManifest& manifest);

/// Embedding table: {"prompts": [...]} JSON beside an N x C ".feat". The
/// tensor path defaults to the JSON path with extension ".feat" unless the
/// JSON names it under "embeddings".
PromptSet load_prompt_table(const std::filesystem::path& json_path);
void save_prompt_table(const std::filesystem::path& json_path, const PromptSet& prompts);

/// One label per line; blank lines skipped, surrounding whitespace trimmed.
std::vector<std::string> load_lines(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace fieldfuse::io
