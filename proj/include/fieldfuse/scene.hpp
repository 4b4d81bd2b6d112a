// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fieldfuse/tensor.hpp"

namespace fieldfuse {

struct PointCloud {
  std::vector<Eigen::Vector3d> positions;
  std::optional<std::vector<std::int32_t>> region_id;
  std::optional<std::vector<std::int32_t>> gt_label;  // -1 = unlabeled

  std::size_t size() const noexcept { return positions.size(); }
  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

/// Pinhole camera. Extrinsics map world to camera coordinates.
struct Camera {
  Eigen::Matrix3d intrinsics = Eigen::Matrix3d::Identity();
  Eigen::Matrix4d extrinsics = Eigen::Matrix4d::Identity();
  int width = 0;
  int height = 0;

  double fx() const { return intrinsics(0, 0); }
  double fy() const { return intrinsics(1, 1); }
  double cx() const { return intrinsics(0, 2); }
  double cy() const { return intrinsics(1, 2); }

  friend bool operator==(const Camera&, const Camera&) = default;
};

/// Per-pixel embedding image. Row (v * width + u) of `features` is the pixel
/// at column u, row v.
struct FeatureImage {
  FeatureMatrix features;
  Camera camera;
  std::optional<std::vector<float>> depth;  // H*W, 0 or NaN = invalid

  std::size_t feature_dim() const noexcept { return features.cols(); }
  std::size_t pixel_index(int u, int v) const noexcept {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(camera.width) + static_cast<std::size_t>(u);
  }
};

struct PromptSet {
  std::vector<std::string> prompts;
  FeatureMatrix embeddings;  // N x C, row n <-> prompts[n]

  std::size_t size() const noexcept { return prompts.size(); }
  std::size_t dim() const noexcept { return embeddings.cols(); }
};

enum class DatasetMode { WithDepth, NoDepth };

struct ManifestImage {
  std::filesystem::path feature_path;
  std::filesystem::path camera_path;
  std::optional<std::filesystem::path> depth_path;

  friend bool operator==(const ManifestImage&, const ManifestImage&) = default;
};

struct SceneManifest {
  std::filesystem::path cloud_path;
  std::vector<ManifestImage> images;
  DatasetMode dataset_mode = DatasetMode::WithDepth;
  double occlusion_sigma_ratio = 0.2;

  friend bool operator==(const SceneManifest&, const SceneManifest&) = default;
};

struct Scene {
  PointCloud cloud;
  std::vector<FeatureImage> images;

  std::size_t feature_dim() const noexcept { return images.empty() ? 0 : images.front().feature_dim(); }
};

// Invariant checks. Each throws a typed Error on violation.
void validate(const PointCloud& cloud);
void validate(const Camera& camera);
void validate(const FeatureImage& image);
void validate(const PromptSet& prompts);
void validate(const SceneManifest& manifest);

/// Reads every file referenced by the manifest (relative paths resolve against
/// `base_dir`) and checks all invariants, including a consistent feature dim.
Scene load_scene(const SceneManifest& manifest, const std::filesystem::path& base_dir = {});

}  // namespace fieldfuse
