// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/scene.hpp"

#include <cmath>
#include <string>

#include "fieldfuse/error.hpp"
#include "fieldfuse/io.hpp"

namespace fieldfuse {
namespace {

constexpr double kOrthonormalTolerance = 1e-6;

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

void validate(const PointCloud& cloud) {
  if (cloud.positions.empty()) throw Error(ErrorCode::InvalidCloud, "point cloud is empty");
  for (std::size_t i = 0; i < cloud.positions.size(); ++i)
    if (!cloud.positions[i].allFinite())
      throw Error(ErrorCode::InvalidCloud, "non-finite coordinate at point " + std::to_string(i));
  if (cloud.region_id && cloud.region_id->size() != cloud.size())
    throw Error(ErrorCode::InvalidCloud, "region_id length differs from point count");
  if (cloud.gt_label && cloud.gt_label->size() != cloud.size())
    throw Error(ErrorCode::InvalidCloud, "gt_label length differs from point count");
}

void validate(const Camera& camera) {
  const auto& k = camera.intrinsics;
  const auto& e = camera.extrinsics;
  if (!k.allFinite() || !e.allFinite()) throw Error(ErrorCode::InvalidCamera, "non-finite camera matrix");
  if (!(k(0, 0) > 0.0) || !(k(1, 1) > 0.0)) throw Error(ErrorCode::InvalidCamera, "fx and fy must be positive");
  if (k(0, 1) != 0.0 || k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0 || k(2, 2) != 1.0)
    throw Error(ErrorCode::InvalidCamera, "intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]");
  if (e(3, 0) != 0.0 || e(3, 1) != 0.0 || e(3, 2) != 0.0 || e(3, 3) != 1.0)
    throw Error(ErrorCode::InvalidCamera, "extrinsics bottom row must be (0,0,0,1)");
  const Eigen::Matrix3d r = e.topLeftCorner<3, 3>();
  if (((r * r.transpose()) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > kOrthonormalTolerance)
    throw Error(ErrorCode::InvalidCamera, "extrinsic rotation is not orthonormal");
  if (camera.width <= 0 || camera.height <= 0) throw Error(ErrorCode::InvalidCamera, "image size must be positive");
}

void validate(const FeatureImage& image) {
  validate(image.camera);
  const auto pixels = static_cast<std::size_t>(image.camera.width) * static_cast<std::size_t>(image.camera.height);
  if (image.features.rows() != pixels)
    throw Error(ErrorCode::ShapeMismatch, "feature map size does not match camera width x height");
  if (image.features.cols() < 1) throw Error(ErrorCode::ShapeMismatch, "feature dim must be >= 1");
  for (float f : image.features.data())
    if (!std::isfinite(f)) throw Error(ErrorCode::InvalidArgument, "feature map contains non-finite values");
  if (image.depth) {
    if (image.depth->size() != pixels) throw Error(ErrorCode::ShapeMismatch, "depth map size does not match camera");
    for (float d : *image.depth)
      if (!std::isnan(d) && (!std::isfinite(d) || d < 0.0f))
        throw Error(ErrorCode::InvalidDepth, "depth values must be finite and non-negative (or 0/NaN for invalid)");
  }
}

void validate(const PromptSet& prompts) {
  if (prompts.prompts.empty()) throw Error(ErrorCode::InvalidArgument, "prompt set is empty");
  if (prompts.embeddings.rows() != prompts.prompts.size())
    throw Error(ErrorCode::ShapeMismatch, "prompt and embedding counts differ");
  for (std::size_t n = 0; n < prompts.size(); ++n) {
    if (prompts.prompts[n].empty()) throw Error(ErrorCode::EmptyLabel, "prompt " + std::to_string(n) + " is empty");
    bool nonzero = false;
    for (float v : prompts.embeddings.row(n)) nonzero |= (v != 0.0f);
    if (!nonzero) throw Error(ErrorCode::ZeroQuery, "embedding for '" + prompts.prompts[n] + "' is all zero");
  }
}

void validate(const SceneManifest& manifest) {
  if (!(manifest.occlusion_sigma_ratio >= 0.0))
    throw Error(ErrorCode::InvalidArgument, "occlusion_sigma_ratio must be non-negative");
  if (manifest.dataset_mode == DatasetMode::WithDepth)
    for (std::size_t i = 0; i < manifest.images.size(); ++i)
      if (!manifest.images[i].depth_path)
        throw Error(ErrorCode::MissingDepth, "image " + std::to_string(i) + " has no depth in with-depth mode");
}

Scene load_scene(const SceneManifest& manifest, const std::filesystem::path& base_dir) {
  validate(manifest);
  Scene scene;
  scene.cloud = io::load_ply(resolve(base_dir, manifest.cloud_path));
  scene.images.reserve(manifest.images.size());
  for (std::size_t i = 0; i < manifest.images.size(); ++i) {
    const auto& entry = manifest.images[i];
    FeatureImage image;
    image.camera = io::load_camera(resolve(base_dir, entry.camera_path));
    auto features = io::load_feat(resolve(base_dir, entry.feature_path));
    if (features.dims.size() != 3 || features.dims[0] != static_cast<std::uint64_t>(image.camera.height) ||
        features.dims[1] != static_cast<std::uint64_t>(image.camera.width))
      throw Error(ErrorCode::ShapeMismatch, "image " + std::to_string(i) + ": features must be [H, W, C] matching camera");
    image.features = io::to_matrix(features);
    if (entry.depth_path) {
      auto depth = io::load_feat(resolve(base_dir, *entry.depth_path));
      if (depth.element_count() != image.features.rows() || depth.dims.empty() ||
          depth.dims[0] != static_cast<std::uint64_t>(image.camera.height))
        throw Error(ErrorCode::ShapeMismatch, "image " + std::to_string(i) + ": depth must be [H, W]");
      image.depth = std::move(depth.data);
    }
    validate(image);
    if (!scene.images.empty() && image.feature_dim() != scene.feature_dim())
      throw Error(ErrorCode::InconsistentFeatureDim, "image " + std::to_string(i) + " has C=" +
                                                         std::to_string(image.feature_dim()) + ", expected " +
                                                         std::to_string(scene.feature_dim()));
    scene.images.push_back(std::move(image));
  }
  return scene;
}

}  // namespace fieldfuse
