// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstring>
#include <random>

#include "fieldfuse/error.hpp"
#include "fieldfuse/io.hpp"
#include "synthetic.hpp"
#include "temp_dir.hpp"

using namespace fieldfuse;
using testkit::TempDir;

namespace {

std::vector<std::uint8_t> feat_bytes(std::vector<std::uint64_t> dims, std::vector<float> payload,
                                     std::uint32_t version = 1, std::uint32_t dtype = 0) {
  std::vector<std::uint8_t> b = {'O', 'V', 'F', 'T'};
  auto put = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    b.insert(b.end(), c, c + n);
  };
  const auto nd = static_cast<std::uint32_t>(dims.size());
  put(&version, 4);
  put(&nd, 4);
  for (auto d : dims) put(&d, 8);
  put(&dtype, 4);
  for (float f : payload) put(&f, 4);
  return b;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

Camera simple_camera(int w = 4, int h = 3) {
  return testkit::make_camera(100, 100, 1.5, 1, w, h, Eigen::Matrix4d::Identity());
}

}  // namespace

TEST_CASE("feat header decodes dims and row-major payload") {
  const auto t = io::decode_feat(feat_bytes({2, 3}, {1, 2, 3, 4, 5, 6}));
  CHECK(t.dims == std::vector<std::uint64_t>{2, 3});
  const auto m = io::to_matrix(t);
  CHECK(m(0, 0) == 1.0f);
  CHECK(m(0, 2) == 3.0f);
  CHECK(m(1, 0) == 4.0f);
  CHECK(m(1, 2) == 6.0f);
}

TEST_CASE("feat encode reproduces the input bytes") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint64_t> dims;
    std::size_t count = 1;
    const int nd = 1 + static_cast<int>(rng() % 3);
    for (int d = 0; d < nd; ++d) {
      dims.push_back(rng() % 5);
      count *= dims.back();
    }
    std::vector<float> payload(count);
    for (auto& f : payload) f = n(rng);
    const auto bytes = feat_bytes(dims, payload);
    CHECK(io::encode_feat(io::decode_feat(bytes)) == bytes);
  }
}

TEST_CASE("feat errors are typed") {
  auto short_payload = feat_bytes({2, 3}, {1, 2, 3, 4, 5});
  CHECK(code_of([&] { io::decode_feat(short_payload); }) == ErrorCode::TruncatedPayload);
  auto long_payload = feat_bytes({2, 3}, {1, 2, 3, 4, 5, 6, 7});
  CHECK(code_of([&] { io::decode_feat(long_payload); }) == ErrorCode::TruncatedPayload);
  auto bad_magic = feat_bytes({1}, {1});
  bad_magic[0] = 'X';
  CHECK(code_of([&] { io::decode_feat(bad_magic); }) == ErrorCode::BadMagic);
  CHECK(code_of([&] { io::decode_feat(feat_bytes({1}, {1}, 2)); }) == ErrorCode::UnsupportedVersion);
  CHECK(code_of([&] { io::decode_feat(feat_bytes({1}, {1}, 1, 7)); }) == ErrorCode::UnsupportedDtype);
  auto cut_header = feat_bytes({2, 3}, {});
  cut_header.resize(14);
  CHECK(code_of([&] { io::decode_feat(cut_header); }) == ErrorCode::TruncatedPayload);
}

TEST_CASE("feat file round trip on disk") {
  TempDir dir;
  Tensor t{{2, 2, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  io::save_feat(dir / "a.feat", t);
  CHECK(io::load_feat(dir / "a.feat") == t);
  CHECK(code_of([&] { io::load_feat(dir / "missing.feat"); }) == ErrorCode::IoError);
}

TEST_CASE("PLY ascii and binary parse to the same cloud") {
  TempDir dir;
  PointCloud cloud;
  cloud.positions = {{0.1, 0.2, 0.3}, {-1.5, 2.25, 1e-3}, {7, 8, 9}};
  cloud.region_id = std::vector<std::int32_t>{0, 1, 1};
  cloud.gt_label = std::vector<std::int32_t>{-1, 4, 2};
  io::save_ply(dir / "b.ply", cloud, io::PlyFormat::BinaryLittleEndian);
  io::save_ply(dir / "a.ply", cloud, io::PlyFormat::Ascii);
  CHECK(io::load_ply(dir / "b.ply") == cloud);
  CHECK(io::load_ply(dir / "a.ply") == cloud);
}

TEST_CASE("PLY with float properties, extra properties and faces") {
  const std::string text =
      "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\n"
      "property float z\nproperty uchar red\nproperty int gt_label\nelement face 1\n"
      "property list uchar int vertex_indices\nend_header\n0 0 1 255 3\n1 2 3 0 -1\n3 0 1 1\n";
  const auto cloud = io::parse_ply(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  REQUIRE(cloud.size() == 2);
  CHECK(cloud.positions[1] == Eigen::Vector3d(1, 2, 3));
  CHECK(!cloud.region_id);
  CHECK(*cloud.gt_label == std::vector<std::int32_t>{3, -1});
}

TEST_CASE("PLY rejects non-finite and truncated data") {
  const std::string nan_text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                               "property float z\nend_header\nnan 0 0\n";
  CHECK(code_of([&] {
          io::parse_ply(std::span(reinterpret_cast<const std::uint8_t*>(nan_text.data()), nan_text.size()));
        }) == ErrorCode::InvalidCloud);
  const std::string short_text = "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\n"
                                 "property float y\nproperty float z\nend_header\n0123";
  CHECK(code_of([&] {
          io::parse_ply(std::span(reinterpret_cast<const std::uint8_t*>(short_text.data()), short_text.size()));
        }) == ErrorCode::TruncatedPayload);
}

TEST_CASE("camera and manifest JSON round trip") {
  TempDir dir;
  std::mt19937_64 rng(5);
  Camera cam = simple_camera(32, 24);
  cam.extrinsics = testkit::random_rigid(rng);
  io::save_camera(dir / "cam.json", cam);
  const Camera back = io::load_camera(dir / "cam.json");
  CHECK(back.width == 32);
  CHECK(back.height == 24);
  CHECK((back.intrinsics - cam.intrinsics).norm() == 0.0);
  CHECK((back.extrinsics - cam.extrinsics).norm() == 0.0);

  SceneManifest m;
  m.cloud_path = "cloud.ply";
  m.images = {{"f0.feat", "c0.json", "d0.feat"}, {"f1.feat", "c1.json", "d1.feat"}};
  m.occlusion_sigma_ratio = 0.02;
  io::save_manifest(dir / "m.json", m);
  CHECK(io::load_manifest(dir / "m.json") == m);
}

TEST_CASE("camera validation") {
  Camera c = simple_camera();
  c.intrinsics(0, 0) = 0.0;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::InvalidCamera);
  c = simple_camera();
  c.extrinsics(0, 0) = 1.01;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::InvalidCamera);
  c = simple_camera();
  c.intrinsics(0, 1) = 0.5;
  CHECK(code_of([&] { validate(c); }) == ErrorCode::InvalidCamera);
}

namespace {

// Writes a small scene to disk: cloud of `points`, one image per entry of `dims`.
SceneManifest write_scene(const TempDir& dir, std::size_t points, const std::vector<std::size_t>& dims,
                          bool with_depth = true) {
  PointCloud cloud;
  for (std::size_t i = 0; i < points; ++i) cloud.positions.emplace_back(0.01 * i, 0.0, 2.0);
  io::save_ply(dir / "cloud.ply", cloud);
  SceneManifest m;
  m.cloud_path = "cloud.ply";
  for (std::size_t k = 0; k < dims.size(); ++k) {
    const auto cam = simple_camera();
    const std::string n = std::to_string(k);
    io::save_camera(dir / ("cam" + n + ".json"), cam);
    io::save_feat(dir / ("feat" + n + ".feat"),
                  Tensor{{3, 4, dims[k]}, std::vector<float>(12 * dims[k], 0.5f)});
    ManifestImage img{"feat" + n + ".feat", "cam" + n + ".json", std::nullopt};
    if (with_depth) {
      io::save_feat(dir / ("depth" + n + ".feat"), Tensor{{3, 4}, std::vector<float>(12, 2.0f)});
      img.depth_path = "depth" + n + ".feat";
    }
    m.images.push_back(img);
  }
  m.dataset_mode = with_depth ? DatasetMode::WithDepth : DatasetMode::NoDepth;
  io::save_manifest(dir / "scene.json", m);
  return m;
}

}  // namespace

TEST_CASE("load_scene builds a validated scene") {
  TempDir dir;
  const auto m = write_scene(dir, 100, {8, 8});
  const auto scene = load_scene(io::load_manifest(dir / "scene.json"), dir.path());
  CHECK(scene.cloud.size() == 100);
  CHECK(scene.feature_dim() == 8);
  CHECK(scene.images.size() == 2);
  CHECK(scene.images[0].depth.has_value());
}

TEST_CASE("load_scene errors") {
  TempDir dir;
  write_scene(dir, 10, {8, 16});
  CHECK(code_of([&] { load_scene(io::load_manifest(dir / "scene.json"), dir.path()); }) ==
        ErrorCode::InconsistentFeatureDim);

  auto m = write_scene(dir, 10, {8, 8});
  m.images[1].depth_path.reset();
  CHECK(code_of([&] { load_scene(m, dir.path()); }) == ErrorCode::MissingDepth);

  m = write_scene(dir, 10, {8});
  auto bad = simple_camera();
  bad.intrinsics(1, 1) = -3;
  io::write_file(dir / "cam0.json", std::span(reinterpret_cast<const std::uint8_t*>(io::camera_to_json(bad).data()),
                                              io::camera_to_json(bad).size()));
  CHECK(code_of([&] { load_scene(m, dir.path()); }) == ErrorCode::InvalidCamera);
}

TEST_CASE("corrupted scene files never load silently") {
  TempDir dir;
  const auto m = write_scene(dir, 20, {4, 4});
  const std::vector<std::string> files = {"cloud.ply", "cam0.json", "feat0.feat", "depth1.feat", "scene.json"};
  std::mt19937_64 rng(11);
  for (const auto& name : files) {
    const auto original = io::read_file(dir / name);
    for (int trial = 0; trial < 40; ++trial) {
      auto bytes = original;
      switch (trial % 3) {
        case 0: bytes.resize(rng() % bytes.size()); break;  // truncate
        case 1:
          for (int f = 0; f < 3; ++f) bytes[rng() % bytes.size()] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
          break;
        case 2: bytes.insert(bytes.begin() + static_cast<long>(rng() % bytes.size()), 0xFF); break;
      }
      io::write_file(dir / name, bytes);
      try {
        const auto manifest = io::load_manifest(dir / "scene.json");
        const auto scene = load_scene(manifest, dir.path());
        // Whatever loaded must satisfy every invariant.
        validate(scene.cloud);
        for (const auto& img : scene.images) validate(img);
        for (const auto& img : scene.images) CHECK(img.feature_dim() == scene.feature_dim());
      } catch (const Error&) {
        // typed failure is the expected outcome
      }
    }
    io::write_file(dir / name, original);
  }
}
