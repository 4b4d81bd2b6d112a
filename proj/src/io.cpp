// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "fieldfuse/error.hpp"

namespace fieldfuse::io {
namespace {

using nlohmann::json;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  auto bits = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.insert(out.end(), bits.begin(), bits.end());
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::array<std::uint8_t, sizeof(T)> bits;
  std::memcpy(bits.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  return std::bit_cast<T>(bits);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T read() {
    if (remaining() < sizeof(T)) throw Error(ErrorCode::TruncatedPayload, "header ends early");
    T v = get_le<T>(bytes_.data() + pos_);
    pos_ += sizeof(T);
    return v;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::uint8_t* cursor() const { return bytes_.data() + pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, what + ": " + e.what());
  }
}

template <int R, int C>
Eigen::Matrix<double, R, C> matrix_from_json(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) throw Error(ErrorCode::ParseError, std::string("missing array '") + key + "'");
  const auto& arr = j[key];
  Eigen::Matrix<double, R, C> m;
  // Accept flat row-major [R*C] or nested [[...], ...].
  if (arr.size() == static_cast<std::size_t>(R * C) && arr[0].is_number()) {
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) m(r, c) = arr[r * C + c].get<double>();
  } else if (arr.size() == static_cast<std::size_t>(R)) {
    for (int r = 0; r < R; ++r) {
      if (!arr[r].is_array() || arr[r].size() != static_cast<std::size_t>(C))
        throw Error(ErrorCode::ParseError, std::string("bad row in '") + key + "'");
      for (int c = 0; c < C; ++c) m(r, c) = arr[r][c].get<double>();
    }
  } else {
    throw Error(ErrorCode::ParseError, std::string("wrong size for '") + key + "'");
  }
  return m;
}

template <int R, int C>
json matrix_to_json(const Eigen::Matrix<double, R, C>& m) {
  json rows = json::array();
  for (int r = 0; r < R; ++r) {
    json row = json::array();
    for (int c = 0; c < C; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

// --- PLY ------------------------------------------------------------------

enum class PlyType { I8, U8, I16, U16, I32, U32, F32, F64 };

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::I8: case PlyType::U8: return 1;
    case PlyType::I16: case PlyType::U16: return 2;
    case PlyType::I32: case PlyType::U32: case PlyType::F32: return 4;
    case PlyType::F64: return 8;
  }
  return 0;
}

PlyType ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::I8;
  if (name == "uchar" || name == "uint8") return PlyType::U8;
  if (name == "short" || name == "int16") return PlyType::I16;
  if (name == "ushort" || name == "uint16") return PlyType::U16;
  if (name == "int" || name == "int32") return PlyType::I32;
  if (name == "uint" || name == "uint32") return PlyType::U32;
  if (name == "float" || name == "float32") return PlyType::F32;
  if (name == "double" || name == "float64") return PlyType::F64;
  throw Error(ErrorCode::ParseError, "unknown PLY type '" + name + "'");
}

double read_binary(PlyType t, const std::uint8_t* p) {
  switch (t) {
    case PlyType::I8: return static_cast<std::int8_t>(*p);
    case PlyType::U8: return *p;
    case PlyType::I16: return get_le<std::int16_t>(p);
    case PlyType::U16: return get_le<std::uint16_t>(p);
    case PlyType::I32: return get_le<std::int32_t>(p);
    case PlyType::U32: return get_le<std::uint32_t>(p);
    case PlyType::F32: return get_le<float>(p);
    case PlyType::F64: return get_le<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
  bool has_list = false;
};

std::int32_t to_label(double v, const std::string& what) {
  if (!std::isfinite(v) || v != std::floor(v) || v < std::numeric_limits<std::int32_t>::min() ||
      v > std::numeric_limits<std::int32_t>::max())
    throw Error(ErrorCode::InvalidCloud, what + " is not an integer");
  return static_cast<std::int32_t>(v);
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

// --- .feat ----------------------------------------------------------------

std::vector<std::uint8_t> encode_feat(const Tensor& tensor) {
  if (tensor.element_count() != tensor.data.size())
    throw Error(ErrorCode::ShapeMismatch, "tensor dims do not match payload size");
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * tensor.dims.size() + 4 * tensor.data.size());
  out.insert(out.end(), std::begin(kFeatMagic), std::end(kFeatMagic));
  put_le<std::uint32_t>(out, kFeatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_le<std::uint64_t>(out, d);
  put_le<std::uint32_t>(out, kDtypeFloat32);
  if constexpr (std::endian::native == std::endian::little) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(tensor.data.data());
    out.insert(out.end(), p, p + tensor.data.size() * sizeof(float));
  } else {
    for (float v : tensor.data) put_le<float>(out, v);
  }
  return out;
}

Tensor decode_feat(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kFeatMagic, 4) != 0)
    throw Error(ErrorCode::BadMagic, "not a .feat file");
  Reader r(bytes.subspan(4));
  const auto version = r.read<std::uint32_t>();
  if (version != kFeatVersion) throw Error(ErrorCode::UnsupportedVersion, "version " + std::to_string(version));
  const auto ndims = r.read<std::uint32_t>();
  if (static_cast<std::uint64_t>(ndims) * 8 > r.remaining())
    throw Error(ErrorCode::TruncatedPayload, "dims exceed file size");
  Tensor t;
  t.dims.resize(ndims);
  std::uint64_t count = 1;
  for (auto& d : t.dims) {
    d = r.read<std::uint64_t>();
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / 4 / d)
      throw Error(ErrorCode::TruncatedPayload, "dims overflow");
    count *= d;
  }
  const auto dtype = r.read<std::uint32_t>();
  if (dtype != kDtypeFloat32) throw Error(ErrorCode::UnsupportedDtype, "dtype " + std::to_string(dtype));
  if (r.remaining() != count * sizeof(float))
    throw Error(ErrorCode::TruncatedPayload, "payload has " + std::to_string(r.remaining()) + " bytes, dims need " +
                                                 std::to_string(count * sizeof(float)));
  t.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) t.data[i] = get_le<float>(r.cursor() + i * sizeof(float));
  return t;
}

Tensor load_feat(const std::filesystem::path& path) { return decode_feat(read_file(path)); }

void save_feat(const std::filesystem::path& path, const Tensor& tensor) { write_file(path, encode_feat(tensor)); }

Tensor to_tensor(const FeatureMatrix& matrix) {
  return Tensor{{matrix.rows(), matrix.cols()}, matrix.data()};
}

FeatureMatrix to_matrix(const Tensor& tensor) {
  if (tensor.dims.size() == 2) return FeatureMatrix(tensor.dims[0], tensor.dims[1], tensor.data);
  if (tensor.dims.size() == 1) return FeatureMatrix(tensor.dims[0], 1, tensor.data);
  if (tensor.dims.size() == 3)  // H x W x C image: one row per pixel
    return FeatureMatrix(tensor.dims[0] * tensor.dims[1], tensor.dims[2], tensor.data);
  throw Error(ErrorCode::ShapeMismatch, "expected a 1-, 2- or 3-d tensor, got " + std::to_string(tensor.dims.size()));
}

FeatureMatrix load_matrix(const std::filesystem::path& path) { return to_matrix(load_feat(path)); }

void save_matrix(const std::filesystem::path& path, const FeatureMatrix& matrix) { save_feat(path, to_tensor(matrix)); }

// --- PLY ------------------------------------------------------------------

PointCloud parse_ply(std::span<const std::uint8_t> bytes) {
  static constexpr std::string_view kEnd = "end_header";
  std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!text.starts_with("ply")) throw Error(ErrorCode::ParseError, "missing 'ply' magic");
  auto end = text.find(kEnd);
  if (end == std::string_view::npos) throw Error(ErrorCode::ParseError, "missing end_header");
  auto body_start = text.find('\n', end);
  if (body_start == std::string_view::npos) throw Error(ErrorCode::ParseError, "header not terminated");
  ++body_start;

  std::istringstream header{std::string(text.substr(0, end))};
  std::string line;
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw Error(ErrorCode::ParseError, "unsupported PLY format '" + fmt + "'");
      have_format = true;
    } else if (keyword == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      if (!ls) throw Error(ErrorCode::ParseError, "bad element line");
      elements.push_back(std::move(e));
    } else if (keyword == "property") {
      if (elements.empty()) throw Error(ErrorCode::ParseError, "property before element");
      std::string type;
      ls >> type;
      if (type == "list") {
        elements.back().has_list = true;
        continue;
      }
      PlyProperty p;
      p.type = ply_type(type);
      ls >> p.name;
      elements.back().properties.push_back(p);
    }
  }
  if (!have_format) throw Error(ErrorCode::ParseError, "missing format line");

  std::size_t offset = body_start;
  std::size_t skip_rows = 0;  // ascii rows of elements preceding the vertices
  const PlyElement* vertex = nullptr;
  for (const auto& e : elements) {
    if (e.name == "vertex") {
      vertex = &e;
      break;
    }
    if (e.has_list) throw Error(ErrorCode::ParseError, "list element before vertex is not supported");
    std::size_t row = 0;
    for (const auto& p : e.properties) row += ply_size(p.type);
    offset += row * e.count;
    skip_rows += e.count;
  }
  if (vertex == nullptr) throw Error(ErrorCode::ParseError, "no vertex element");
  if (vertex->has_list) throw Error(ErrorCode::ParseError, "list property on vertex is not supported");

  int ix = -1, iy = -1, iz = -1, iregion = -1, ilabel = -1;
  for (int i = 0; i < static_cast<int>(vertex->properties.size()); ++i) {
    const auto& n = vertex->properties[i].name;
    if (n == "x") ix = i;
    else if (n == "y") iy = i;
    else if (n == "z") iz = i;
    else if (n == "region_id") iregion = i;
    else if (n == "gt_label") ilabel = i;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorCode::ParseError, "vertex lacks x/y/z");

  PointCloud cloud;
  const std::size_t m = vertex->count;
  cloud.positions.resize(m);
  if (iregion >= 0) cloud.region_id.emplace(m);
  if (ilabel >= 0) cloud.gt_label.emplace(m);
  std::vector<double> values(vertex->properties.size());

  auto store = [&](std::size_t i) {
    cloud.positions[i] = {values[ix], values[iy], values[iz]};
    if (iregion >= 0) (*cloud.region_id)[i] = to_label(values[iregion], "region_id");
    if (ilabel >= 0) (*cloud.gt_label)[i] = to_label(values[ilabel], "gt_label");
  };

  if (binary) {
    std::size_t row = 0;
    for (const auto& p : vertex->properties) row += ply_size(p.type);
    if (bytes.size() < offset + row * m) throw Error(ErrorCode::TruncatedPayload, "PLY vertex data truncated");
    for (std::size_t i = 0; i < m; ++i) {
      const std::uint8_t* p = bytes.data() + offset + i * row;
      for (std::size_t k = 0; k < vertex->properties.size(); ++k) {
        values[k] = read_binary(vertex->properties[k].type, p);
        p += ply_size(vertex->properties[k].type);
      }
      store(i);
    }
  } else {
    std::istringstream body{std::string(text.substr(body_start))};
    for (std::size_t i = 0; i < skip_rows; ++i) std::getline(body, line);
    for (std::size_t i = 0; i < m; ++i) {
      for (auto& v : values) {
        std::string token;
        if (!(body >> token)) throw Error(ErrorCode::TruncatedPayload, "PLY vertex data truncated");
        try {
          std::size_t used = 0;
          v = std::stod(token, &used);
          if (used != token.size()) throw std::invalid_argument(token);
        } catch (const std::exception&) {
          throw Error(ErrorCode::ParseError, "bad PLY value '" + token + "'");
        }
      }
      store(i);
    }
  }
  validate(cloud);
  return cloud;
}

PointCloud load_ply(const std::filesystem::path& path) { return parse_ply(read_file(path)); }

void save_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyFormat format) {
  validate(cloud);
  std::ostringstream head;
  head << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
       << "element vertex " << cloud.size() << "\n"
       << "property double x\nproperty double y\nproperty double z\n";
  if (cloud.region_id) head << "property int region_id\n";
  if (cloud.gt_label) head << "property int gt_label\n";
  head << "end_header\n";
  std::string h = head.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  if (format == PlyFormat::BinaryLittleEndian) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (int k = 0; k < 3; ++k) put_le<double>(out, cloud.positions[i][k]);
      if (cloud.region_id) put_le<std::int32_t>(out, (*cloud.region_id)[i]);
      if (cloud.gt_label) put_le<std::int32_t>(out, (*cloud.gt_label)[i]);
    }
  } else {
    std::ostringstream body;
    body.precision(17);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      body << cloud.positions[i].x() << ' ' << cloud.positions[i].y() << ' ' << cloud.positions[i].z();
      if (cloud.region_id) body << ' ' << (*cloud.region_id)[i];
      if (cloud.gt_label) body << ' ' << (*cloud.gt_label)[i];
      body << '\n';
    }
    auto b = body.str();
    out.insert(out.end(), b.begin(), b.end());
  }
  write_file(path, out);
}

// --- JSON schemas -----------------------------------------------------------

std::string camera_to_json(const Camera& camera) {
  json j;
  j["intrinsics"] = matrix_to_json<3, 3>(camera.intrinsics);
  j["extrinsics"] = matrix_to_json<4, 4>(camera.extrinsics);
  j["width"] = camera.width;
  j["height"] = camera.height;
  return j.dump(2);
}

Camera camera_from_json(const std::string& text) {
  auto j = parse_json(text, "camera");
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "camera must be a JSON object");
  Camera c;
  try {
    c.intrinsics = matrix_from_json<3, 3>(j, "intrinsics");
    c.extrinsics = matrix_from_json<4, 4>(j, "extrinsics");
    if (!j.contains("width") || !j.contains("height") || !j["width"].is_number_integer() ||
        !j["height"].is_number_integer())
      throw Error(ErrorCode::ParseError, "camera needs integer width and height");
    c.width = j["width"].get<int>();
    c.height = j["height"].get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("camera: ") + e.what());
  }
  validate(c);
  return c;
}

Camera load_camera(const std::filesystem::path& path) { return camera_from_json(read_text(path)); }

void save_camera(const std::filesystem::path& path, const Camera& camera) { write_text(path, camera_to_json(camera)); }

SceneManifest load_manifest(const std::filesystem::path& path) {
  auto j = parse_json(read_text(path), "manifest");
  SceneManifest m;
  try {
    m.cloud_path = j.at("cloud").get<std::string>();
    const auto mode = j.value("dataset_mode", std::string("with-depth"));
    if (mode == "with-depth") m.dataset_mode = DatasetMode::WithDepth;
    else if (mode == "no-depth") m.dataset_mode = DatasetMode::NoDepth;
    else throw Error(ErrorCode::ParseError, "dataset_mode must be with-depth or no-depth");
    m.occlusion_sigma_ratio = j.value("occlusion_sigma_ratio", 0.2);
    for (const auto& img : j.at("images")) {
      ManifestImage mi;
      mi.feature_path = img.at("features").get<std::string>();
      mi.camera_path = img.at("camera").get<std::string>();
      if (img.contains("depth") && !img["depth"].is_null()) mi.depth_path = img["depth"].get<std::string>();
      m.images.push_back(std::move(mi));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
  validate(m);
  return m;
}

void save_manifest(const std::filesystem::path& path, const SceneManifest& manifest) {
  json j;
  j["cloud"] = manifest.cloud_path.generic_string();
  j["dataset_mode"] = manifest.dataset_mode == DatasetMode::WithDepth ? "with-depth" : "no-depth";
  j["occlusion_sigma_ratio"] = manifest.occlusion_sigma_ratio;
  j["images"] = json::array();
  for (const auto& img : manifest.images) {
    json e;
    e["features"] = img.feature_path.generic_string();
    e["camera"] = img.camera_path.generic_string();
    if (img.depth_path) e["depth"] = img.depth_path->generic_string();
    j["images"].push_back(e);
  }
  write_text(path, j.dump(2));
}

PromptSet load_prompt_table(const std::filesystem::path& json_path) {
  auto j = parse_json(read_text(json_path), "embedding table");
  PromptSet set;
  std::filesystem::path feat_path = json_path;
  feat_path.replace_extension(".feat");
  try {
    set.prompts = j.at("prompts").get<std::vector<std::string>>();
    if (j.contains("embeddings")) feat_path = json_path.parent_path() / j["embeddings"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("embedding table: ") + e.what());
  }
  auto t = load_feat(feat_path);
  if (t.dims.size() != 2) throw Error(ErrorCode::ShapeMismatch, "embedding table tensor must be N x C");
  set.embeddings = to_matrix(t);
  if (set.embeddings.rows() != set.prompts.size())
    throw Error(ErrorCode::ShapeMismatch, "table lists " + std::to_string(set.prompts.size()) + " prompts but has " +
                                              std::to_string(set.embeddings.rows()) + " rows");
  validate(set);
  return set;
}

void save_prompt_table(const std::filesystem::path& json_path, const PromptSet& prompts) {
  validate(prompts);
  std::filesystem::path feat_path = json_path;
  feat_path.replace_extension(".feat");
  json j;
  j["prompts"] = prompts.prompts;
  j["embeddings"] = feat_path.filename().string();
  write_text(json_path, j.dump(2));
  save_matrix(feat_path, prompts.embeddings);
}

std::vector<std::string> load_lines(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    lines.push_back(line.substr(first, last - first + 1));
  }
  return lines;
}

}  // namespace fieldfuse::io
