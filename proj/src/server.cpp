// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/server.hpp"

#include <httplib.h>
#include <json.hpp>

#include <bit>
#include <cstring>
#include <regex>
#include <unordered_set>

#include "fieldfuse/error.hpp"
#include "fieldfuse/query.hpp"

namespace fieldfuse {
namespace {

using nlohmann::json;

HttpResponse error_response(int status, const std::string& message) {
  return {status, "application/json", json{{"error", message}}.dump()};
}

HttpResponse from_error(const Error& e) {
  switch (e.code()) {
    case ErrorCode::ZeroQuery: return error_response(422, e.what());
    default: return error_response(400, e.what());
  }
}

template <typename T>
void append_le(std::string& out, T value) {
  auto bits = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.append(bits.data(), bits.size());
}

std::size_t parse_stride(const std::map<std::string, std::string>& params, const json* body) {
  long long stride = 1;
  if (auto it = params.find("stride"); it != params.end()) {
    std::size_t used = 0;
    try {
      stride = std::stoll(it->second, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != it->second.size()) throw Error(ErrorCode::InvalidArgument, "stride must be an integer");
  } else if (body && body->contains("stride")) {
    if (!(*body)["stride"].is_number_integer()) throw Error(ErrorCode::InvalidArgument, "stride must be an integer");
    stride = (*body)["stride"].get<long long>();
  }
  if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
  return static_cast<std::size_t>(stride);
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed JSON body: ") + e.what());
  }
}

}  // namespace

std::string base64_encode(const std::string& bytes) { return httplib::detail::base64_encode(bytes); }

void validate(const SceneIndex& scene) {
  if (scene.id.empty()) throw Error(ErrorCode::InvalidArgument, "scene id is empty");
  validate(scene.cloud);
  if (scene.features.rows() != scene.cloud.size())
    throw Error(ErrorCode::ShapeMismatch, "scene '" + scene.id + "': features are not row-aligned with the cloud");
  if (scene.features.cols() != scene.embedder.dim())
    throw Error(ErrorCode::DimMismatch, "scene '" + scene.id + "': feature dim differs from the embedder dim");
}

QueryService::QueryService(std::vector<SceneIndex> scenes) : scenes_(std::move(scenes)) {
  if (scenes_.empty()) throw Error(ErrorCode::InvalidArgument, "service needs at least one scene");
  std::unordered_set<std::string> ids;
  for (const auto& s : scenes_) {
    validate(s);
    if (!ids.insert(s.id).second) throw Error(ErrorCode::InvalidArgument, "duplicate scene id '" + s.id + "'");
  }
}

const SceneIndex* QueryService::find(const std::string& id) const {
  for (const auto& s : scenes_)
    if (s.id == id) return &s;
  return nullptr;
}

HttpResponse QueryService::handle(const std::string& method, const std::string& path,
                                  const std::map<std::string, std::string>& params, const std::string& body) const {
  static const std::regex kScenePath(R"(^/v1/scenes/([^/]+)/(cloud|query|segment)$)");
  if (path == "/v1/scenes") {
    if (method != "GET") return error_response(405, "method not allowed");
    return list_scenes();
  }
  std::smatch match;
  if (!std::regex_match(path, match, kScenePath)) return error_response(404, "no such endpoint");
  const SceneIndex* scene = find(match[1].str());
  if (!scene) return error_response(404, "unknown scene '" + match[1].str() + "'");
  const std::string action = match[2].str();
  try {
    if (action == "cloud") {
      if (method != "GET") return error_response(405, "method not allowed");
      return cloud(*scene, params);
    }
    if (method != "POST") return error_response(405, "method not allowed");
    if (action == "query") return query(*scene, params, body);
    return segment(*scene, body);
  } catch (const Error& e) {
    return from_error(e);
  }
}

HttpResponse QueryService::list_scenes() const {
  json out = json::array();
  for (const auto& s : scenes_)
    out.push_back({{"id", s.id}, {"num_points", s.cloud.size()}, {"feature_dim", s.features.cols()}});
  return {200, "application/json", out.dump()};
}

HttpResponse QueryService::cloud(const SceneIndex& scene, const std::map<std::string, std::string>& params) const {
  const std::size_t stride = parse_stride(params, nullptr);
  std::string bytes;
  std::size_t count = 0;
  for (std::size_t i = 0; i < scene.cloud.size(); i += stride, ++count)
    for (int a = 0; a < 3; ++a) append_le<float>(bytes, static_cast<float>(scene.cloud.positions[i][a]));
  json out{{"num_points", count}, {"stride", stride}, {"positions_f32", base64_encode(bytes)}};
  return {200, "application/json", out.dump()};
}

HttpResponse QueryService::query(const SceneIndex& scene, const std::map<std::string, std::string>& params,
                                 const std::string& body) const {
  const json request = parse_body(body);
  const std::size_t stride = parse_stride(params, &request);
  const bool has_text = request.contains("text");
  const bool has_embedding = request.contains("embedding");
  if (has_text == has_embedding) throw Error(ErrorCode::InvalidArgument, "body needs exactly one of 'text' or 'embedding'");

  std::vector<float> embedding;
  if (has_text) {
    if (!request["text"].is_string() || request["text"].get<std::string>().empty())
      throw Error(ErrorCode::InvalidArgument, "'text' must be a non-empty string");
    const std::vector<std::string> texts{request["text"].get<std::string>()};
    const auto set = scene.embedder.embed(texts);
    const auto row = set.embeddings.row(0);
    embedding.assign(row.begin(), row.end());
  } else {
    if (!request["embedding"].is_array()) throw Error(ErrorCode::InvalidArgument, "'embedding' must be an array");
    for (const auto& v : request["embedding"]) {
      if (!v.is_number()) throw Error(ErrorCode::InvalidArgument, "'embedding' must hold numbers");
      embedding.push_back(v.get<float>());
    }
  }

  const auto scores = heatmap(scene.features, embedding);
  std::string bytes;
  for (std::size_t i = 0; i < scores.size(); i += stride) bytes.push_back(static_cast<char>(quantize_score(scores[i])));
  json out{{"scores_u8", base64_encode(bytes)}, {"min", -1}, {"max", 1}, {"stride", stride}};
  return {200, "application/json", out.dump()};
}

HttpResponse QueryService::segment(const SceneIndex& scene, const std::string& body) const {
  const json request = parse_body(body);
  if (!request.contains("labels") || !request["labels"].is_array() || request["labels"].empty())
    throw Error(ErrorCode::InvalidArgument, "'labels' must be a non-empty array of strings");
  std::vector<std::string> labels;
  for (const auto& l : request["labels"]) {
    if (!l.is_string()) throw Error(ErrorCode::InvalidArgument, "'labels' must hold strings");
    labels.push_back(l.get<std::string>());
  }
  if (labels.size() >= 0xFFFF) throw Error(ErrorCode::InvalidArgument, "too many labels for u16 output");
  bool engineer = false;
  if (request.contains("engineer_prompts")) {
    if (!request["engineer_prompts"].is_boolean())
      throw Error(ErrorCode::InvalidArgument, "'engineer_prompts' must be a boolean");
    engineer = request["engineer_prompts"].get<bool>();
  }
  const auto prompts = scene.embedder.embed_labels(labels, engineer);
  const auto seg = fieldfuse::segment(scene.features, prompts);
  std::string bytes;
  bytes.reserve(seg.labels.size() * 2);
  for (auto l : seg.labels) append_le<std::uint16_t>(bytes, l < 0 ? std::uint16_t{0xFFFF} : static_cast<std::uint16_t>(l));
  json out{{"labels_u16", base64_encode(bytes)}, {"legend", labels}};
  return {200, "application/json", out.dump()};
}

void QueryService::mount(httplib::Server& server) const {
  auto route = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> params;
    for (const auto& [k, v] : req.params) params.emplace(k, v);
    const auto out = handle(req.method, req.path, params, req.body);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  server.Get(R"(/.*)", route);
  server.Post(R"(/.*)", route);
}

void QueryService::listen(const std::string& host, int port) const {
  httplib::Server server;
  mount(server);
  if (!server.listen(host, port)) throw Error(ErrorCode::IoError, "cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace fieldfuse
