// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "fieldfuse/embed.hpp"
#include "fieldfuse/scene.hpp"
#include "fieldfuse/tensor.hpp"

namespace httplib {
class Server;
}

namespace fieldfuse {

/// One queryable scene. Immutable once the service starts.
struct SceneIndex {
  std::string id;
  PointCloud cloud;
  FeatureMatrix features;  // row-aligned with cloud
  Embedder embedder;
};

void validate(const SceneIndex& scene);

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// HTTP/JSON query API over loaded scenes:
///   GET  /v1/scenes
///   GET  /v1/scenes/{id}/cloud?stride=k
///   POST /v1/scenes/{id}/query    {"text": s} | {"embedding": [...]}, optional "stride"
///   POST /v1/scenes/{id}/segment  {"labels": [...], "engineer_prompts": bool}
/// Responses depend only on the loaded scenes and the request.
class QueryService {
 public:
  explicit QueryService(std::vector<SceneIndex> scenes);

  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::map<std::string, std::string>& params, const std::string& body) const;

  /// Routes every request on `server` through handle().
  void mount(httplib::Server& server) const;

  /// Blocks serving requests until the process is stopped.
  void listen(const std::string& host, int port) const;

  const std::vector<SceneIndex>& scenes() const noexcept { return scenes_; }

 private:
  const SceneIndex* find(const std::string& id) const;
  HttpResponse list_scenes() const;
  HttpResponse cloud(const SceneIndex& scene, const std::map<std::string, std::string>& params) const;
  HttpResponse query(const SceneIndex& scene, const std::map<std::string, std::string>& params,
                     const std::string& body) const;
  HttpResponse segment(const SceneIndex& scene, const std::string& body) const;

  std::vector<SceneIndex> scenes_;
};

std::string base64_encode(const std::string& bytes);

}  // namespace fieldfuse
