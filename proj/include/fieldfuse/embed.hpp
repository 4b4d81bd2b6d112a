// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fieldfuse/scene.hpp"

namespace fieldfuse {

/// "a {label} in a scene", except "other" which passes through unchanged.
std::string engineer_prompt(const std::string& label);

/// Text embedder backing prompt sets. Two kinds: a file-backed table with
/// exact-match lookup, and a seeded hash embedder needing no model at all.
class Embedder {
 public:
  /// Parses "toy:<dim>:<seed>" or "table:<path.json>".
  static Embedder parse(const std::string& spec);
  static Embedder toy(std::size_t dim, std::uint64_t seed);
  static Embedder table(const std::filesystem::path& json_path);
  static Embedder table(PromptSet table);

  std::size_t dim() const noexcept { return dim_; }
  bool is_toy() const noexcept { return !table_; }
  std::string describe() const;

  /// Embeddings for `texts` in order. Table misses raise UnknownPrompt
  /// listing every missing string.
  PromptSet embed(std::span<const std::string> texts) const;

  /// embed() after optionally applying engineer_prompt; the returned prompt
  /// strings are the caller's labels, not the templated text.
  PromptSet embed_labels(std::span<const std::string> labels, bool engineer) const;

 private:
  Embedder() = default;

  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  std::shared_ptr<const PromptSet> table_;
  std::filesystem::path table_path_;
};

/// Unit-norm pseudo-random embedding of the UTF-8 bytes of `text`.
std::vector<float> toy_embedding(const std::string& text, std::size_t dim, std::uint64_t seed);

}  // namespace fieldfuse
