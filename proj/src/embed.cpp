// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/embed.hpp"

#include <cmath>
#include <unordered_map>

#include "fieldfuse/error.hpp"
#include "fieldfuse/io.hpp"
#include "fieldfuse/rng.hpp"

namespace fieldfuse {
namespace {

constexpr std::size_t kMinToyDim = 8;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string engineer_prompt(const std::string& label) {
  if (label.empty()) throw Error(ErrorCode::EmptyLabel, "label is empty");
  if (label == "other") return label;
  return "a " + label + " in a scene";
}

std::vector<float> toy_embedding(const std::string& text, std::size_t dim, std::uint64_t seed) {
  SplitMix64 rng(mix64(fnv1a(text)) ^ mix64(seed ^ 0x6a09e667f3bcc908ULL));
  std::vector<double> v(dim);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& x : v) {
      x = 2.0 * rng.uniform() - 1.0;
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double norm = std::sqrt(norm2);
  std::vector<float> out(dim);
  for (std::size_t k = 0; k < dim; ++k) out[k] = static_cast<float>(v[k] / norm);
  return out;
}

Embedder Embedder::toy(std::size_t dim, std::uint64_t seed) {
  if (dim < kMinToyDim) throw Error(ErrorCode::InvalidArgument, "toy embedder dim must be >= 8");
  Embedder e;
  e.dim_ = dim;
  e.seed_ = seed;
  return e;
}

Embedder Embedder::table(PromptSet table) {
  validate(table);
  Embedder e;
  e.dim_ = table.dim();
  e.table_ = std::make_shared<const PromptSet>(std::move(table));
  return e;
}

Embedder Embedder::table(const std::filesystem::path& json_path) {
  Embedder e = table(io::load_prompt_table(json_path));
  e.table_path_ = json_path;
  return e;
}

Embedder Embedder::parse(const std::string& spec) {
  if (spec.starts_with("table:")) return table(std::filesystem::path(spec.substr(6)));
  if (spec.starts_with("toy:")) {
    const auto rest = spec.substr(4);
    const auto colon = rest.find(':');
    try {
      std::size_t used = 0;
      const auto dim_text = rest.substr(0, colon);
      const auto dim = std::stoull(dim_text, &used);
      if (used != dim_text.size()) throw std::invalid_argument(dim_text);
      std::uint64_t seed = 0;
      if (colon != std::string::npos) {
        const auto seed_text = rest.substr(colon + 1);
        seed = std::stoull(seed_text, &used);
        if (used != seed_text.size()) throw std::invalid_argument(seed_text);
      }
      return toy(dim, seed);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::InvalidArgument, "bad toy embedder spec '" + spec + "' (expected toy:<dim>:<seed>)");
    }
  }
  throw Error(ErrorCode::InvalidArgument, "embedder must be toy:<dim>:<seed> or table:<path.json>, got '" + spec + "'");
}

std::string Embedder::describe() const {
  if (is_toy()) return "toy:" + std::to_string(dim_) + ":" + std::to_string(seed_);
  return "table:" + table_path_.string();
}

PromptSet Embedder::embed(std::span<const std::string> texts) const {
  if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "no texts to embed");
  PromptSet out;
  out.prompts.assign(texts.begin(), texts.end());
  out.embeddings = FeatureMatrix(texts.size(), dim_);
  if (is_toy()) {
    for (std::size_t n = 0; n < texts.size(); ++n) {
      if (texts[n].empty()) throw Error(ErrorCode::EmptyLabel, "text " + std::to_string(n) + " is empty");
      const auto v = toy_embedding(texts[n], dim_, seed_);
      std::copy(v.begin(), v.end(), out.embeddings.row(n).begin());
    }
    return out;
  }
  std::unordered_map<std::string, std::size_t> lookup;
  for (std::size_t n = 0; n < table_->size(); ++n) lookup.emplace(table_->prompts[n], n);
  std::string missing;
  for (std::size_t n = 0; n < texts.size(); ++n) {
    auto it = lookup.find(texts[n]);
    if (it == lookup.end()) {
      missing += (missing.empty() ? "'" : ", '") + texts[n] + "'";
      continue;
    }
    const auto src = table_->embeddings.row(it->second);
    std::copy(src.begin(), src.end(), out.embeddings.row(n).begin());
  }
  if (!missing.empty()) throw Error(ErrorCode::UnknownPrompt, "not in embedding table: " + missing);
  return out;
}

PromptSet Embedder::embed_labels(std::span<const std::string> labels, bool engineer) const {
  if (!engineer) return embed(labels);
  std::vector<std::string> texts;
  texts.reserve(labels.size());
  for (const auto& l : labels) texts.push_back(engineer_prompt(l));
  PromptSet set = embed(texts);
  set.prompts.assign(labels.begin(), labels.end());
  return set;
}

}  // namespace fieldfuse
