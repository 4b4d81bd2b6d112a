// SPDX-License-Identifier: Apache-2.0
#include "fieldfuse/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "fieldfuse/error.hpp"
#include "fieldfuse/io.hpp"

namespace fieldfuse {

std::vector<std::string> LabelMap::flattened_prompts() const {
  std::vector<std::string> out;
  for (const auto& e : entries) out.insert(out.end(), e.prompts.begin(), e.prompts.end());
  return out;
}

std::vector<std::string> LabelMap::target_classes() const {
  std::vector<std::string> out;
  for (const auto& e : entries) out.push_back(e.target_class);
  return out;
}

void validate(const LabelMap& map) {
  if (map.entries.empty()) throw Error(ErrorCode::InvalidArgument, "label map is empty");
  std::unordered_set<std::string> seen;
  for (const auto& e : map.entries) {
    if (e.prompts.empty()) throw Error(ErrorCode::InvalidArgument, "label map entry '" + e.target_class + "' has no prompts");
    for (const auto& p : e.prompts)
      if (!seen.insert(p).second) throw Error(ErrorCode::InvalidArgument, "prompt '" + p + "' appears in two entries");
  }
}

LabelMap parse_label_map(const std::string& json_text) {
  LabelMap map;
  try {
    const auto j = nlohmann::json::parse(json_text);
    for (const auto& e : j.at("entries"))
      map.entries.push_back({e.at("target").get<std::string>(), e.at("prompts").get<std::vector<std::string>>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("label map: ") + e.what());
  }
  validate(map);
  return map;
}

LabelMap load_label_map(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_label_map(std::string(bytes.begin(), bytes.end()));
}

std::vector<std::int32_t> remap(std::span<const std::int32_t> pred_prompt_labels, const LabelMap& map) {
  std::vector<std::int32_t> prompt_to_target;
  for (std::size_t t = 0; t < map.entries.size(); ++t)
    prompt_to_target.insert(prompt_to_target.end(), map.entries[t].prompts.size(), static_cast<std::int32_t>(t));
  std::vector<std::int32_t> out(pred_prompt_labels.size());
  for (std::size_t i = 0; i < pred_prompt_labels.size(); ++i) {
    const auto p = pred_prompt_labels[i];
    if (p == -1) {
      out[i] = -1;
      continue;
    }
    if (p < 0 || static_cast<std::size_t>(p) >= prompt_to_target.size())
      throw Error(ErrorCode::UnmappedPrompt, "prediction " + std::to_string(p) + " is not a prompt in the label map");
    out[i] = prompt_to_target[static_cast<std::size_t>(p)];
  }
  return out;
}

ConfusionMatrix confusion(std::span<const std::int32_t> gt, std::span<const std::int32_t> pred, std::size_t num_classes) {
  if (gt.size() != pred.size()) throw Error(ErrorCode::ShapeMismatch, "gt and pred differ in length");
  if (num_classes == 0) throw Error(ErrorCode::InvalidArgument, "num_classes must be >= 1");
  const auto k = static_cast<std::int64_t>(num_classes);
  auto in_range = [k](std::int32_t l) { return l == -1 || (l >= 0 && l < k); };
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (!in_range(gt[i]) || !in_range(pred[i]))
      throw Error(ErrorCode::LabelOutOfRange, "label out of range at point " + std::to_string(i));

  ConfusionMatrix conf(num_classes, num_classes, 0);
  const auto m = static_cast<std::int64_t>(gt.size());
#pragma omp parallel
  {
    std::vector<std::uint64_t> local(num_classes * num_classes, 0);
#pragma omp for schedule(static) nowait
    for (std::int64_t i = 0; i < m; ++i)
      if (gt[i] >= 0 && pred[i] >= 0) ++local[static_cast<std::size_t>(gt[i]) * num_classes + pred[i]];
#pragma omp critical
    for (std::size_t c = 0; c < local.size(); ++c) conf.data()[c] += local[c];
  }
  return conf;
}

Metrics miou_macc(const ConfusionMatrix& conf) {
  const std::size_t k = conf.rows();
  if (k == 0 || conf.cols() != k) throw Error(ErrorCode::InvalidArgument, "confusion matrix must be square and nonempty");
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  Metrics out;
  out.iou.assign(k, kNaN);
  out.acc.assign(k, kNaN);
  out.present.assign(k, 0);
  double iou_sum = 0.0, acc_sum = 0.0;
  std::size_t iou_n = 0, acc_n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t gt_total = 0, pred_total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      gt_total += conf(c, j);
      pred_total += conf(j, c);
    }
    if (gt_total == 0 && pred_total == 0) continue;
    out.present[c] = 1;
    const double tp = static_cast<double>(conf(c, c));
    const double fn = static_cast<double>(gt_total) - tp;
    const double fp = static_cast<double>(pred_total) - tp;
    out.iou[c] = tp / (tp + fp + fn);
    iou_sum += out.iou[c];
    ++iou_n;
    if (gt_total > 0) {
      out.acc[c] = tp / (tp + fn);
      acc_sum += out.acc[c];
      ++acc_n;
    }
  }
  out.miou = iou_n ? iou_sum / static_cast<double>(iou_n) : kNaN;
  out.macc = acc_n ? acc_sum / static_cast<double>(acc_n) : kNaN;
  return out;
}

std::vector<double> grouped_macc(const ConfusionMatrix& conf, std::span<const std::uint64_t> class_frequencies,
                                 std::size_t group_size) {
  if (group_size < 1) throw Error(ErrorCode::InvalidArgument, "group_size must be >= 1");
  if (class_frequencies.size() != conf.rows())
    throw Error(ErrorCode::ShapeMismatch, "one frequency per class is required");
  const auto metrics = miou_macc(conf);
  std::vector<std::size_t> order(conf.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return class_frequencies[a] > class_frequencies[b]; });
  std::vector<double> groups;
  for (std::size_t start = 0; start < order.size(); start += group_size) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = start; j < std::min(order.size(), start + group_size); ++j) {
      const double a = metrics.acc[order[j]];
      if (std::isnan(a)) continue;
      sum += a;
      ++n;
    }
    groups.push_back(n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN());
  }
  return groups;
}

}  // namespace fieldfuse
