// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fieldfuse/tensor.hpp"

namespace fieldfuse {

struct LabelMapEntry {
  std::string target_class;
  std::vector<std::string> prompts;
};

/// Fine prompts grouped under target classes. Prompt indices are positions
/// in the flattened prompt list (entry order, then prompt order).
struct LabelMap {
  std::vector<LabelMapEntry> entries;

  std::vector<std::string> flattened_prompts() const;
  std::vector<std::string> target_classes() const;
};

void validate(const LabelMap& map);
LabelMap load_label_map(const std::filesystem::path& path);
LabelMap parse_label_map(const std::string& json_text);

/// Prompt-index predictions -> target-class indices; -1 passes through.
std::vector<std::int32_t> remap(std::span<const std::int32_t> pred_prompt_labels, const LabelMap& map);

using ConfusionMatrix = Matrix<std::uint64_t>;  // rows: ground truth, cols: prediction

/// Counts over points where neither label is -1.
ConfusionMatrix confusion(std::span<const std::int32_t> gt, std::span<const std::int32_t> pred, std::size_t num_classes);

struct Metrics {
  double miou = 0.0;
  double macc = 0.0;
  std::vector<double> iou;        // NaN for excluded classes
  std::vector<double> acc;        // NaN for classes without ground truth
  std::vector<std::uint8_t> present;  // class counted in the means
};

/// Classes with no ground truth and no predictions are excluded from both
/// means. A class predicted but absent from ground truth has IoU 0 and no
/// accuracy term.
Metrics miou_macc(const ConfusionMatrix& conf);

/// mAcc per group of `group_size` classes ranked by descending frequency
/// (ties by class index). Groups with no class that has ground truth report NaN.
std::vector<double> grouped_macc(const ConfusionMatrix& conf, std::span<const std::uint64_t> class_frequencies,
                                 std::size_t group_size);

}  // namespace fieldfuse
