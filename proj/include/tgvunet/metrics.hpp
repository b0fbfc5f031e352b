#pragma once

// Pixel-wise confusion counts and segmentation scores.
//
// Zero-denominator conventions: precision (recall) is 1 when nothing was
// predicted (nothing was present) and nothing was missed (spuriously
// predicted), else 0. f1 is 0 when precision + recall is 0. Jaccard and Dice
// are 1 when both masks are empty.

#include <cstdint>
#include <string>
#include <vector>

#include "tgvunet/tensor.hpp"

namespace tgvunet {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
  ConfusionCounts counts;
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double jaccard = 0;  // pixel-wise
  double dsc = 0;
  double fp_per_volume = 0;
};

// prob >= threshold counts as foreground. threshold in [0, 1].
Tensor binarize(const Tensor& prob, double threshold = 0.5);
ConfusionCounts confusion(const Tensor& pred_prob, const Tensor& target, double threshold = 0.5);

// 2 |R and T| / (|R| + |T|) straight from the masks.
double dice(const Tensor& pred_mask, const Tensor& target_mask);

// Scores from the counts; dsc taken from the masks.
MetricsReport compute_metrics(const ConfusionCounts& c, const Tensor& pred_mask, const Tensor& target_mask);
// Scores from pooled counts alone (dsc = 2tp / (2tp + fp + fn)).
MetricsReport compute_metrics(const ConfusionCounts& c);

struct SliceMasks {
  std::string volume_id;
  Tensor pred;    // binary plane
  Tensor target;  // binary plane
};

// Number of 8-connected predicted components with no ground-truth pixel,
// summed per volume and averaged over volumes. Throws Error when empty.
double fp_per_volume(const std::vector<SliceMasks>& slices);
// 8-connected components of a binary plane that do not touch `target`.
std::size_t false_positive_components(const Tensor& pred, const Tensor& target);

struct MetricsRow {
  std::string dataset;
  std::string combo;
  double threshold = 0.5;
  MetricsReport report;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string metrics_table(const std::vector<MetricsRow>& rows);

}  // namespace tgvunet
