#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace focuskit {

struct ClassificationMetrics {
  std::size_t n_classes = 0;
  std::size_t n = 0;
  // confusion[truth][pred].
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::size_t> support;
  // Unweighted mean of F1 over the classes present in truth.
  double macro_f1 = 0.0;
};

// 0/0 ratios are defined as 0. Throws ValidationError on empty or
// mismatched input or an index >= n_classes.
ClassificationMetrics confusion_and_f1(std::span<const std::size_t> truth,
                                       std::span<const std::size_t> pred,
                                       std::size_t n_classes);

// Probability that a random positive outranks a random negative, ties
// counting one half; computed from mid-ranks. Throws ValidationError when
// either class is absent.
double roc_auc(std::span<const int> truth, std::span<const double> scores);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

// Points from (0, 0) to (1, 1), one per distinct score, descending threshold.
std::vector<RocPoint> roc_curve(std::span<const int> truth,
                                std::span<const double> scores);

// One-vs-rest AUC per class; empty where the class is absent or universal.
std::vector<std::optional<double>> one_vs_rest_auc(
    std::span<const std::size_t> truth,
    std::span<const std::vector<double>> scores, std::size_t n_classes);

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t resamples = 0;
  // Resamples on which the metric was undefined (e.g. one class for AUC).
  std::size_t skipped = 0;
};

// Metric evaluated on a resample, given as indices into the original data.
// Returns nullopt when undefined on that resample.
using ResampleMetric =
    std::function<std::optional<double>(std::span<const std::size_t> indices)>;

// Percentile bootstrap (2.5 / 97.5, linear interpolation) over `resamples`
// draws of n indices with replacement; resample b draws from its own seed
// derived from (seed, b). When `point` is given the interval is widened to
// contain it. Requires n >= 10.
ConfidenceInterval bootstrap_ci(const ResampleMetric& metric, std::size_t n,
                                std::size_t resamples, std::uint64_t seed,
                                std::optional<double> point = std::nullopt);

ConfidenceInterval bootstrap_macro_f1_ci(std::span<const std::size_t> truth,
                                         std::span<const std::size_t> pred,
                                         std::size_t n_classes,
                                         std::size_t resamples,
                                         std::uint64_t seed);

ConfidenceInterval bootstrap_auc_ci(std::span<const int> truth,
                                    std::span<const double> scores,
                                    std::size_t resamples, std::uint64_t seed);

}  // namespace focuskit
