#include "focuskit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "focuskit/error.hpp"
#include "focuskit/rng.hpp"

namespace focuskit {

namespace {

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

void check_binary(std::span<const int> truth, std::span<const double> scores) {
  if (truth.size() != scores.size()) {
    throw ValidationError("roc: truth and scores differ in length");
  }
  for (int t : truth) {
    if (t != 0 && t != 1) throw ValidationError("roc: labels must be 0 or 1");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("roc: non-finite score");
  }
}

double percentile(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

ClassificationMetrics confusion_and_f1(std::span<const std::size_t> truth,
                                       std::span<const std::size_t> pred,
                                       std::size_t n_classes) {
  if (truth.empty()) throw ValidationError("confusion_and_f1: empty input");
  if (truth.size() != pred.size()) {
    throw ValidationError("confusion_and_f1: truth and pred differ in length");
  }
  ClassificationMetrics m;
  m.n_classes = n_classes;
  m.n = truth.size();
  m.confusion.assign(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n_classes || pred[i] >= n_classes) {
      throw ValidationError("confusion_and_f1: class index out of range");
    }
    ++m.confusion[truth[i]][pred[i]];
  }
  m.precision.assign(n_classes, 0.0);
  m.recall.assign(n_classes, 0.0);
  m.f1.assign(n_classes, 0.0);
  m.support.assign(n_classes, 0);
  double f1_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < n_classes; ++k) {
    const auto tp = static_cast<double>(m.confusion[k][k]);
    double predicted = 0.0;
    for (std::size_t t = 0; t < n_classes; ++t) {
      predicted += static_cast<double>(m.confusion[t][k]);
      m.support[k] += m.confusion[k][t];
    }
    m.precision[k] = safe_ratio(tp, predicted);
    m.recall[k] = safe_ratio(tp, static_cast<double>(m.support[k]));
    m.f1[k] = safe_ratio(2.0 * m.precision[k] * m.recall[k],
                         m.precision[k] + m.recall[k]);
    if (m.support[k] > 0) {
      f1_sum += m.f1[k];
      ++present;
    }
  }
  m.macro_f1 = f1_sum / static_cast<double>(present);
  return m;
}

double roc_auc(std::span<const int> truth, std::span<const double> scores) {
  check_binary(truth, scores);
  const std::size_t n = truth.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of mid-ranks (1-based) of the positives. Mid-ranks are half-integers,
  // so the sum is exact in double for any realistic n.
  double positive_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (truth[order[k]] == 1) {
        positive_rank_sum += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("roc_auc is undefined: truth contains a single class");
  }
  const double p = static_cast<double>(n_pos);
  const double concordant = positive_rank_sum - p * (p + 1.0) / 2.0;
  return concordant / (p * static_cast<double>(n_neg));
}

std::vector<RocPoint> roc_curve(std::span<const int> truth,
                                std::span<const double> scores) {
  check_binary(truth, scores);
  const std::size_t n = truth.size();
  const auto n_pos = static_cast<double>(std::count(truth.begin(), truth.end(), 1));
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("roc_curve is undefined: truth contains a single class");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> curve;
  curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      (truth[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    curve.push_back({fp / n_neg, tp / n_pos, scores[order[i]]});
    i = j;
  }
  return curve;
}

std::vector<std::optional<double>> one_vs_rest_auc(
    std::span<const std::size_t> truth, std::span<const std::vector<double>> scores,
    std::size_t n_classes) {
  if (truth.size() != scores.size()) {
    throw ValidationError("one_vs_rest_auc: truth and scores differ in length");
  }
  std::vector<std::optional<double>> out(n_classes);
  std::vector<int> binary(truth.size());
  std::vector<double> column(truth.size());
  for (std::size_t k = 0; k < n_classes; ++k) {
    std::size_t positives = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      binary[i] = truth[i] == k ? 1 : 0;
      positives += static_cast<std::size_t>(binary[i]);
      column[i] = scores[i].at(k);
    }
    if (positives == 0 || positives == truth.size()) continue;
    out[k] = roc_auc(binary, column);
  }
  return out;
}

ConfidenceInterval bootstrap_ci(const ResampleMetric& metric, std::size_t n,
                                std::size_t resamples, std::uint64_t seed,
                                std::optional<double> point) {
  if (n < 10) throw ValidationError("bootstrap_ci needs at least 10 samples");
  if (resamples == 0) throw ValidationError("bootstrap_ci needs resamples >= 1");
  ConfidenceInterval ci;
  ci.resamples = resamples;
  std::vector<double> values;
  values.reserve(resamples);
  std::vector<std::size_t> indices(n);
  for (std::size_t b = 0; b < resamples; ++b) {
    Rng rng(mix_seed(seed, b));
    for (std::size_t& i : indices) i = rng.below(n);
    const auto value = metric(indices);
    if (value) {
      values.push_back(*value);
    } else {
      ++ci.skipped;
    }
  }
  if (values.empty()) {
    ci.lower = ci.upper = std::numeric_limits<double>::quiet_NaN();
    return ci;
  }
  std::sort(values.begin(), values.end());
  ci.lower = percentile(values, 0.025);
  ci.upper = percentile(values, 0.975);
  if (point) {
    ci.lower = std::min(ci.lower, *point);
    ci.upper = std::max(ci.upper, *point);
  }
  return ci;
}

ConfidenceInterval bootstrap_macro_f1_ci(std::span<const std::size_t> truth,
                                         std::span<const std::size_t> pred,
                                         std::size_t n_classes,
                                         std::size_t resamples,
                                         std::uint64_t seed) {
  const double point = confusion_and_f1(truth, pred, n_classes).macro_f1;
  std::vector<std::size_t> t(truth.size());
  std::vector<std::size_t> p(truth.size());
  return bootstrap_ci(
      [&](std::span<const std::size_t> idx) -> std::optional<double> {
        for (std::size_t i = 0; i < idx.size(); ++i) {
          t[i] = truth[idx[i]];
          p[i] = pred[idx[i]];
        }
        return confusion_and_f1(t, p, n_classes).macro_f1;
      },
      truth.size(), resamples, seed, point);
}

ConfidenceInterval bootstrap_auc_ci(std::span<const int> truth,
                                    std::span<const double> scores,
                                    std::size_t resamples, std::uint64_t seed) {
  const double point = roc_auc(truth, scores);
  std::vector<int> t(truth.size());
  std::vector<double> s(truth.size());
  return bootstrap_ci(
      [&](std::span<const std::size_t> idx) -> std::optional<double> {
        std::size_t positives = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          t[i] = truth[idx[i]];
          s[i] = scores[idx[i]];
          positives += static_cast<std::size_t>(t[i]);
        }
        if (positives == 0 || positives == idx.size()) return std::nullopt;
        return roc_auc(t, s);
      },
      truth.size(), resamples, seed, point);
}

}  // namespace focuskit
