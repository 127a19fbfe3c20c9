#include "lmcd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lmcd/errors.hpp"

namespace lmcd {
namespace {

void check_lengths(const std::vector<int>& labels,
                   const std::vector<double>& scores) {
  if (labels.empty()) throw ArgumentError("metrics: empty input");
  if (labels.size() != scores.size()) {
    throw ArgumentError("metrics: " + std::to_string(labels.size()) +
                        " labels vs " + std::to_string(scores.size()) +
                        " scores");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) {
      throw ArgumentError("metrics: labels must be 0/1, got " +
                          std::to_string(y));
    }
  }
  // NaN scores would feed std::sort a comparator without strict weak
  // ordering, which is undefined behaviour (observed as an infinite loop).
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw ArgumentError("metrics: non-finite score");
    }
  }
}

}  // namespace

double metric_auc(const std::vector<int>& labels,
                  const std::vector<double>& scores) {
  check_lengths(labels, scores);
  const long n1 = std::accumulate(labels.begin(), labels.end(), 0L);
  const long n0 = static_cast<long>(labels.size()) - n1;
  if (n1 == 0 || n0 == 0) {
    throw ArgumentError("auc undefined: only one class present");
  }
  std::vector<size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return scores[a] < scores[b];
  });
  // Average ranks over tied scores, then Mann-Whitney via the positive-rank
  // sum. One-based ranks.
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) +
                                   static_cast<double>(j));
    for (size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const double n1d = static_cast<double>(n1);
  return (rank_sum_pos - n1d * (n1d + 1.0) / 2.0) /
         (n1d * static_cast<double>(n0));
}

double metric_acc(const std::vector<int>& labels,
                  const std::vector<double>& scores, double threshold) {
  check_lengths(labels, scores);
  long hits = 0;
  for (size_t k = 0; k < labels.size(); ++k) {
    const int pred = scores[k] >= threshold ? 1 : 0;
    if (pred == labels[k]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double metric_rmse(const std::vector<int>& labels,
                   const std::vector<double>& scores) {
  check_lengths(labels, scores);
  double sum = 0.0;
  for (size_t k = 0; k < labels.size(); ++k) {
    const double d = scores[k] - static_cast<double>(labels[k]);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(labels.size()));
}

}  // namespace lmcd
