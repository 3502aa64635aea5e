#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <unordered_set>
#include <vector>

#include "gcrank/io.hpp"

namespace gcrank {

// |top-K ∩ relevant| / |relevant|
inline double recall_at_k(std::span<const std::uint32_t> ranked,
                          const std::unordered_set<std::uint32_t>& relevant, std::size_t k) {
  if (relevant.empty()) throw DataError("recall_at_k: empty relevant set");
  const std::size_t top = std::min(k, ranked.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < top; ++r)
    if (relevant.count(ranked[r])) ++hits;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// DCG with gain 1/log2(rank+1), ranks starting at 1; IDCG over
// min(K, |relevant|) leading ranks.
inline double ndcg_at_k(std::span<const std::uint32_t> ranked,
                        const std::unordered_set<std::uint32_t>& relevant, std::size_t k) {
  if (relevant.empty()) throw DataError("ndcg_at_k: empty relevant set");
  const std::size_t top = std::min(k, ranked.size());
  double dcg = 0.0;
  for (std::size_t r = 0; r < top; ++r)
    if (relevant.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(k, relevant.size());
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

// Rank-statistic AUC: probability a random positive outscores a random
// negative, ties counted 1/2 (average ranks).
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DataError("auc: size mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (auto y : labels) {
    if (y == 1) ++n_pos;
    else if (y == 0) ++n_neg;
    else throw DataError("auc: label outside {0,1}");
  }
  if (n_pos == 0 || n_neg == 0) throw DataError("auc: both classes required");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// Compensated (Kahan) mean; order-independent up to rounding in reductions.
struct KahanMean {
  double sum = 0.0;
  double comp = 0.0;
  std::size_t count = 0;

  void add(double x) {
    const double y = x - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
    ++count;
  }
  double mean() const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }
};

}  // namespace gcrank
