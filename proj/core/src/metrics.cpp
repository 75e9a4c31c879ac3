#include "sgoif/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "sgoif/errors.hpp"

namespace sgoif {
namespace {

std::vector<ScoredExample> sorted_descending(
    std::span<const ScoredExample> scores) {
  std::vector<ScoredExample> out(scores.begin(), scores.end());
  std::sort(out.begin(), out.end(),
            [](const ScoredExample& a, const ScoredExample& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.id < b.id;
            });
  return out;
}

}  // namespace

std::optional<double> precision_at_k(std::span<const ScoredExample> scores,
                                     const NoisySet& noisy,
                                     double k_percent) {
  if (scores.empty()) return std::nullopt;
  if (noisy.empty()) return std::nullopt;  // P@k undefined with no positives
  const auto n = static_cast<double>(scores.size());
  const auto k = static_cast<std::size_t>(
      std::ceil(k_percent / 100.0 * n));
  if (k == 0) return std::nullopt;
  auto sorted = sorted_descending(scores);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k && i < sorted.size(); ++i)
    if (noisy.count(sorted[i].id) > 0) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

std::optional<double> average_precision(std::span<const ScoredExample> scores,
                                        const NoisySet& noisy) {
  if (scores.empty()) return std::nullopt;
  std::size_t positives = 0;
  for (const auto& s : scores) positives += noisy.count(s.id) > 0 ? 1u : 0u;
  if (positives == 0 || positives == scores.size()) return std::nullopt;

  auto sorted = sorted_descending(scores);
  double ap = 0.0;
  std::size_t hits = 0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (noisy.count(sorted[k].id) > 0) ++hits;
    const double recall =
        static_cast<double>(hits) / static_cast<double>(positives);
    const double precision =
        static_cast<double>(hits) / static_cast<double>(k + 1);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

std::optional<double> auroc(std::span<const ScoredExample> scores,
                            const NoisySet& noisy) {
  if (scores.empty()) return std::nullopt;
  std::size_t positives = 0;
  for (const auto& s : scores) positives += noisy.count(s.id) > 0 ? 1u : 0u;
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;

  // Rank-sum with midranks for ties.
  std::vector<ScoredExample> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredExample& a, const ScoredExample& b) {
              return a.score < b.score;
            });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) ++j;
    const double midrank =
        0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t)
      if (noisy.count(sorted[t].id) > 0) rank_sum_pos += midrank;
    i = j;
  }
  const double p = static_cast<double>(positives);
  const double n = static_cast<double>(negatives);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

std::optional<double> kendall_tau_top(std::span<const long> ranking_a,
                                      std::span<const long> ranking_b,
                                      double top_percent) {
  if (ranking_a.size() != ranking_b.size())
    throw DimensionMismatch("kendall_tau_top: rankings differ in size");
  if (ranking_a.empty()) return std::nullopt;
  const auto n = ranking_a.size();
  const auto k = std::min<std::size_t>(
      n, static_cast<std::size_t>(
             std::ceil(top_percent / 100.0 * static_cast<double>(n))));
  if (k == 0) return std::nullopt;

  std::unordered_map<long, std::size_t> pos_a, pos_b;
  for (std::size_t i = 0; i < n; ++i) {
    pos_a[ranking_a[i]] = i;
    pos_b[ranking_b[i]] = i;
  }
  // Union of both top-k prefixes, restricted to ids known to both.
  std::vector<long> restricted;
  NoisySet seen;
  for (std::size_t i = 0; i < k; ++i) {
    for (long id : {ranking_a[i], ranking_b[i]}) {
      if (seen.count(id) > 0) continue;
      seen.insert(id);
      if (pos_a.count(id) > 0 && pos_b.count(id) > 0) restricted.push_back(id);
    }
  }
  if (restricted.size() < 2) return std::nullopt;

  // tau-b pair counting; positions here are permutations so ties cannot
  // occur, making tau-b equal plain tau on this restriction.
  long concordant = 0, discordant = 0;
  for (std::size_t i = 0; i < restricted.size(); ++i) {
    for (std::size_t j = i + 1; j < restricted.size(); ++j) {
      const auto da = static_cast<long>(pos_a[restricted[i]]) -
                      static_cast<long>(pos_a[restricted[j]]);
      const auto db = static_cast<long>(pos_b[restricted[i]]) -
                      static_cast<long>(pos_b[restricted[j]]);
      const long prod = (da > 0 ? 1 : -1) * (db > 0 ? 1 : -1);
      if (prod > 0)
        ++concordant;
      else
        ++discordant;
    }
  }
  const double total = static_cast<double>(concordant + discordant);
  return (static_cast<double>(concordant) - static_cast<double>(discordant)) /
         total;
}

}  // namespace sgoif
