#ifndef SGOIF_METRICS_HPP
#define SGOIF_METRICS_HPP

#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

namespace sgoif {

struct ScoredExample {
  long id = 0;
  double score = 0.0;
};

using NoisySet = std::unordered_set<long>;

/// Fraction of truth-noisy examples among the top ceil(k_percent * N) by
/// descending score (ties by ascending id). Null when no positives exist.
std::optional<double> precision_at_k(std::span<const ScoredExample> scores,
                                     const NoisySet& noisy,
                                     double k_percent);

/// Average precision over descending ranks:
///   AP = sum_k (R_k - R_{k-1}) P_k.
/// Null unless both classes are present.
std::optional<double> average_precision(std::span<const ScoredExample> scores,
                                        const NoisySet& noisy);

/// Mann-Whitney AUROC with half credit for ties. Null unless both classes
/// are present.
std::optional<double> auroc(std::span<const ScoredExample> scores,
                            const NoisySet& noisy);

/// Kendall tau-b between two rankings restricted to the union of their
/// top-`top_percent` prefixes. Null when the restricted set has < 2 ids
/// common to both rankings.
std::optional<double> kendall_tau_top(std::span<const long> ranking_a,
                                      std::span<const long> ranking_b,
                                      double top_percent);

}  // namespace sgoif

#endif
