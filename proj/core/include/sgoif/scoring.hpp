#ifndef SGOIF_SCORING_HPP
#define SGOIF_SCORING_HPP

#include <span>
#include <vector>

#include "sgoif/anchor_bank.hpp"

namespace sgoif {

struct InfluenceRecord {
  long example_id = 0;
  std::vector<double> per_anchor;  // -c_v phi_v^T g_i per anchor
  std::vector<double> raw_inner;   // phi_v^T g_i (ungated leverage)
  double aggregated = 0.0;         // sum_v w_v per_anchor_v
  double ci_half_width = 0.0;
  bool flagged = false;            // no-confidence or refinement flag
  long probe_count = 0;
};

/// Eq.-(1)/(5) scoring of one example gradient against the bank. The
/// no-confidence bank state yields aggregated = 0 and a flagged record.
InfluenceRecord score_example(long example_id, const Vector& g_i,
                              const AnchorBank& bank,
                              const AggregationWeights& weights);

/// Fixed-capacity ring of recent |phi^T g| magnitudes for the running
/// refinement-trigger quantile. Deterministic: insertion order only.
class QuantileTracker {
 public:
  explicit QuantileTracker(std::size_t capacity = 8192);
  void add(double magnitude);
  std::size_t count() const { return values_.size(); }
  /// Empirical quantile by nearest-rank; returns +inf until any value
  /// arrives (nothing can exceed the threshold yet).
  double quantile(double q) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<double> values_;
};

/// Anchors whose |phi_v^T g_i| exceeds the running magnitude quantile
/// while c_v sits below the confidence floor; they get queued for CG
/// refinement.
std::vector<int> refinement_trigger(const InfluenceRecord& record,
                                    const AnchorBank& bank,
                                    const QuantileTracker& magnitudes,
                                    double magnitude_quantile,
                                    double confidence_floor);

/// Welford accumulator over gated score probes.
class BernsteinAccumulator {
 public:
  void add(double probe);
  long count() const { return m_; }
  double mean() const { return mean_; }
  /// Unbiased sample variance; 0 until two probes arrive.
  double variance() const;
  double range_bound() const { return range_bound_; }
  void reset();

 private:
  long m_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double range_bound_ = 0.0;
};

/// Empirical-Bernstein half-width
///   W = sqrt(2 V ln(3/alpha) / m) + 3 B ln(3/alpha) / m.
/// Throws InsufficientProbes for m < 2.
double bernstein_interval(const BernsteinAccumulator& acc, double alpha_level);

/// Pairwise mis-ranking bound exp(-(delta - b)^2 / (2 sigma^2 / m)),
/// clipped to [0,1]; vacuous (1) when the gap does not clear the bias.
double misrank_bound(double delta_gap, double bias_b, double sigma_tilde_sq,
                     long m);

struct RankingReport {
  std::vector<long> ordering;  // ids by descending aggregated score
  std::vector<long> top_k;
  double gamma_k = 0.0;        // min in-set/out-set score gap
  double sup_error_bound = 0.0;
  bool order_certified = false;  // sup_error_bound < gamma_k / 2
};

RankingReport topk_report(std::span<const InfluenceRecord> records, int k,
                          double sup_error_bound);

/// Online error budget of Eqs. (11)-(13). E_curv and E_lin have no
/// computable online form and live only in the oracle tests; the misrank
/// field is the Eq.-(13) indicator with tau_t as the residual ceiling.
struct ErrorBudget {
  double e_solver = 0.0;
  double e_conf = 0.0;
  double e_proj_bound = 0.0;
  double delta_threshold = 0.0;
  double misrank_bound = 0.0;
};

ErrorBudget error_budget(const InfluenceRecord& record, int anchor_index,
                         const AnchorState& anchor, double m_bound,
                         double g_i_norm, double e_proj_bound, double tau_t,
                         double delta_threshold);

}  // namespace sgoif

#endif
