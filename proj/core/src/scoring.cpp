#include "sgoif/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sgoif {

InfluenceRecord score_example(long example_id, const Vector& g_i,
                              const AnchorBank& bank,
                              const AggregationWeights& weights) {
  InfluenceRecord rec;
  rec.example_id = example_id;
  rec.per_anchor.resize(bank.anchors.size(), 0.0);
  rec.raw_inner.resize(bank.anchors.size(), 0.0);
  if (weights.w.size() != bank.anchors.size())
    throw DimensionMismatch("score_example: weights/bank size");
  for (std::size_t v = 0; v < bank.anchors.size(); ++v) {
    const AnchorState& a = bank.anchors[v];
    if (a.phi_v.size() != g_i.size())
      throw DimensionMismatch("score_example: gradient dim");
    rec.raw_inner[v] = a.phi_v.dot(g_i);
    rec.per_anchor[v] = -a.c_v * rec.raw_inner[v];
  }
  if (weights.no_confidence) {
    rec.aggregated = 0.0;
    rec.flagged = true;
    return rec;
  }
  double agg = 0.0;
  for (std::size_t v = 0; v < rec.per_anchor.size(); ++v)
    agg += weights.w[v] * rec.per_anchor[v];
  rec.aggregated = agg;
  return rec;
}

QuantileTracker::QuantileTracker(std::size_t capacity)
    : capacity_(capacity == 0 ? 1 : capacity) {
  values_.reserve(capacity_);
}

void QuantileTracker::add(double magnitude) {
  if (values_.size() < capacity_) {
    values_.push_back(magnitude);
  } else {
    values_[next_] = magnitude;
    next_ = (next_ + 1) % capacity_;
  }
}

double QuantileTracker::quantile(double q) const {
  if (values_.empty()) return std::numeric_limits<double>::infinity();
  std::vector<double> sorted(values_);
  const double clamped = std::clamp(q, 0.0, 1.0);
  auto rank = static_cast<std::size_t>(clamped *
                                       static_cast<double>(sorted.size() - 1));
  std::nth_element(sorted.begin(),
                   sorted.begin() + static_cast<std::ptrdiff_t>(rank),
                   sorted.end());
  return sorted[rank];
}

std::vector<int> refinement_trigger(const InfluenceRecord& record,
                                    const AnchorBank& bank,
                                    const QuantileTracker& magnitudes,
                                    double magnitude_quantile,
                                    double confidence_floor) {
  if (magnitude_quantile <= 0.0 || magnitude_quantile >= 1.0)
    throw Error("refinement_trigger: quantile must lie in (0,1)");
  if (record.raw_inner.size() != bank.anchors.size())
    throw DimensionMismatch("refinement_trigger: record/bank size");
  const double threshold = magnitudes.quantile(magnitude_quantile);
  std::vector<int> out;
  for (std::size_t v = 0; v < bank.anchors.size(); ++v) {
    const AnchorState& a = bank.anchors[v];
    if (a.c_v >= confidence_floor) continue;
    if (std::abs(record.raw_inner[v]) > threshold)
      out.push_back(a.anchor_id);
  }
  return out;
}

void BernsteinAccumulator::add(double probe) {
  m_ += 1;
  const double delta = probe - mean_;
  mean_ += delta / static_cast<double>(m_);
  m2_ += delta * (probe - mean_);
  range_bound_ = std::max(range_bound_, std::abs(probe));
}

double BernsteinAccumulator::variance() const {
  if (m_ < 2) return 0.0;
  return std::max(0.0, m2_ / static_cast<double>(m_ - 1));
}

void BernsteinAccumulator::reset() {
  m_ = 0;
  mean_ = 0.0;
  m2_ = 0.0;
  range_bound_ = 0.0;
}

double bernstein_interval(const BernsteinAccumulator& acc,
                          double alpha_level) {
  if (acc.count() < 2)
    throw InsufficientProbes("bernstein_interval: need m >= 2");
  if (alpha_level <= 0.0 || alpha_level >= 1.0)
    throw Error("bernstein_interval: alpha outside (0,1)");
  const double m = static_cast<double>(acc.count());
  const double log_term = std::log(3.0 / alpha_level);
  return std::sqrt(2.0 * acc.variance() * log_term / m) +
         3.0 * acc.range_bound() * log_term / m;
}

double misrank_bound(double delta_gap, double bias_b, double sigma_tilde_sq,
                     long m) {
  if (m < 1) throw Error("misrank_bound: m must be >= 1");
  if (delta_gap <= bias_b) return 1.0;  // gap below bias: vacuous
  if (sigma_tilde_sq <= 0.0) return 0.0;
  const double margin = delta_gap - bias_b;
  const double exponent =
      -margin * margin / (2.0 * sigma_tilde_sq / static_cast<double>(m));
  return std::clamp(std::exp(exponent), 0.0, 1.0);
}

RankingReport topk_report(std::span<const InfluenceRecord> records, int k,
                          double sup_error_bound) {
  if (k < 1 || static_cast<std::size_t>(k) > records.size())
    throw Error("topk_report: K out of range");
  struct Entry {
    long id;
    double score;
  };
  std::vector<Entry> entries;
  entries.reserve(records.size());
  for (const InfluenceRecord& r : records)
    entries.push_back({r.example_id, r.aggregated});
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });

  RankingReport report;
  report.sup_error_bound = sup_error_bound;
  report.ordering.reserve(entries.size());
  for (const Entry& e : entries) report.ordering.push_back(e.id);
  report.top_k.assign(report.ordering.begin(), report.ordering.begin() + k);

  if (static_cast<std::size_t>(k) == entries.size()) {
    report.gamma_k = std::numeric_limits<double>::infinity();
  } else {
    // Min over (in-set, out-set) pairs is the boundary gap of the sorted
    // scores.
    report.gamma_k = entries[static_cast<std::size_t>(k) - 1].score -
                     entries[static_cast<std::size_t>(k)].score;
  }
  report.order_certified = sup_error_bound < report.gamma_k / 2.0;
  return report;
}

ErrorBudget error_budget(const InfluenceRecord& record, int anchor_index,
                         const AnchorState& anchor, double m_bound,
                         double g_i_norm, double e_proj_bound, double tau_t,
                         double delta_threshold) {
  if (m_bound <= 0.0) throw Error("error_budget: m must be positive");
  if (anchor_index < 0 ||
      static_cast<std::size_t>(anchor_index) >= record.raw_inner.size())
    throw DimensionMismatch("error_budget: anchor index");
  ErrorBudget budget;
  budget.e_solver = (anchor.residual_norm / m_bound) * g_i_norm;
  budget.e_conf = (1.0 - anchor.c_v) *
                  std::abs(record.raw_inner[static_cast<std::size_t>(anchor_index)]);
  budget.e_proj_bound = e_proj_bound;
  budget.delta_threshold = delta_threshold;
  // Eq.-(13) indicator with tau_t as the residual ceiling and gamma = 1/m:
  // the event gamma tau > (delta - other terms) / ||g_i|| is deterministic
  // once tau_t is fixed.
  const double remaining = delta_threshold - (budget.e_conf + e_proj_bound);
  budget.misrank_bound =
      (tau_t / m_bound) * g_i_norm > remaining ? 1.0 : 0.0;
  return budget;
}

}  // namespace sgoif
