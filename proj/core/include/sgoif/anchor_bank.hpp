#ifndef SGOIF_ANCHOR_BANK_HPP
#define SGOIF_ANCHOR_BANK_HPP

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "sgoif/ihvp.hpp"

namespace sgoif {

/// Gram-coverage audit of the (normalized) anchor IHVP columns.
struct GramReport {
  Matrix g;                  // K_used x K_used
  double lambda_min = 0.0;
  double bound_factor = 0.0;  // 1 / lambda_min, inf when lambda_min <= 0
  std::vector<int> used_anchor_ids;      // anchors with non-zero phi
  std::vector<int> excluded_anchor_ids;  // zero-phi anchors, warned
};

enum class Coverage { kAdequate, kRefreshNeeded };

struct AnchorBank {
  std::vector<AnchorState> anchors;
  long refresh_period = 200;       // T_a
  double coverage_threshold = 0.1;

  int size() const { return static_cast<int>(anchors.size()); }
};

/// G = Phi_hat^T Phi_hat on l2-normalized phi columns. Zero-phi anchors
/// are excluded (reported); AllAnchorsZero when nothing is usable.
GramReport build_gram(const AnchorBank& bank);

/// refresh_needed iff lambda_min < threshold (strict).
Coverage coverage_check(const GramReport& report, double threshold);

/// (1 / lambda_min(G)) * ||g - P_Phi g||^2 with the projection computed
/// through the normal equations. Throws SingularGram for
/// lambda_min <= 1e-12.
double projection_error_bound(const GramReport& report, const Vector& g,
                              std::span<const Vector> phi);

struct AggregationWeights {
  std::vector<double> w;
  bool no_confidence = false;
};

/// w_v = c_v / sum_u c_u; all-zero confidence yields zero weights and the
/// no-confidence flag (a state, not an error).
AggregationWeights aggregation_weights(const AnchorBank& bank);

/// Candidate supply for anchor replacement: gradient of pool entry i at
/// the current parameters.
using CandidateGradientFn = std::function<Vector(int)>;
/// Warm-start map for a freshly installed anchor target gradient.
using WarmStartFn = std::function<Vector(const Vector&)>;

struct ReplacementResult {
  int anchor_id = -1;   // replaced anchor, -1 for the empty-pool no-op
  int slot = -1;        // index into bank.anchors
  int pool_index = -1;  // candidate pool entry installed
};

/// Replace the lowest-confidence anchor (ties: smallest anchor_id) with
/// the candidate whose gradient has the largest component orthogonal to
/// the current span, sampled 16 times from the pool. Coverage-triggered
/// calls never lower lambda_min(G): candidates are tried in
/// orthogonal-norm order and the call degrades to a no-op when every one
/// of them would make coverage worse.
ReplacementResult replace_anchors(AnchorBank& bank, const GramReport& report,
                                  const CandidateGradientFn& pool_gradient,
                                  int pool_size, const WarmStartFn& warm_start,
                                  bool coverage_triggered, Rng& rng);

// Checkpoint snapshot, 8-byte magic "SGOIFAB1".
void save_anchor_bank(const AnchorBank& bank, std::ostream& out);
AnchorBank load_anchor_bank(std::istream& in);

}  // namespace sgoif

#endif
