#ifndef SGOIF_IHVP_HPP
#define SGOIF_IHVP_HPP

#include <span>
#include <utility>

#include "sgoif/curvature.hpp"
#include "sgoif/numerics.hpp"

namespace sgoif {

/// Per-anchor solver state: target gradient g_v, IHVP iterate phi_v,
/// residual r_v = g_v - H phi_v, and the gated confidence c_v.
struct AnchorState {
  int anchor_id = 0;
  Vector g_v;
  Vector phi_v;
  Vector r_v;
  double residual_norm = 0.0;
  double c_v = 0.0;
  long last_refined_step = -1;
  bool reset_flagged = false;       // non-finite iterate was wiped
  bool breakdown_flagged = false;   // CG hit non-positive curvature

  static AnchorState make(int id, Vector g);
  void set_target(Vector g);
  void recompute_residual(const LinearOp& apply_h);
};

/// One (preconditioned) stochastic Richardson update, Eq.-(8)-style:
///   phi <- phi + rho * P^{-1} (g - H phi),
/// followed by a residual recomputation at the new iterate. Pass
/// `precond = nullptr` for the plain unpreconditioned map (the
/// no-sketch-PCG ablation). A non-finite iterate resets the anchor
/// (phi = 0, c = 0) and flags it instead of aborting the stream.
AnchorState richardson_step(AnchorState anchor, const LinearOp& apply_h,
                            const LinearOp& precond, double rho_t);

/// Truncated preconditioned Neumann expansion for H = alpha I + Delta:
///   sum_{k=0..K} (-alpha^{-1} Delta)^k alpha^{-1} g,
/// returned with the analytic truncation bound
///   ||P^{-1}|| q^{K+1} ||g|| / (1 - q),  q = ||alpha^{-1} Delta||
/// estimated by power iteration. Throws DivergentSeries when q >= 1.
std::pair<Vector, double> neumann_ihvp(const Vector& g,
                                       const CurvatureSurrogate& surrogate,
                                       int truncation_k);

/// Adaptive truncation order: grow while the residual trend falls, shrink
/// (floor 0) while it rises, hold in the dead zone.
int adapt_truncation(int current_k, double residual_norm,
                     double residual_trend, int max_k);

/// Streaming rank-r eigenspace of the curvature operator.
struct SubspaceState {
  Matrix q;               // d x r, orthonormal columns
  Vector lambda;          // Rayleigh estimates, descending
  int r = 0;
  long last_refresh_step = -1;
  long refresh_period = 50;
};

/// Randomized range sketch refresh (oversampling r + 4, one power pass):
/// probe vectors seed the sketch, Gaussian columns fill it. The realized
/// rank shrinks for this period when the sketch is rank deficient.
SubspaceState update_subspace(SubspaceState sub,
                              std::span<const Vector> probe_grads,
                              const LinearOp& apply_h, int dim, Rng& rng);

/// Eq.-(10) hybrid solve: phi = Q a + u with a from the r x r projected
/// system and u the Woodbury inverse of D + Q Lambda Q^T applied to the
/// out-of-subspace component g - H Q a.
Vector subspace_solve(const SubspaceState& sub, const Vector& g,
                      const LinearOp& apply_h, const Vector& diag_d);

/// Short conjugate-gradient refinement warm-started at the current phi.
/// The anchor-visible residual norm never increases: the best iterate is
/// kept. Non-positive curvature aborts refinement, keeps the best iterate,
/// and flags the anchor.
AnchorState cg_refine(AnchorState anchor, const LinearOp& apply_h, double tol,
                      int max_iters);

/// Lemma residual bound ||H^{-1} g - phi|| <= ||r|| / m.
inline double residual_error_bound(double residual_norm, double m) {
  return residual_norm / m;
}

/// Step-size schedule for the Richardson iteration.
struct SolverSchedule {
  enum class RhoRule { kConstant, kRobbinsMonro };
  RhoRule rule = RhoRule::kRobbinsMonro;
  double rho0 = 0.1;
  double t0 = 100.0;
  int max_neumann_k = 10;
  int cg_max_iters = 20;
  double cg_tol = 1e-8;

  double rho(long t) const {
    if (rule == RhoRule::kConstant) return rho0;
    return rho0 / (1.0 + static_cast<double>(t) / t0);
  }
};

}  // namespace sgoif

#endif
