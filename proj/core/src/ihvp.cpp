#include "sgoif/ihvp.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace sgoif {

AnchorState AnchorState::make(int id, Vector g) {
  AnchorState a;
  a.anchor_id = id;
  a.phi_v = Vector::Zero(g.size());
  a.r_v = g;
  a.residual_norm = g.norm();
  a.g_v = std::move(g);
  return a;
}

void AnchorState::set_target(Vector g) {
  if (g.size() != g_v.size())
    throw DimensionMismatch("anchor set_target: dim change");
  g_v = std::move(g);
}

void AnchorState::recompute_residual(const LinearOp& apply_h) {
  r_v = g_v - apply_h(phi_v);
  residual_norm = r_v.norm();
}

AnchorState richardson_step(AnchorState anchor, const LinearOp& apply_h,
                            const LinearOp& precond, double rho_t) {
  if (rho_t <= 0.0) throw Error("richardson_step: rho must be positive");
  Vector update = anchor.g_v - apply_h(anchor.phi_v);
  if (precond) update = precond(update);
  anchor.phi_v += rho_t * update;
  if (!anchor.phi_v.allFinite()) {
    // Survive transient divergence: wipe the iterate, zero the confidence.
    anchor.phi_v.setZero();
    anchor.c_v = 0.0;
    anchor.reset_flagged = true;
  }
  anchor.recompute_residual(apply_h);
  return anchor;
}

std::pair<Vector, double> neumann_ihvp(const Vector& g,
                                       const CurvatureSurrogate& surrogate,
                                       int truncation_k) {
  if (truncation_k < 0) throw Error("neumann_ihvp: K must be >= 0");
  if (g.size() != surrogate.dim())
    throw DimensionMismatch("neumann_ihvp: g dim");
  const double alpha = surrogate.alpha();

  // q = ||alpha^{-1} Delta|| for the pure-damping preconditioner P = alpha I.
  const double q =
      power_iteration_max_eig(
          [&](const Vector& v) { return surrogate.delta_apply(v); },
          surrogate.dim()) /
      alpha;
  if (q >= 1.0)
    throw DivergentSeries("neumann_ihvp: ||I - P^{-1}H|| >= 1");

  Vector term = g / alpha;
  Vector sum = term;
  for (int k = 1; k <= truncation_k; ++k) {
    term = -surrogate.delta_apply(term) / alpha;
    sum += term;
  }
  const double bound = (1.0 / alpha) * std::pow(q, truncation_k + 1) *
                       g.norm() / (1.0 - q);
  return {std::move(sum), bound};
}

int adapt_truncation(int current_k, double residual_norm,
                     double residual_trend, int max_k) {
  (void)residual_norm;
  if (current_k > max_k) throw Error("adapt_truncation: K above max");
  if (residual_trend < 0.0 && current_k < max_k) return current_k + 1;
  if (residual_trend > 0.0 && current_k > 0) return current_k - 1;
  return current_k;
}

SubspaceState update_subspace(SubspaceState sub,
                              std::span<const Vector> probe_grads,
                              const LinearOp& apply_h, int dim, Rng& rng) {
  if (sub.r <= 0) return sub;  // subspace disabled, pass through
  const int requested = std::min(sub.r, dim);
  const int sketch = std::min(requested + 4, dim);

  // Sketch columns: normalized probes first, Gaussian fill after.
  Matrix omega(dim, sketch);
  int col = 0;
  for (const Vector& p : probe_grads) {
    if (col >= sketch) break;
    if (p.size() != dim)
      throw DimensionMismatch("update_subspace: probe dim");
    const double norm = p.norm();
    if (norm == 0.0) continue;
    omega.col(col++) = p / norm;
  }
  for (; col < sketch; ++col)
    for (int i = 0; i < dim; ++i) omega(i, col) = rng.normal();

  // One power pass: range of H (H Omega).
  Matrix y(dim, sketch);
  for (int j = 0; j < sketch; ++j) y.col(j) = apply_h(omega.col(j));
  for (int j = 0; j < sketch; ++j) y.col(j) = apply_h(y.col(j));

  // Orthonormal basis of the sketch range; drop near-dependent columns.
  Eigen::ColPivHouseholderQR<Matrix> qr(y);
  qr.setThreshold(1e-10);
  const int rank = std::min<int>(static_cast<int>(qr.rank()), sketch);
  if (rank == 0) {
    sub.q.resize(dim, 0);
    sub.lambda.resize(0);
    return sub;
  }
  Matrix basis = Matrix(qr.householderQ()).leftCols(rank);

  // Projected operator and its eigenpairs; Rayleigh values of the
  // rotated basis columns equal these eigenvalues exactly.
  Matrix hq(dim, rank);
  for (int j = 0; j < rank; ++j) hq.col(j) = apply_h(basis.col(j));
  Matrix b = basis.transpose() * hq;
  b = 0.5 * (b + b.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(b);

  const int keep = std::min(requested, rank);  // shrink when rank deficient
  Matrix q_new(dim, keep);
  Vector lambda_new(keep);
  for (int j = 0; j < keep; ++j) {
    // SelfAdjointEigenSolver sorts ascending; take the top.
    const int src = rank - 1 - j;
    q_new.col(j) = basis * eig.eigenvectors().col(src);
    lambda_new[j] = std::max(eig.eigenvalues()[src], 0.0);
  }
  sub.q = std::move(q_new);
  sub.lambda = std::move(lambda_new);
  return sub;
}

Vector subspace_solve(const SubspaceState& sub, const Vector& g,
                      const LinearOp& apply_h, const Vector& diag_d) {
  if (sub.q.cols() < 1) throw Error("subspace_solve: empty subspace");
  if (g.size() != sub.q.rows() || diag_d.size() != g.size())
    throw DimensionMismatch("subspace_solve: dims");

  const int r = static_cast<int>(sub.q.cols());
  Matrix hq(g.size(), r);
  for (int j = 0; j < r; ++j) hq.col(j) = apply_h(sub.q.col(j));
  Matrix projected = sub.q.transpose() * hq;
  projected = 0.5 * (projected + projected.transpose());

  Eigen::LDLT<Matrix> ldlt(projected);
  if (ldlt.info() != Eigen::Success ||
      std::abs(ldlt.vectorD().minCoeff()) < 1e-14)
    throw SingularProjectedSystem("subspace_solve: projected system singular");
  Vector a = ldlt.solve(sub.q.transpose() * g);

  // Out-of-subspace component of g under the projected solve; handled by
  // the hybrid model D + Q Lambda Q^T via Woodbury.
  Vector residual = g - hq * a;
  Vector u = woodbury_solve(diag_d, sub.q, sub.lambda, residual);
  return sub.q * a + u;
}

AnchorState cg_refine(AnchorState anchor, const LinearOp& apply_h, double tol,
                      int max_iters) {
  anchor.recompute_residual(apply_h);
  if (anchor.residual_norm <= tol || max_iters < 1) return anchor;

  Vector x = anchor.phi_v;
  Vector r = anchor.r_v;
  Vector p = r;
  double rs = r.squaredNorm();

  Vector best_x = x;
  Vector best_r = r;
  double best_norm = anchor.residual_norm;

  for (int it = 0; it < max_iters; ++it) {
    Vector hp = apply_h(p);
    const double php = p.dot(hp);
    if (php <= 0.0) {
      anchor.breakdown_flagged = true;
      break;
    }
    const double step = rs / php;
    x += step * p;
    r -= step * hp;
    const double rn = r.norm();
    if (rn < best_norm) {
      best_norm = rn;
      best_x = x;
      best_r = r;
    }
    if (rn <= tol) break;
    const double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }

  anchor.phi_v = std::move(best_x);
  anchor.r_v = std::move(best_r);
  anchor.residual_norm = best_norm;
  return anchor;
}

}  // namespace sgoif
