#ifndef SGOIF_NUMERICS_HPP
#define SGOIF_NUMERICS_HPP

#include <Eigen/Dense>
#include <functional>
#include <span>

#include "sgoif/errors.hpp"
#include "sgoif/rng.hpp"

namespace sgoif {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Matrix-free linear operator.
using LinearOp = std::function<Vector(const Vector&)>;

/// Spectral bounds m <= lambda_min <= lambda_max <= M of a curvature
/// operator, with condition number kappa_H = M/m.
struct SpectralBounds {
  double m = 0.0;
  double M = 0.0;
  double kappa() const { return M / m; }
};

/// Largest matrix the dense oracle routines accept.
inline constexpr int kDenseOracleMaxDim = 2000;
/// Largest parameter count for explicit-Hessian oracles.
inline constexpr int kExplicitHessianMaxDim = 200;

void check_finite(const Vector& v, const char* what);
void check_finite(const Matrix& a, const char* what);

bool is_symmetric(const Matrix& a, double tol = 1e-12);
void check_symmetric(const Matrix& a);

/// Direct SPD solve, residual refined to ||Ax - b|| <= 1e-10 ||b||.
/// Throws NotPositiveDefinite on a non-positive pivot, DimensionMismatch
/// on shape errors.
Vector dense_solve(const Matrix& a, const Vector& b);

/// Smallest eigenvalue of a symmetric matrix (full symmetric eigensolve).
double min_eigenvalue(const Matrix& a);

/// Largest eigenvalue estimate of a symmetric positive semidefinite
/// operator by power iteration with a fixed deterministic start vector.
double power_iteration_max_eig(const LinearOp& apply, int dim,
                               int iters = 100);

/// (D + Q diag(lam) Q^T)^{-1} v via the Woodbury identity. D is the
/// elementwise-positive diagonal; columns with lam_j == 0 are inert and
/// skipped. Throws SingularPreconditioner if any D entry <= 0.
Vector woodbury_solve(const Vector& diag, const Matrix& q, const Vector& lam,
                      const Vector& v);

/// Random SPD test matrix with condition number close to `cond`:
/// Q diag(lambda) Q^T with log-spaced spectrum in [M/cond, M].
Matrix random_spd(int dim, double cond, Rng& rng, double lambda_max = 1.0);

/// Haar-ish random orthogonal matrix (QR of a Gaussian matrix).
Matrix random_orthogonal(int dim, Rng& rng);

class Model;   // model_zoo
struct Example;

/// True single-anchor influence -v^T (H + damping I)^{-1} g_z where H is
/// the model's explicit Hessian of the mean loss over `batch`. Oracle
/// path, d <= 200.
double exact_influence(const Model& model, const Vector& theta,
                       std::span<const Example> batch,
                       const Vector& anchor_grad, const Vector& example_grad,
                       double damping);

}  // namespace sgoif

#endif
