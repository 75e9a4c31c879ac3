#include "sgoif/numerics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "sgoif/models.hpp"

namespace sgoif {

void check_finite(const Vector& v, const char* what) {
  if (!v.allFinite()) throw NotFinite(std::string(what) + ": non-finite entry");
}

void check_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) throw NotFinite(std::string(what) + ": non-finite entry");
}

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      const double scale = std::max(1.0, std::abs(a(i, j)));
      if (std::abs(a(i, j) - a(j, i)) > tol * scale) return false;
    }
  }
  return true;
}

void check_symmetric(const Matrix& a) {
  if (!is_symmetric(a)) throw NotSymmetric("matrix is not symmetric");
}

Vector dense_solve(const Matrix& a, const Vector& b) {
  if (a.rows() != a.cols()) throw DimensionMismatch("dense_solve: A not square");
  if (a.rows() != b.size())
    throw DimensionMismatch("dense_solve: dim(b) != A.rows");
  if (a.rows() > kDenseOracleMaxDim)
    throw Error("dense_solve: dimension exceeds dense oracle cap");
  check_finite(a, "dense_solve A");
  check_finite(b, "dense_solve b");

  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefinite("dense_solve: non-positive pivot");

  Vector x = llt.solve(b);
  // Iterative refinement until well inside the 1e-10 * ||b|| contract.
  const double target = 1e-12 * b.norm();
  for (int pass = 0; pass < 3; ++pass) {
    Vector r = b - a * x;
    if (r.norm() <= target) break;
    x += llt.solve(r);
  }
  return x;
}

double min_eigenvalue(const Matrix& a) {
  if (a.rows() != a.cols())
    throw DimensionMismatch("min_eigenvalue: matrix not square");
  if (a.rows() > kDenseOracleMaxDim)
    throw Error("min_eigenvalue: dimension exceeds dense oracle cap");
  check_finite(a, "min_eigenvalue A");
  check_symmetric(a);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

double power_iteration_max_eig(const LinearOp& apply, int dim, int iters) {
  // Fixed non-degenerate start: generically non-orthogonal to the top
  // eigenvector and independent of any rng stream.
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = std::cos(1.0 + i) + 1.1;
  v.normalize();
  double lambda = 0.0;
  for (int k = 0; k < iters; ++k) {
    Vector w = apply(v);
    const double norm = w.norm();
    if (norm == 0.0) return 0.0;
    lambda = v.dot(w);
    v = w / norm;
  }
  return std::abs(lambda);
}

Vector woodbury_solve(const Vector& diag, const Matrix& q, const Vector& lam,
                      const Vector& v) {
  if (diag.size() != v.size())
    throw DimensionMismatch("woodbury_solve: diag/v size");
  if (q.cols() != lam.size())
    throw DimensionMismatch("woodbury_solve: Q/lam size");
  if (q.cols() > 0 && q.rows() != v.size())
    throw DimensionMismatch("woodbury_solve: Q rows");
  if ((diag.array() <= 0.0).any())
    throw SingularPreconditioner("woodbury_solve: non-positive diagonal");

  Vector dinv_v = v.array() / diag.array();
  // Keep only active low-rank columns.
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < lam.size(); ++j)
    if (lam[j] != 0.0) active.push_back(j);
  if (active.empty()) return dinv_v;

  const Eigen::Index r = static_cast<Eigen::Index>(active.size());
  Matrix qa(q.rows(), r);
  Vector la(r);
  for (Eigen::Index k = 0; k < r; ++k) {
    qa.col(k) = q.col(active[static_cast<std::size_t>(k)]);
    la[k] = lam[active[static_cast<std::size_t>(k)]];
  }

  // (D + Q L Q^T)^{-1} = D^{-1} - D^{-1} Q (L^{-1} + Q^T D^{-1} Q)^{-1} Q^T D^{-1}
  Matrix dinv_q = qa.array().colwise() / diag.array();
  Matrix cap = dinv_q.transpose() * qa;
  for (Eigen::Index k = 0; k < r; ++k) cap(k, k) += 1.0 / la[k];
  Vector y = cap.ldlt().solve(qa.transpose() * dinv_v);
  return dinv_v - dinv_q * y;
}

Matrix random_orthogonal(int dim, Rng& rng) {
  Matrix g(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  // Fix signs so the factorization is unique given the draw.
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  return q;
}

Matrix random_spd(int dim, double cond, Rng& rng, double lambda_max) {
  Matrix q = random_orthogonal(dim, rng);
  Vector lambda(dim);
  const double lo = lambda_max / cond;
  for (int i = 0; i < dim; ++i) {
    const double t = dim == 1 ? 0.0 : static_cast<double>(i) / (dim - 1);
    lambda[i] = lo * std::pow(cond, t);
  }
  return q * lambda.asDiagonal() * q.transpose();
}

double exact_influence(const Model& model, const Vector& theta,
                       std::span<const Example> batch,
                       const Vector& anchor_grad, const Vector& example_grad,
                       double damping) {
  if (theta.size() != model.dim() || anchor_grad.size() != model.dim() ||
      example_grad.size() != model.dim())
    throw DimensionMismatch("exact_influence: vector dims");
  if (model.dim() > kExplicitHessianMaxDim)
    throw Error("exact_influence: dim exceeds explicit-Hessian cap");
  if (damping < 0.0) throw Error("exact_influence: negative damping");

  Matrix h = model.explicit_hessian(theta, batch);
  h.diagonal().array() += damping;
  // dense_solve raises NotPositiveDefinite when damping is insufficient;
  // the caller must retry with a larger value.
  Vector x = dense_solve(h, example_grad);
  return -anchor_grad.dot(x);
}

}  // namespace sgoif
