#ifndef SGOIF_CURVATURE_HPP
#define SGOIF_CURVATURE_HPP

#include <iosfwd>
#include <span>

#include "sgoif/numerics.hpp"

namespace sgoif {

enum class Backend {
  kDiagonal = 0,
  kEmpiricalFisher = 1,
  kKfacBlocks = 2,
  kLowrankPlusDiag = 3,
};

Backend backend_from_string(const std::string& name);
const char* backend_name(Backend b);

/// Layer shapes needed to slice flat MLP gradients into per-layer blocks
/// (bias columns folded in as homogeneous coordinates).
struct KfacLayout {
  int feature_dim = 0;
  int hidden = 0;
  int classes = 0;

  int dim() const {
    return hidden * feature_dim + hidden + classes * hidden + classes;
  }
};

/// Structured curvature surrogate H_t = alpha I + Delta_t with one of four
/// Delta parameterizations. All backends expose the same operator surface:
/// exact apply for the surrogate's own state, a diagonal (or Woodbury)
/// preconditioner inverse, and cheap spectral estimates.
class CurvatureSurrogate {
 public:
  static CurvatureSurrogate diagonal(int dim, double alpha);
  static CurvatureSurrogate empirical_fisher(int dim, double alpha);
  static CurvatureSurrogate kfac(const KfacLayout& layout, double alpha);
  static CurvatureSurrogate lowrank_plus_diag(int dim, double alpha);

  Backend backend() const { return backend_; }
  int dim() const { return dim_; }
  double alpha() const { return alpha_; }
  long step_of_last_update() const { return step_of_last_update_; }
  bool updated() const { return step_of_last_update_ >= 0; }

  /// Fold one minibatch of per-example gradients into the running
  /// curvature estimate (EMA decay 0.95). Throws BackendMismatch when the
  /// gradient layout does not match the kfac layer structure.
  void update(std::span<const Vector> batch_grads, long step);

  /// Low-rank subspace handoff from the IHVP engine (lowrank backend
  /// only; silently ignored by the others).
  void set_subspace(const Matrix& q, const Vector& lambda);

  /// H_t v, exact for the surrogate's current state.
  Vector apply(const Vector& v) const;

  /// Delta_t v = (H_t - alpha I) v.
  Vector delta_apply(const Vector& v) const;

  /// P^{-1} v. P is the diagonal part of the surrogate except for the
  /// lowrank backend which inverts D + Q Lambda Q^T by Woodbury.
  Vector precond_apply(const Vector& v) const;

  /// Condition proxy Gamma_t >= 1: max/min ratio of the effective
  /// diagonal, or lambda_max/alpha for the dense Fisher path.
  double condition_proxy() const;

  /// m = alpha (damping floor), M = 1.1 x power-iteration estimate.
  SpectralBounds spectral_bounds() const;

  /// Diagonal of the effective operator (preconditioner source).
  Vector effective_diagonal() const;

  bool fisher_is_dense() const { return fisher_dense_path_; }
  const Matrix& subspace_q() const { return lowrank_q_; }
  const Vector& subspace_lambda() const { return lowrank_lambda_; }

  // Checkpoint snapshot, 8-byte magic "SGOIFCB1", length-prefixed
  // little-endian arrays.
  void save(std::ostream& out) const;
  static CurvatureSurrogate load(std::istream& in);

  /// Dense Fisher state above this dimension falls back to the diagonal.
  static constexpr int kFisherDenseMaxDim = 500;

 private:
  CurvatureSurrogate() = default;
  void update_diag_ema(std::span<const Vector> grads);

  Backend backend_ = Backend::kDiagonal;
  int dim_ = 0;
  double alpha_ = 1e-3;
  long step_of_last_update_ = -1;
  long update_count_ = 0;

  /// Warmup bias correction 1 / (1 - decay^k) applied at read time so the
  /// first few updates already carry the right scale.
  double ema_correction() const;

  Vector diag_ema_;  // diagonal / lowrank D / fisher fallback

  bool fisher_dense_path_ = false;
  Matrix fisher_;

  KfacLayout kfac_layout_;
  Matrix kfac_a1_, kfac_g1_, kfac_a2_, kfac_g2_;
  double kfac_s1_ = 0.0, kfac_s2_ = 0.0;

  Matrix lowrank_q_;
  Vector lowrank_lambda_;
};

}  // namespace sgoif

#endif
