#include "sgoif/curvature.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>

namespace sgoif {
namespace {

constexpr double kEmaDecay = 0.95;
constexpr char kSurrogateMagic[8] = {'S', 'G', 'O', 'I', 'F', 'C', 'B', '1'};

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("surrogate snapshot: truncated stream");
  return value;
}

void write_array(std::ostream& out, const double* data, std::size_t count) {
  write_raw<std::uint64_t>(out, count);
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
}

void read_array(std::istream& in, double* data, std::size_t expected) {
  const auto count = read_raw<std::uint64_t>(in);
  if (count != expected) throw IoError("surrogate snapshot: bad array length");
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw IoError("surrogate snapshot: truncated array");
}

}  // namespace

Backend backend_from_string(const std::string& name) {
  if (name == "diagonal") return Backend::kDiagonal;
  if (name == "empirical-fisher") return Backend::kEmpiricalFisher;
  if (name == "kfac-blocks") return Backend::kKfacBlocks;
  if (name == "lowrank-plus-diag") return Backend::kLowrankPlusDiag;
  throw ConfigInvalid("unknown curvature backend: " + name);
}

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::kDiagonal: return "diagonal";
    case Backend::kEmpiricalFisher: return "empirical-fisher";
    case Backend::kKfacBlocks: return "kfac-blocks";
    case Backend::kLowrankPlusDiag: return "lowrank-plus-diag";
  }
  return "?";
}

double CurvatureSurrogate::ema_correction() const {
  if (update_count_ <= 0) return 1.0;
  return 1.0 / (1.0 - std::pow(kEmaDecay, static_cast<double>(update_count_)));
}

CurvatureSurrogate CurvatureSurrogate::diagonal(int dim, double alpha) {
  if (dim < 1 || alpha <= 0.0) throw Error("diagonal surrogate: bad shape");
  CurvatureSurrogate s;
  s.backend_ = Backend::kDiagonal;
  s.dim_ = dim;
  s.alpha_ = alpha;
  s.diag_ema_ = Vector::Zero(dim);
  return s;
}

CurvatureSurrogate CurvatureSurrogate::empirical_fisher(int dim,
                                                        double alpha) {
  if (dim < 1 || alpha <= 0.0) throw Error("fisher surrogate: bad shape");
  CurvatureSurrogate s;
  s.backend_ = Backend::kEmpiricalFisher;
  s.dim_ = dim;
  s.alpha_ = alpha;
  s.fisher_dense_path_ = dim <= kFisherDenseMaxDim;
  if (s.fisher_dense_path_)
    s.fisher_ = Matrix::Zero(dim, dim);
  else
    s.diag_ema_ = Vector::Zero(dim);
  return s;
}

CurvatureSurrogate CurvatureSurrogate::kfac(const KfacLayout& layout,
                                            double alpha) {
  if (layout.feature_dim < 1 || layout.hidden < 1 || layout.classes < 2)
    throw Error("kfac surrogate: bad layout");
  if (alpha <= 0.0) throw Error("kfac surrogate: bad alpha");
  CurvatureSurrogate s;
  s.backend_ = Backend::kKfacBlocks;
  s.dim_ = layout.dim();
  s.alpha_ = alpha;
  s.kfac_layout_ = layout;
  s.kfac_a1_ = Matrix::Zero(layout.feature_dim + 1, layout.feature_dim + 1);
  s.kfac_g1_ = Matrix::Zero(layout.hidden, layout.hidden);
  s.kfac_a2_ = Matrix::Zero(layout.hidden + 1, layout.hidden + 1);
  s.kfac_g2_ = Matrix::Zero(layout.classes, layout.classes);
  return s;
}

CurvatureSurrogate CurvatureSurrogate::lowrank_plus_diag(int dim,
                                                         double alpha) {
  if (dim < 1 || alpha <= 0.0) throw Error("lowrank surrogate: bad shape");
  CurvatureSurrogate s;
  s.backend_ = Backend::kLowrankPlusDiag;
  s.dim_ = dim;
  s.alpha_ = alpha;
  s.diag_ema_ = Vector::Zero(dim);
  s.lowrank_q_ = Matrix::Zero(dim, 0);
  s.lowrank_lambda_ = Vector::Zero(0);
  return s;
}

void CurvatureSurrogate::update_diag_ema(std::span<const Vector> grads) {
  Vector msq = Vector::Zero(dim_);
  for (const Vector& g : grads) msq += g.cwiseProduct(g);
  msq /= static_cast<double>(grads.size());
  diag_ema_ = kEmaDecay * diag_ema_ + (1.0 - kEmaDecay) * msq;
}

void CurvatureSurrogate::update(std::span<const Vector> batch_grads,
                                long step) {
  if (batch_grads.empty()) throw Error("surrogate update: empty batch");
  for (const Vector& g : batch_grads) {
    if (g.size() == dim_) continue;
    if (backend_ == Backend::kKfacBlocks)
      throw BackendMismatch(
          "gradient layout does not match kfac layer structure");
    throw DimensionMismatch("surrogate update: gradient dim");
  }

  switch (backend_) {
    case Backend::kDiagonal:
    case Backend::kLowrankPlusDiag:
      update_diag_ema(batch_grads);
      break;
    case Backend::kEmpiricalFisher: {
      if (!fisher_dense_path_) {
        update_diag_ema(batch_grads);
        break;
      }
      Matrix outer = Matrix::Zero(dim_, dim_);
      for (const Vector& g : batch_grads) outer.noalias() += g * g.transpose();
      outer /= static_cast<double>(batch_grads.size());
      fisher_ = kEmaDecay * fisher_ + (1.0 - kEmaDecay) * outer;
      break;
    }
    case Backend::kKfacBlocks: {
      const int p = kfac_layout_.feature_dim;
      const int h = kfac_layout_.hidden;
      const int c = kfac_layout_.classes;
      Matrix a1 = Matrix::Zero(p + 1, p + 1);
      Matrix g1 = Matrix::Zero(h, h);
      Matrix a2 = Matrix::Zero(h + 1, h + 1);
      Matrix g2 = Matrix::Zero(c, c);
      double s1 = 0.0, s2 = 0.0;
      for (const Vector& g : batch_grads) {
        // Layer blocks with the bias column folded in.
        Matrix b1(h, p + 1);
        b1.leftCols(p) =
            Eigen::Map<const RowMat>(g.data(), h, p);
        b1.col(p) = Eigen::Map<const Vector>(g.data() + h * p, h);
        Matrix b2(c, h + 1);
        b2.leftCols(h) =
            Eigen::Map<const RowMat>(g.data() + h * p + h, c, h);
        b2.col(h) = Eigen::Map<const Vector>(g.data() + h * p + h + c * h, c);
        a1.noalias() += b1.transpose() * b1;
        g1.noalias() += b1 * b1.transpose();
        s1 += b1.squaredNorm();
        a2.noalias() += b2.transpose() * b2;
        g2.noalias() += b2 * b2.transpose();
        s2 += b2.squaredNorm();
      }
      const double inv_b = 1.0 / static_cast<double>(batch_grads.size());
      kfac_a1_ = kEmaDecay * kfac_a1_ + (1.0 - kEmaDecay) * inv_b * a1;
      kfac_g1_ = kEmaDecay * kfac_g1_ + (1.0 - kEmaDecay) * inv_b * g1;
      kfac_a2_ = kEmaDecay * kfac_a2_ + (1.0 - kEmaDecay) * inv_b * a2;
      kfac_g2_ = kEmaDecay * kfac_g2_ + (1.0 - kEmaDecay) * inv_b * g2;
      kfac_s1_ = kEmaDecay * kfac_s1_ + (1.0 - kEmaDecay) * inv_b * s1;
      kfac_s2_ = kEmaDecay * kfac_s2_ + (1.0 - kEmaDecay) * inv_b * s2;
      break;
    }
  }
  step_of_last_update_ = step;
  update_count_ += 1;
}

void CurvatureSurrogate::set_subspace(const Matrix& q, const Vector& lambda) {
  if (backend_ != Backend::kLowrankPlusDiag) return;
  if (q.cols() != lambda.size())
    throw DimensionMismatch("set_subspace: Q/lambda mismatch");
  if (q.cols() > 0) {
    if (q.rows() != dim_) throw DimensionMismatch("set_subspace: Q rows");
    Matrix gram = q.transpose() * q;
    gram.diagonal().array() -= 1.0;
    if (gram.norm() > 1e-8)
      throw Error("set_subspace: columns not orthonormal");
  }
  lowrank_q_ = q;
  // The handoff carries Rayleigh values of the full operator; store the
  // excess over the diagonal so D + Q Lambda Q^T does not double-count
  // curvature mass already present in D.
  Vector d = (ema_correction() * diag_ema_.array() + alpha_).matrix();
  Vector excess(lambda.size());
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    const double diag_mass = q.col(j).cwiseAbs2().dot(d);
    excess[j] = std::max(lambda[j] - diag_mass, 0.0);
  }
  lowrank_lambda_ = excess;
}

Vector CurvatureSurrogate::delta_apply(const Vector& v) const {
  return apply(v) - alpha_ * v;
}

Vector CurvatureSurrogate::apply(const Vector& v) const {
  if (v.size() != dim_) throw DimensionMismatch("surrogate apply: dim");
  const double corr = ema_correction();
  switch (backend_) {
    case Backend::kDiagonal:
      return (corr * diag_ema_.array() + alpha_).matrix().cwiseProduct(v);
    case Backend::kEmpiricalFisher:
      if (!fisher_dense_path_)
        return (corr * diag_ema_.array() + alpha_).matrix().cwiseProduct(v);
      return corr * (fisher_ * v) + alpha_ * v;
    case Backend::kLowrankPlusDiag: {
      Vector out = (corr * diag_ema_.array() + alpha_).matrix().cwiseProduct(v);
      if (lowrank_q_.cols() > 0)
        out.noalias() += lowrank_q_ * lowrank_lambda_.cwiseProduct(
                                          lowrank_q_.transpose() * v);
      return out;
    }
    case Backend::kKfacBlocks: {
      const int p = kfac_layout_.feature_dim;
      const int h = kfac_layout_.hidden;
      const int c = kfac_layout_.classes;
      Vector out = alpha_ * v;
      if (kfac_s1_ > 0.0) {
        Matrix v1(h, p + 1);
        v1.leftCols(p) = Eigen::Map<const RowMat>(v.data(), h, p);
        v1.col(p) = Eigen::Map<const Vector>(v.data() + h * p, h);
        Matrix o1 = corr * (kfac_g1_ * v1 * kfac_a1_) / kfac_s1_;
        Eigen::Map<RowMat>(out.data(), h, p) +=
            o1.leftCols(p);
        Eigen::Map<Vector>(out.data() + h * p, h) += o1.col(p);
      }
      if (kfac_s2_ > 0.0) {
        Matrix v2(c, h + 1);
        v2.leftCols(h) = Eigen::Map<const RowMat>(v.data() + h * p + h, c, h);
        v2.col(h) = Eigen::Map<const Vector>(v.data() + h * p + h + c * h, c);
        Matrix o2 = corr * (kfac_g2_ * v2 * kfac_a2_) / kfac_s2_;
        Eigen::Map<RowMat>(out.data() + h * p + h, c, h) += o2.leftCols(h);
        Eigen::Map<Vector>(out.data() + h * p + h + c * h, c) += o2.col(h);
      }
      return out;
    }
  }
  return v;
}

Vector CurvatureSurrogate::effective_diagonal() const {
  const double corr = ema_correction();
  switch (backend_) {
    case Backend::kDiagonal:
      return (corr * diag_ema_.array() + alpha_).matrix();
    case Backend::kEmpiricalFisher:
      if (!fisher_dense_path_)
        return (corr * diag_ema_.array() + alpha_).matrix();
      return (corr * fisher_.diagonal().array() + alpha_).matrix();
    case Backend::kLowrankPlusDiag: {
      Vector d = (corr * diag_ema_.array() + alpha_).matrix();
      if (lowrank_q_.cols() > 0)
        d += (lowrank_q_.array().square().matrix() * lowrank_lambda_);
      return d;
    }
    case Backend::kKfacBlocks: {
      const int p = kfac_layout_.feature_dim;
      const int h = kfac_layout_.hidden;
      const int c = kfac_layout_.classes;
      Vector d = Vector::Constant(dim_, alpha_);
      if (kfac_s1_ > 0.0) {
        Matrix o1 = corr *
            (kfac_g1_.diagonal() * kfac_a1_.diagonal().transpose()) / kfac_s1_;
        Eigen::Map<RowMat>(d.data(), h, p) += o1.leftCols(p);
        Eigen::Map<Vector>(d.data() + h * p, h) += o1.col(p);
      }
      if (kfac_s2_ > 0.0) {
        Matrix o2 = corr *
            (kfac_g2_.diagonal() * kfac_a2_.diagonal().transpose()) / kfac_s2_;
        Eigen::Map<RowMat>(d.data() + h * p + h, c, h) += o2.leftCols(h);
        Eigen::Map<Vector>(d.data() + h * p + h + c * h, c) += o2.col(h);
      }
      return d;
    }
  }
  return Vector::Constant(dim_, alpha_);
}

Vector CurvatureSurrogate::precond_apply(const Vector& v) const {
  if (v.size() != dim_) throw DimensionMismatch("precond apply: dim");
  if (backend_ == Backend::kLowrankPlusDiag) {
    Vector d = (ema_correction() * diag_ema_.array() + alpha_).matrix();
    return woodbury_solve(d, lowrank_q_, lowrank_lambda_, v);
  }
  Vector d = effective_diagonal();
  if ((d.array() <= 0.0).any())
    throw SingularPreconditioner("precond_apply: non-positive diagonal entry");
  return v.array() / d.array();
}

double CurvatureSurrogate::condition_proxy() const {
  if (!updated()) throw Error("condition_proxy: surrogate never updated");
  if (backend_ == Backend::kEmpiricalFisher && fisher_dense_path_) {
    const double lmax = power_iteration_max_eig(
        [this](const Vector& v) { return apply(v); }, dim_);
    return std::max(1.0, lmax / alpha_);
  }
  Vector d = effective_diagonal();
  return std::max(1.0, d.maxCoeff() / d.minCoeff());
}

SpectralBounds CurvatureSurrogate::spectral_bounds() const {
  if (!updated()) throw Error("spectral_bounds: surrogate never updated");
  const double est = power_iteration_max_eig(
      [this](const Vector& v) { return apply(v); }, dim_);
  return SpectralBounds{alpha_, 1.1 * std::max(est, alpha_)};
}

void CurvatureSurrogate::save(std::ostream& out) const {
  out.write(kSurrogateMagic, sizeof(kSurrogateMagic));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(backend_));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  write_raw<double>(out, alpha_);
  write_raw<std::int64_t>(out, step_of_last_update_);
  write_raw<std::int64_t>(out, update_count_);
  switch (backend_) {
    case Backend::kDiagonal:
      write_array(out, diag_ema_.data(), static_cast<std::size_t>(dim_));
      break;
    case Backend::kEmpiricalFisher:
      write_raw<std::uint8_t>(out, fisher_dense_path_ ? 1 : 0);
      if (fisher_dense_path_)
        write_array(out, fisher_.data(),
                    static_cast<std::size_t>(dim_) * dim_);
      else
        write_array(out, diag_ema_.data(), static_cast<std::size_t>(dim_));
      break;
    case Backend::kKfacBlocks: {
      write_raw<std::uint32_t>(out,
                               static_cast<std::uint32_t>(kfac_layout_.feature_dim));
      write_raw<std::uint32_t>(out,
                               static_cast<std::uint32_t>(kfac_layout_.hidden));
      write_raw<std::uint32_t>(out,
                               static_cast<std::uint32_t>(kfac_layout_.classes));
      for (const Matrix* m : {&kfac_a1_, &kfac_g1_, &kfac_a2_, &kfac_g2_})
        write_array(out, m->data(), static_cast<std::size_t>(m->size()));
      write_raw<double>(out, kfac_s1_);
      write_raw<double>(out, kfac_s2_);
      break;
    }
    case Backend::kLowrankPlusDiag: {
      write_array(out, diag_ema_.data(), static_cast<std::size_t>(dim_));
      write_raw<std::uint32_t>(out,
                               static_cast<std::uint32_t>(lowrank_q_.cols()));
      write_array(out, lowrank_q_.data(),
                  static_cast<std::size_t>(lowrank_q_.size()));
      write_array(out, lowrank_lambda_.data(),
                  static_cast<std::size_t>(lowrank_lambda_.size()));
      break;
    }
  }
  if (!out) throw IoError("surrogate save: write failure");
}

CurvatureSurrogate CurvatureSurrogate::load(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kSurrogateMagic))
    throw IoError("surrogate load: bad magic");
  const auto backend = static_cast<Backend>(read_raw<std::uint32_t>(in));
  const int dim = static_cast<int>(read_raw<std::uint32_t>(in));
  const double alpha = read_raw<double>(in);
  const auto step = read_raw<std::int64_t>(in);
  const auto updates = read_raw<std::int64_t>(in);

  CurvatureSurrogate s;
  switch (backend) {
    case Backend::kDiagonal:
      s = diagonal(dim, alpha);
      read_array(in, s.diag_ema_.data(), static_cast<std::size_t>(dim));
      break;
    case Backend::kEmpiricalFisher: {
      s = empirical_fisher(dim, alpha);
      const bool dense = read_raw<std::uint8_t>(in) != 0;
      if (dense != s.fisher_dense_path_)
        throw IoError("surrogate load: fisher path mismatch");
      if (dense)
        read_array(in, s.fisher_.data(), static_cast<std::size_t>(dim) * dim);
      else
        read_array(in, s.diag_ema_.data(), static_cast<std::size_t>(dim));
      break;
    }
    case Backend::kKfacBlocks: {
      KfacLayout layout;
      layout.feature_dim = static_cast<int>(read_raw<std::uint32_t>(in));
      layout.hidden = static_cast<int>(read_raw<std::uint32_t>(in));
      layout.classes = static_cast<int>(read_raw<std::uint32_t>(in));
      s = kfac(layout, alpha);
      if (s.dim_ != dim) throw IoError("surrogate load: kfac dim mismatch");
      for (Matrix* m : {&s.kfac_a1_, &s.kfac_g1_, &s.kfac_a2_, &s.kfac_g2_})
        read_array(in, m->data(), static_cast<std::size_t>(m->size()));
      s.kfac_s1_ = read_raw<double>(in);
      s.kfac_s2_ = read_raw<double>(in);
      break;
    }
    case Backend::kLowrankPlusDiag: {
      s = lowrank_plus_diag(dim, alpha);
      read_array(in, s.diag_ema_.data(), static_cast<std::size_t>(dim));
      const int r = static_cast<int>(read_raw<std::uint32_t>(in));
      s.lowrank_q_.resize(dim, r);
      read_array(in, s.lowrank_q_.data(),
                 static_cast<std::size_t>(dim) * static_cast<std::size_t>(r));
      s.lowrank_lambda_.resize(r);
      read_array(in, s.lowrank_lambda_.data(), static_cast<std::size_t>(r));
      break;
    }
    default:
      throw IoError("surrogate load: unknown backend tag");
  }
  s.step_of_last_update_ = step;
  s.update_count_ = updates;
  return s;
}

}  // namespace sgoif
