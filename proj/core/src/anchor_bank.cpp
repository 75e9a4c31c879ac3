#include "sgoif/anchor_bank.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

namespace sgoif {
namespace {

constexpr char kBankMagic[8] = {'S', 'G', 'O', 'I', 'F', 'A', 'B', '1'};

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("anchor snapshot: truncated stream");
  return value;
}

void write_vector(std::ostream& out, const Vector& v) {
  write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(sizeof(double)) * v.size());
}

Vector read_vector(std::istream& in) {
  const auto n = read_raw<std::uint64_t>(in);
  Vector v(static_cast<Eigen::Index>(n));
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(sizeof(double) * n));
  if (!in) throw IoError("anchor snapshot: truncated vector");
  return v;
}

Matrix normalized_phi_columns(const AnchorBank& bank,
                              std::vector<int>* used_ids,
                              std::vector<int>* excluded_ids) {
  std::vector<const AnchorState*> usable;
  for (const AnchorState& a : bank.anchors) {
    if (a.phi_v.size() > 0 && a.phi_v.norm() > 0.0) {
      usable.push_back(&a);
      if (used_ids) used_ids->push_back(a.anchor_id);
    } else if (excluded_ids) {
      excluded_ids->push_back(a.anchor_id);
    }
  }
  if (usable.empty()) throw AllAnchorsZero("build_gram: no usable phi column");
  Matrix phi(usable.front()->phi_v.size(),
             static_cast<Eigen::Index>(usable.size()));
  for (std::size_t j = 0; j < usable.size(); ++j)
    phi.col(static_cast<Eigen::Index>(j)) =
        usable[j]->phi_v / usable[j]->phi_v.norm();
  return phi;
}

double gram_lambda_min_of(const Matrix& phi) {
  Matrix g = phi.transpose() * phi;
  return min_eigenvalue(g);
}

}  // namespace

GramReport build_gram(const AnchorBank& bank) {
  GramReport report;
  Matrix phi = normalized_phi_columns(bank, &report.used_anchor_ids,
                                      &report.excluded_anchor_ids);
  report.g = phi.transpose() * phi;
  report.lambda_min = min_eigenvalue(report.g);
  report.bound_factor = report.lambda_min > 0.0
                            ? 1.0 / report.lambda_min
                            : std::numeric_limits<double>::infinity();
  return report;
}

Coverage coverage_check(const GramReport& report, double threshold) {
  return report.lambda_min < threshold ? Coverage::kRefreshNeeded
                                       : Coverage::kAdequate;
}

double projection_error_bound(const GramReport& report, const Vector& g,
                              std::span<const Vector> phi) {
  if (report.lambda_min <= 1e-12)
    throw SingularGram("projection_error_bound: lambda_min <= 1e-12");
  if (phi.empty()) throw Error("projection_error_bound: empty span");

  Matrix cols(g.size(), static_cast<Eigen::Index>(phi.size()));
  for (std::size_t j = 0; j < phi.size(); ++j) {
    if (phi[j].size() != g.size())
      throw DimensionMismatch("projection_error_bound: phi dim");
    cols.col(static_cast<Eigen::Index>(j)) = phi[j];
  }
  // Normal equations: P g = Phi (Phi^T Phi)^{-1} Phi^T g.
  Matrix gram = cols.transpose() * cols;
  Vector coeff = gram.ldlt().solve(cols.transpose() * g);
  const double residual_sq = (g - cols * coeff).squaredNorm();
  return residual_sq / report.lambda_min;
}

AggregationWeights aggregation_weights(const AnchorBank& bank) {
  AggregationWeights out;
  out.w.resize(bank.anchors.size(), 0.0);
  double total = 0.0;
  for (const AnchorState& a : bank.anchors) total += a.c_v;
  if (total <= 0.0) {
    out.no_confidence = true;
    return out;
  }
  for (std::size_t i = 0; i < bank.anchors.size(); ++i)
    out.w[i] = bank.anchors[i].c_v / total;
  return out;
}

ReplacementResult replace_anchors(AnchorBank& bank, const GramReport& report,
                                  const CandidateGradientFn& pool_gradient,
                                  int pool_size, const WarmStartFn& warm_start,
                                  bool coverage_triggered, Rng& rng) {
  (void)report;
  if (bank.anchors.empty()) throw Error("replace_anchors: empty bank");
  if (pool_size <= 0) return {};  // empty candidate pool: warned no-op

  // Victim: minimal confidence, ties broken by smallest anchor_id.
  std::size_t victim = 0;
  for (std::size_t i = 1; i < bank.anchors.size(); ++i) {
    const AnchorState& a = bank.anchors[i];
    const AnchorState& best = bank.anchors[victim];
    if (a.c_v < best.c_v ||
        (a.c_v == best.c_v && a.anchor_id < best.anchor_id))
      victim = i;
  }

  // Span of the surviving anchors' normalized phi columns.
  std::vector<Vector> keep;
  for (std::size_t i = 0; i < bank.anchors.size(); ++i) {
    if (i == victim) continue;
    const Vector& phi = bank.anchors[i].phi_v;
    if (phi.size() > 0 && phi.norm() > 0.0) keep.push_back(phi / phi.norm());
  }
  Matrix span(bank.anchors[victim].g_v.size(),
              static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    span.col(static_cast<Eigen::Index>(j)) = keep[j];
  Eigen::ColPivHouseholderQR<Matrix> qr;
  if (span.cols() > 0) qr.compute(span);

  const int samples = std::min(16, pool_size);
  std::vector<int> pool_idx(static_cast<std::size_t>(samples));
  for (int k = 0; k < samples; ++k)
    pool_idx[static_cast<std::size_t>(k)] =
        static_cast<int>(rng.uniform_index(static_cast<std::size_t>(pool_size)));

  struct Candidate {
    int pool_index;
    Vector grad;
    double ortho_norm;
  };
  std::vector<Candidate> candidates;
  for (int idx : pool_idx) {
    Vector grad = pool_gradient(idx);
    double ortho = grad.norm();
    if (span.cols() > 0) {
      Vector coeff = qr.solve(grad);
      ortho = (grad - span * coeff).norm();
    }
    candidates.push_back({idx, std::move(grad), ortho});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return a.ortho_norm > b.ortho_norm;
                   });

  auto install = [&](const Candidate& cand) {
    AnchorState& a = bank.anchors[victim];
    a.g_v = cand.grad;
    a.phi_v = warm_start ? warm_start(cand.grad)
                         : Vector::Zero(cand.grad.size());
    a.r_v = Vector::Zero(cand.grad.size());
    a.residual_norm = a.g_v.norm();  // refreshed on the next engine step
    a.c_v = 0.0;
    a.reset_flagged = false;
    a.breakdown_flagged = false;
  };

  auto result_for = [&](const Candidate& cand) {
    return ReplacementResult{bank.anchors[victim].anchor_id,
                             static_cast<int>(victim), cand.pool_index};
  };

  if (!coverage_triggered) {
    install(candidates.front());
    return result_for(candidates.front());
  }

  const AnchorState saved = bank.anchors[victim];
  double pre_lambda = -1.0;
  try {
    pre_lambda = build_gram(bank).lambda_min;
  } catch (const AllAnchorsZero&) {
    pre_lambda = -1.0;
  }

  // Coverage repair must not lower lambda_min(G): accept the first
  // candidate (in orthogonal-norm order) that does not degrade it, else
  // leave the bank untouched.
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    install(candidates[k]);
    double post = -1.0;
    try {
      post = build_gram(bank).lambda_min;
    } catch (const AllAnchorsZero&) {
      post = -1.0;
    }
    if (post >= pre_lambda) return result_for(candidates[k]);
    bank.anchors[victim] = saved;
  }
  return {};
}

void save_anchor_bank(const AnchorBank& bank, std::ostream& out) {
  out.write(kBankMagic, sizeof(kBankMagic));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(bank.size()));
  write_raw<std::int64_t>(out, bank.refresh_period);
  write_raw<double>(out, bank.coverage_threshold);
  for (const AnchorState& a : bank.anchors) {
    write_raw<std::int64_t>(out, a.anchor_id);
    write_vector(out, a.g_v);
    write_vector(out, a.phi_v);
    write_raw<double>(out, a.c_v);
  }
  if (!out) throw IoError("anchor bank save: write failure");
}

AnchorBank load_anchor_bank(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kBankMagic))
    throw IoError("anchor bank load: bad magic");
  AnchorBank bank;
  const auto k = read_raw<std::uint32_t>(in);
  bank.refresh_period = read_raw<std::int64_t>(in);
  bank.coverage_threshold = read_raw<double>(in);
  for (std::uint32_t i = 0; i < k; ++i) {
    const auto id = read_raw<std::int64_t>(in);
    Vector g = read_vector(in);
    AnchorState a = AnchorState::make(static_cast<int>(id), std::move(g));
    a.phi_v = read_vector(in);
    a.c_v = read_raw<double>(in);
    bank.anchors.push_back(std::move(a));
  }
  return bank;
}

}  // namespace sgoif
