#include <algorithm>
#include <cmath>

#include "sgoif/harness.hpp"
#include "sgoif/ihvp.hpp"
#include "sgoif/scoring.hpp"
#include "sgoif/stability.hpp"

namespace sgoif {
namespace {

void track(OracleCheckEntry& entry, double bound, double measured) {
  entry.total += 1;
  const double slack = bound - measured;
  if (entry.total == 1 || slack < entry.worst_slack)
    entry.worst_slack = slack;
  if (measured > bound) entry.failures += 1;
}

// Residual bound ||H^{-1}g - phi|| <= ||r|| / m along preconditioned
// Richardson trajectories on random SPD instances, m = exact lambda_min.
OracleCheckEntry residual_bound_suite(Rng& rng) {
  OracleCheckEntry entry{"residual-bound", 0, 0, 0.0};
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 5 + static_cast<int>(rng.uniform_index(46));
    Matrix h = random_spd(d, 50.0, rng);
    Vector g(d);
    for (int i = 0; i < d; ++i) g[i] = rng.normal();
    const double m = min_eigenvalue(h);
    Vector exact = dense_solve(h, g);

    Vector diag = h.diagonal();
    LinearOp apply = [&](const Vector& v) -> Vector { return h * v; };
    LinearOp precond = [&](const Vector& v) -> Vector {
      return v.array() / diag.array();
    };
    const double rho =
        0.9 / power_iteration_max_eig(
                  [&](const Vector& v) -> Vector {
                    return (h * v).array() / diag.array();
                  },
                  d);
    AnchorState anchor = AnchorState::make(trial, g);
    for (int it = 0; it < 50; ++it) {
      anchor = richardson_step(std::move(anchor), apply, precond, rho);
      track(entry, residual_error_bound(anchor.residual_norm, m),
            (exact - anchor.phi_v).norm());
    }
  }
  return entry;
}

// Truncated Neumann error vs the analytic bound across K orders on
// diagonal surrogates with q < 1.
OracleCheckEntry neumann_bound_suite(Rng& rng) {
  OracleCheckEntry entry{"neumann-bound", 0, 0, 0.0};
  const int orders[] = {0, 1, 2, 5, 10};
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 5 + static_cast<int>(rng.uniform_index(26));
    const double alpha = 0.5 + rng.uniform();
    CurvatureSurrogate s = CurvatureSurrogate::diagonal(d, alpha);
    // One saturating gradient batch keeps q = ||Delta|| / alpha < 1.
    std::vector<Vector> grads;
    Vector g0(d);
    for (int i = 0; i < d; ++i)
      g0[i] = std::sqrt(0.8 * alpha * rng.uniform());
    grads.push_back(g0);
    for (int rep = 0; rep < 400; ++rep) s.update(grads, rep);

    Vector g(d);
    for (int i = 0; i < d; ++i) g[i] = rng.normal();
    Vector exact = g.array() / s.effective_diagonal().array();

    for (int k : orders) {
      auto [approx, bound] = neumann_ihvp(g, s, k);
      track(entry, bound, (exact - approx).norm());
    }
  }
  return entry;
}

// Projection lemma: direct squared projection residual <= bound.
OracleCheckEntry projection_bound_suite(Rng& rng) {
  OracleCheckEntry entry{"projection-bound", 0, 0, 0.0};
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 8 + static_cast<int>(rng.uniform_index(25));
    const int k = 2 + static_cast<int>(rng.uniform_index(5));
    AnchorBank bank;
    std::vector<Vector> phi;
    for (int j = 0; j < k; ++j) {
      Vector col(d);
      for (int i = 0; i < d; ++i) col[i] = rng.normal();
      AnchorState a = AnchorState::make(j, Vector::Zero(d));
      a.phi_v = col;
      bank.anchors.push_back(std::move(a));
      phi.push_back(col / col.norm());
    }
    GramReport report = build_gram(bank);
    if (report.lambda_min <= 1e-12) continue;
    Vector x(d);
    for (int i = 0; i < d; ++i) x[i] = rng.normal();

    const double bound = projection_error_bound(report, x, phi);
    Matrix cols(d, k);
    for (int j = 0; j < k; ++j) cols.col(j) = phi[static_cast<std::size_t>(j)];
    Vector coeff =
        (cols.transpose() * cols).ldlt().solve(cols.transpose() * x);
    const double direct = (x - cols * coeff).squaredNorm();
    track(entry, bound, direct);
  }
  return entry;
}

// Empirical-Bernstein coverage on bounded iid probes at alpha = 0.05.
OracleCheckEntry bernstein_coverage_suite(Rng& rng) {
  OracleCheckEntry entry{"bernstein-coverage", 1, 0, 0.0};
  const int replications = 2000;
  const int m = 60;
  const double true_mean = 0.5;
  int covered = 0;
  for (int rep = 0; rep < replications; ++rep) {
    BernsteinAccumulator acc;
    for (int j = 0; j < m; ++j) acc.add(rng.uniform());  // mean 1/2, B <= 1
    const double w = bernstein_interval(acc, 0.05);
    if (std::abs(acc.mean() - true_mean) <= w) ++covered;
  }
  const double coverage =
      static_cast<double>(covered) / static_cast<double>(replications);
  entry.worst_slack = coverage - 0.93;
  if (coverage < 0.93) entry.failures = 1;
  return entry;
}

// Monte-Carlo pairwise flip frequency vs the misranking bound on a grid.
OracleCheckEntry misrank_bound_suite(Rng& rng) {
  OracleCheckEntry entry{"misrank-bound", 0, 0, 0.0};
  const double deltas[] = {0.5, 1.0, 2.0};
  const double biases[] = {0.0, 0.1, 0.25};
  const double sigmas[] = {0.25, 1.0};
  const int ms[] = {8, 32, 128};
  for (double delta : deltas) {
    for (double bias : biases) {
      for (double sigma_sq : sigmas) {
        for (int m : ms) {
          const double bound = misrank_bound(delta, bias, sigma_sq, m);
          int flips = 0;
          const int trials = 10000;
          for (int trial = 0; trial < trials; ++trial) {
            // Worst-case bias pushes the estimate down by exactly b.
            double mean_probe = 0.0;
            for (int j = 0; j < m; ++j)
              mean_probe += std::sqrt(sigma_sq) * rng.normal();
            mean_probe /= static_cast<double>(m);
            const double estimate = delta - bias + mean_probe;
            if (estimate <= 0.0) ++flips;
          }
          track(entry, bound,
                static_cast<double>(flips) / static_cast<double>(trials));
        }
      }
    }
  }
  return entry;
}

// Top-K preservation: perturbations below gamma_K / 2 never change the set.
OracleCheckEntry topk_preservation_suite(Rng& rng) {
  OracleCheckEntry entry{"topk-preservation", 0, 0, 0.0};
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 10 + static_cast<int>(rng.uniform_index(30));
    std::vector<InfluenceRecord> records(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      records[static_cast<std::size_t>(i)].example_id = i;
      records[static_cast<std::size_t>(i)].aggregated = rng.normal();
    }
    const int k = 1 + static_cast<int>(rng.uniform_index(
                          static_cast<std::size_t>(n - 1)));
    RankingReport base = topk_report(records, k, 0.0);
    if (!(base.gamma_k > 0.0) || !std::isfinite(base.gamma_k)) continue;

    const double eps = 0.49 * base.gamma_k;
    std::vector<InfluenceRecord> perturbed = records;
    for (auto& r : perturbed) r.aggregated += eps * (2.0 * rng.uniform() - 1.0);
    RankingReport shifted = topk_report(perturbed, k, 0.0);

    std::vector<long> a = base.top_k;
    std::vector<long> b = shifted.top_k;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    track(entry, 0.5, a == b ? 0.0 : 1.0);
  }
  return entry;
}

// Gate closed forms over random inputs (exact identities).
OracleCheckEntry gate_identity_suite(Rng& rng) {
  OracleCheckEntry entry{"gate-identities", 0, 0, 0.0};
  for (int trial = 0; trial < 1000; ++trial) {
    const double eta = rng.uniform();
    const double gbar = 10.0 * rng.uniform();
    const double lw = rng.uniform();
    const long n = 1 + static_cast<long>(rng.uniform_index(10000));
    const double g1 = 2.0 * rng.uniform();
    const double g2 = 2.0 * rng.uniform();
    const double beta = stability_proxy(eta, gbar, lw, n, g1, g2);
    const double expected =
        g1 * eta * gbar / static_cast<double>(n) + g2 * lw / static_cast<double>(n);
    track(entry, 0.0, std::abs(beta - expected));

    const double gamma = 1.0 + 10.0 * rng.uniform();
    const double kappa = 100.0 * rng.uniform();
    track(entry, 0.0,
          std::abs(tolerance(beta, gamma, kappa) - kappa * beta * gamma));

    const double r = 2.0 * rng.uniform();
    const double tau = rng.uniform();
    const double c = confidence_gate(r, tau);
    const double manual = std::clamp(1.0 - r / tau, 0.0, 1.0);
    track(entry, 0.0, tau > 0.0 ? std::abs(c - manual) : 0.0);
  }
  return entry;
}

}  // namespace

OracleCheckReport oracle_check(std::uint64_t seed) {
  Rng rng(seed);
  OracleCheckReport report;
  Rng r1 = rng.fork(1);
  report.entries.push_back(residual_bound_suite(r1));
  Rng r2 = rng.fork(2);
  report.entries.push_back(neumann_bound_suite(r2));
  Rng r3 = rng.fork(3);
  report.entries.push_back(projection_bound_suite(r3));
  Rng r4 = rng.fork(4);
  report.entries.push_back(bernstein_coverage_suite(r4));
  Rng r5 = rng.fork(5);
  report.entries.push_back(misrank_bound_suite(r5));
  Rng r6 = rng.fork(6);
  report.entries.push_back(topk_preservation_suite(r6));
  Rng r7 = rng.fork(7);
  report.entries.push_back(gate_identity_suite(r7));
  return report;
}

}  // namespace sgoif
