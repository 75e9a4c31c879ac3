#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sgoif/numerics.hpp"
#include "sgoif/models.hpp"
#include "sgoif/scoring.hpp"
#include "sgoif/stability.hpp"
#include "support/oracles.hpp"

using namespace sgoif;
using namespace sgoif::testing;

namespace {

AnchorBank bank_of(const std::vector<Vector>& phis,
                   const std::vector<double>& confidences) {
  AnchorBank bank;
  for (std::size_t i = 0; i < phis.size(); ++i) {
    AnchorState a = AnchorState::make(static_cast<int>(i),
                                      Vector::Zero(phis[i].size()));
    a.phi_v = phis[i];
    a.c_v = confidences[i];
    bank.anchors.push_back(std::move(a));
  }
  return bank;
}

}  // namespace

TEST_CASE("closed gate yields a flagged zero score") {
  Rng rng(3);
  AnchorBank bank = bank_of({random_vector(4, rng), random_vector(4, rng)},
                            {0.0, 0.0});
  AggregationWeights w = aggregation_weights(bank);
  InfluenceRecord rec = score_example(7, random_vector(4, rng), bank, w);
  CHECK(rec.flagged);
  CHECK(rec.aggregated == 0.0);
}

TEST_CASE("single anchor inner product") {
  AnchorBank bank = bank_of({Vector::Unit(3, 0)}, {1.0});
  AggregationWeights w = aggregation_weights(bank);
  InfluenceRecord rec = score_example(0, 2.0 * Vector::Unit(3, 0), bank, w);
  CHECK(rec.per_anchor[0] == doctest::Approx(-2.0));
  CHECK(rec.aggregated == doctest::Approx(-2.0));
  CHECK(rec.raw_inner[0] == doctest::Approx(2.0));
}

TEST_CASE("aggregated equals the weighted combination") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_index(4));
    std::vector<Vector> phis;
    std::vector<double> cs;
    for (int j = 0; j < k; ++j) {
      phis.push_back(random_vector(6, rng));
      cs.push_back(rng.uniform());
    }
    AnchorBank bank = bank_of(phis, cs);
    AggregationWeights w = aggregation_weights(bank);
    if (w.no_confidence) continue;
    InfluenceRecord rec = score_example(0, random_vector(6, rng), bank, w);
    double manual = 0.0;
    for (int j = 0; j < k; ++j)
      manual += w.w[static_cast<std::size_t>(j)] *
                rec.per_anchor[static_cast<std::size_t>(j)];
    CHECK(std::abs(rec.aggregated - manual) <= 1e-12);
  }
}

TEST_CASE("converged anchors with unit confidence recover exact influence") {
  Rng rng(7);
  const int d = 12;
  Matrix a = random_spd(d, 10.0, rng);
  Model model = Model::quadratic(a);
  Vector theta = random_vector(d, rng);

  std::vector<Vector> anchor_grads;
  std::vector<Vector> phis;
  for (int v = 0; v < 3; ++v) {
    Vector g = random_vector(d, rng);
    anchor_grads.push_back(g);
    phis.push_back(dense_solve(a, g));
  }
  AnchorBank bank = bank_of(phis, {1.0, 1.0, 1.0});
  AggregationWeights w = aggregation_weights(bank);

  Vector g_i = random_vector(d, rng);
  InfluenceRecord rec = score_example(0, g_i, bank, w);

  double expected = 0.0;
  for (int v = 0; v < 3; ++v)
    expected += w.w[static_cast<std::size_t>(v)] *
                exact_influence(model, theta, {}, anchor_grads[static_cast<std::size_t>(v)], g_i, 0.0);
  CHECK(rel_err(rec.aggregated, expected) <= 1e-6);
}

TEST_CASE("scaling every confidence leaves the ordering unchanged") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 3;
    const int n = 20;
    std::vector<Vector> phis;
    std::vector<double> cs;
    for (int j = 0; j < k; ++j) {
      phis.push_back(random_vector(5, rng));
      cs.push_back(0.1 + 0.9 * rng.uniform());
    }
    const double scale = 0.05 + 2.0 * rng.uniform();
    std::vector<double> scaled;
    for (double c : cs) scaled.push_back(std::min(1.0, scale * c));
    // Keep the scale inside [0,1] territory: rescale so no clip occurs.
    const double max_c = *std::max_element(cs.begin(), cs.end());
    const double safe_scale = std::min(scale, 1.0 / max_c);
    scaled.clear();
    for (double c : cs) scaled.push_back(safe_scale * c);

    AnchorBank bank_a = bank_of(phis, cs);
    AnchorBank bank_b = bank_of(phis, scaled);
    AggregationWeights wa = aggregation_weights(bank_a);
    AggregationWeights wb = aggregation_weights(bank_b);

    std::vector<InfluenceRecord> ra, rb;
    std::vector<Vector> grads;
    for (int i = 0; i < n; ++i) grads.push_back(random_vector(5, rng));
    for (int i = 0; i < n; ++i) {
      ra.push_back(score_example(i, grads[static_cast<std::size_t>(i)], bank_a, wa));
      rb.push_back(score_example(i, grads[static_cast<std::size_t>(i)], bank_b, wb));
    }
    auto order = [](const std::vector<InfluenceRecord>& rs) {
      std::vector<long> ids(rs.size());
      for (std::size_t i = 0; i < rs.size(); ++i) ids[i] = rs[i].example_id;
      std::sort(ids.begin(), ids.end(), [&](long x, long y) {
        const double sx = rs[static_cast<std::size_t>(x)].aggregated;
        const double sy = rs[static_cast<std::size_t>(y)].aggregated;
        if (sx != sy) return sx > sy;
        return x < y;
      });
      return ids;
    };
    CHECK(order(ra) == order(rb));
  }
}

TEST_CASE("quantile tracker nearest-rank behaviour") {
  QuantileTracker tracker(100);
  CHECK(std::isinf(tracker.quantile(0.99)));
  for (int i = 1; i <= 100; ++i) tracker.add(static_cast<double>(i));
  CHECK(tracker.quantile(0.99) == doctest::Approx(99.0));
  CHECK(tracker.quantile(0.5) == doctest::Approx(50.0));
  // Ring overwrite keeps the freshest values.
  for (int i = 0; i < 100; ++i) tracker.add(1000.0);
  CHECK(tracker.quantile(0.5) == doctest::Approx(1000.0));
}

TEST_CASE("refinement trigger needs both leverage and low confidence") {
  Rng rng(11);
  QuantileTracker tracker(100);
  for (int i = 0; i < 99; ++i) tracker.add(1.0);

  std::vector<Vector> phis{10.0 * Vector::Unit(4, 0), Vector::Unit(4, 1)};
  SUBCASE("confident anchors never trigger") {
    AnchorBank bank = bank_of(phis, {1.0, 1.0});
    AggregationWeights w = aggregation_weights(bank);
    InfluenceRecord rec = score_example(0, Vector::Unit(4, 0), bank, w);
    CHECK(refinement_trigger(rec, bank, tracker, 0.99, 0.3).empty());
  }
  SUBCASE("small scores never trigger") {
    AnchorBank bank = bank_of({0.1 * Vector::Unit(4, 0), Vector::Unit(4, 1)},
                              {0.0, 1.0});
    AggregationWeights w = aggregation_weights(bank);
    InfluenceRecord rec = score_example(0, Vector::Unit(4, 0), bank, w);
    CHECK(refinement_trigger(rec, bank, tracker, 0.99, 0.3).empty());
  }
  SUBCASE("large magnitude with low confidence triggers") {
    AnchorBank bank = bank_of(phis, {0.1, 1.0});
    AggregationWeights w = aggregation_weights(bank);
    InfluenceRecord rec = score_example(0, Vector::Unit(4, 0), bank, w);
    auto ids = refinement_trigger(rec, bank, tracker, 0.99, 0.3);
    REQUIRE(ids.size() == 1);
    CHECK(ids[0] == 0);
  }
}

TEST_CASE("bernstein interval closed form") {
  BernsteinAccumulator acc;
  acc.add(0.5);
  acc.add(0.5);
  // Degenerate deterministic probes: V = 0, and the formula keeps only the
  // range term.
  const double w0 = bernstein_interval(acc, 0.05);
  CHECK(w0 == doctest::Approx(3.0 * 0.5 * std::log(3.0 / 0.05) / 2.0));

  // m = 100, V = 1, B = 1, alpha = 0.05: direct numeric evaluation of the
  // half-width formula gives ~0.409.
  const double log_term = std::log(3.0 / 0.05);
  const double expected =
      std::sqrt(2.0 * 1.0 * log_term / 100.0) + 3.0 * 1.0 * log_term / 100.0;
  CHECK(expected == doctest::Approx(0.409).epsilon(2e-3));
}

TEST_CASE("bernstein interval shrinks with more probes") {
  Rng rng(13);
  BernsteinAccumulator acc;
  double last = std::numeric_limits<double>::infinity();
  for (int m = 1; m <= 4096; ++m) {
    acc.add(rng.uniform());
    if (m >= 2 && (m & (m - 1)) == 0) {
      const double w = bernstein_interval(acc, 0.05);
      CHECK(w < last);
      last = w;
    }
  }
}

TEST_CASE("bernstein accumulator matches direct statistics") {
  Rng rng(15);
  BernsteinAccumulator acc;
  std::vector<double> values;
  for (int i = 0; i < 500; ++i) {
    const double x = rng.normal();
    values.push_back(x);
    acc.add(x);
  }
  double mean = 0.0;
  for (double x : values) mean += x;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double x : values) var += (x - mean) * (x - mean);
  var /= static_cast<double>(values.size() - 1);
  CHECK(acc.mean() == doctest::Approx(mean).epsilon(1e-12));
  CHECK(acc.variance() == doctest::Approx(var).epsilon(1e-10));
  CHECK(acc.count() == 500);
}

TEST_CASE("insufficient probes are rejected") {
  BernsteinAccumulator acc;
  acc.add(1.0);
  CHECK_THROWS_AS(bernstein_interval(acc, 0.05), InsufficientProbes);
}

TEST_CASE("misrank bound limits") {
  // Gap barely above the bias: the bound saturates.
  CHECK(misrank_bound(1.0, 1.0 - 1e-12, 1.0, 10) ==
        doctest::Approx(1.0).epsilon(1e-6));
  CHECK(misrank_bound(0.5, 0.6, 1.0, 10) == 1.0);  // vacuous
  // Vanishing variance: deterministic ordering.
  CHECK(misrank_bound(1.0, 0.0, 0.0, 10) == 0.0);
  CHECK(misrank_bound(1.0, 0.0, 1e-8, 10) <= 1e-10);
}

TEST_CASE("misrank bound dominates Monte-Carlo flips") {
  Rng rng(17);
  const double delta = 1.0, bias = 0.2, sigma_sq = 0.5;
  const int m = 16;
  const int trials = 10000;
  int flips = 0;
  for (int t = 0; t < trials; ++t) {
    double probe_mean = 0.0;
    for (int j = 0; j < m; ++j) probe_mean += std::sqrt(sigma_sq) * rng.normal();
    probe_mean /= m;
    if (delta - bias + probe_mean <= 0.0) ++flips;
  }
  CHECK(static_cast<double>(flips) / trials <=
        misrank_bound(delta, bias, sigma_sq, m));
}

TEST_CASE("topk margin and certification") {
  std::vector<InfluenceRecord> records(3);
  for (int i = 0; i < 3; ++i) {
    records[static_cast<std::size_t>(i)].example_id = i;
    records[static_cast<std::size_t>(i)].aggregated = 3.0 - i;  // 3, 2, 1
  }
  RankingReport r = topk_report(records, 1, 0.4);
  CHECK(r.gamma_k == doctest::Approx(1.0));
  CHECK(r.order_certified);
  r = topk_report(records, 1, 0.6);
  CHECK_FALSE(r.order_certified);
  CHECK(r.top_k == std::vector<long>{0});
}

TEST_CASE("tied scores can never be certified") {
  std::vector<InfluenceRecord> records(4);
  for (int i = 0; i < 4; ++i) {
    records[static_cast<std::size_t>(i)].example_id = i;
    records[static_cast<std::size_t>(i)].aggregated = 1.0;
  }
  RankingReport r = topk_report(records, 2, 0.0);
  CHECK(r.gamma_k == 0.0);
  CHECK_FALSE(r.order_certified);
  // Deterministic id tie-breaking.
  CHECK(r.ordering == std::vector<long>{0, 1, 2, 3});
}

TEST_CASE("perturbations below half the margin keep the top set") {
  Rng rng(19);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 8 + static_cast<int>(rng.uniform_index(12));
    std::vector<InfluenceRecord> records(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      records[static_cast<std::size_t>(i)].example_id = i;
      records[static_cast<std::size_t>(i)].aggregated = rng.normal();
    }
    const int k = 1 + static_cast<int>(rng.uniform_index(
                          static_cast<std::size_t>(n - 1)));
    RankingReport base = topk_report(records, k, 0.0);
    if (!(base.gamma_k > 0.0) || std::isinf(base.gamma_k)) continue;

    std::vector<InfluenceRecord> shifted = records;
    for (auto& rec : shifted)
      rec.aggregated += 0.49 * base.gamma_k * (2.0 * rng.uniform() - 1.0);
    RankingReport moved = topk_report(shifted, k, 0.0);
    std::vector<long> a = base.top_k, b = moved.top_k;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("error budget of a perfect anchor is zero") {
  Rng rng(21);
  AnchorBank bank = bank_of({random_vector(4, rng)}, {1.0});
  bank.anchors[0].residual_norm = 0.0;
  AggregationWeights w = aggregation_weights(bank);
  InfluenceRecord rec = score_example(0, random_vector(4, rng), bank, w);
  ErrorBudget budget = error_budget(rec, 0, bank.anchors[0], 1.0, 2.0, 0.0,
                                    0.0, 0.1);
  CHECK(budget.e_solver == 0.0);
  CHECK(budget.e_conf == 0.0);
}

TEST_CASE("zero confidence pays the full leverage in E_conf") {
  Rng rng(23);
  Vector phi = random_vector(4, rng);
  AnchorBank bank = bank_of({phi, random_vector(4, rng)}, {0.0, 1.0});
  AggregationWeights w = aggregation_weights(bank);
  Vector g = random_vector(4, rng);
  InfluenceRecord rec = score_example(0, g, bank, w);
  ErrorBudget budget = error_budget(rec, 0, bank.anchors[0], 1.0, g.norm(),
                                    0.0, 0.0, 0.1);
  CHECK(budget.e_conf == doctest::Approx(std::abs(phi.dot(g))));
}

TEST_CASE("budget dominates the true error under frozen exact curvature") {
  // d = 20 quadratic with anchors solved exactly: E_curv = E_lin = 0 and
  // the observable budget must cover |I_hat - I_exact| per anchor.
  Rng rng(25);
  const int d = 20;
  Matrix a = random_spd(d, 10.0, rng);
  Model model = Model::quadratic(a);
  Vector theta = random_vector(d, rng);

  std::vector<Vector> anchor_grads;
  std::vector<Vector> phis;
  std::vector<double> cs;
  const double lam_max = power_iteration_max_eig(
      [&](const Vector& v) -> Vector { return a * v; }, d);
  for (int v = 0; v < 4; ++v) {
    Vector g = random_vector(d, rng);
    anchor_grads.push_back(g);
    // Partially solved anchors: a few Richardson sweeps, so residuals and
    // confidences are nontrivial.
    AnchorState anchor = AnchorState::make(v, g);
    for (int it = 0; it < 5 * (v + 1); ++it)
      anchor = richardson_step(std::move(anchor),
                               [&](const Vector& x) -> Vector { return a * x; }, nullptr,
                               0.9 / lam_max);
    phis.push_back(anchor.phi_v);
    cs.push_back(confidence_gate(anchor.residual_norm, 1.5));
  }
  AnchorBank bank = bank_of(phis, cs);
  for (int v = 0; v < 4; ++v) {
    bank.anchors[static_cast<std::size_t>(v)].g_v = anchor_grads[static_cast<std::size_t>(v)];
    bank.anchors[static_cast<std::size_t>(v)].recompute_residual(
        [&](const Vector& x) -> Vector { return a * x; });
  }
  const double m_bound = min_eigenvalue(a);

  AggregationWeights w = aggregation_weights(bank);
  for (int i = 0; i < 30; ++i) {
    Vector g_i = random_vector(d, rng);
    InfluenceRecord rec = score_example(i, g_i, bank, w);
    for (int v = 0; v < 4; ++v) {
      const AnchorState& anchor = bank.anchors[static_cast<std::size_t>(v)];
      const double exact = exact_influence(
          model, theta, {}, anchor.g_v, g_i, 0.0);
      const double estimated = rec.per_anchor[static_cast<std::size_t>(v)];
      ErrorBudget budget = error_budget(rec, v, anchor, m_bound, g_i.norm(),
                                        0.0, 0.0, 0.1);
      CHECK(std::abs(estimated - exact) <=
            (budget.e_solver + budget.e_conf) * (1.0 + 1e-9));
    }
  }
}
