#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sgoif/metrics.hpp"
#include "sgoif/rng.hpp"

using namespace sgoif;

namespace {

// Exhaustive threshold-sweep average precision, the independent oracle for
// the discrete-sum implementation.
double ap_by_threshold_sweep(const std::vector<ScoredExample>& scores,
                             const NoisySet& noisy) {
  std::vector<ScoredExample> sorted(scores);
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredExample& a, const ScoredExample& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.id < b.id;
            });
  double positives = 0.0;
  for (const auto& s : sorted) positives += noisy.count(s.id) > 0 ? 1 : 0;
  double ap = 0.0, hits = 0.0, prev_recall = 0.0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (noisy.count(sorted[k].id) > 0) hits += 1.0;
    const double recall = hits / positives;
    ap += (recall - prev_recall) * (hits / static_cast<double>(k + 1));
    prev_recall = recall;
  }
  return ap;
}

// All-pairs AUROC with half credit for ties.
double auroc_by_pairs(const std::vector<ScoredExample>& scores,
                      const NoisySet& noisy) {
  double wins = 0.0;
  long pairs = 0;
  for (const auto& pos : scores) {
    if (noisy.count(pos.id) == 0) continue;
    for (const auto& neg : scores) {
      if (noisy.count(neg.id) > 0) continue;
      ++pairs;
      if (pos.score > neg.score)
        wins += 1.0;
      else if (pos.score == neg.score)
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("precision at k ceiling rule and perfect detector") {
  std::vector<ScoredExample> scores;
  NoisySet noisy;
  for (long i = 0; i < 100; ++i) scores.push_back({i, -static_cast<double>(i)});
  noisy.insert(0);
  // N = 100, k = 1%: exactly one slot, occupied by the top-scored noisy id.
  CHECK(*precision_at_k(scores, noisy, 1.0) == 1.0);

  NoisySet top_block;
  for (long i = 0; i < 10; ++i) top_block.insert(i);
  CHECK(*precision_at_k(scores, top_block, 10.0) == 1.0);
}

TEST_CASE("precision at k undefined without positives") {
  std::vector<ScoredExample> scores{{0, 1.0}, {1, 0.5}};
  CHECK_FALSE(precision_at_k(scores, {}, 1.0).has_value());
}

TEST_CASE("random scores give precision near the noise rate") {
  Rng rng(11);
  const int n = 200;
  const double rate = 0.2;
  NoisySet noisy;
  for (long i = 0; i < static_cast<long>(rate * n); ++i) noisy.insert(i);
  double total = 0.0;
  const int resamples = 1000;
  for (int t = 0; t < resamples; ++t) {
    std::vector<ScoredExample> scores;
    for (long i = 0; i < n; ++i) scores.push_back({i, rng.normal()});
    total += *precision_at_k(scores, noisy, 10.0);
  }
  CHECK(total / resamples == doctest::Approx(rate).epsilon(0.25));
}

TEST_CASE("average precision at the extremes") {
  std::vector<ScoredExample> scores;
  NoisySet noisy;
  for (long i = 0; i < 20; ++i) scores.push_back({i, -static_cast<double>(i)});
  for (long i = 0; i < 5; ++i) noisy.insert(i);
  CHECK(*average_precision(scores, noisy) == doctest::Approx(1.0));

  // Single positive ranked last.
  NoisySet last;
  last.insert(19);
  CHECK(*average_precision(scores, last) == doctest::Approx(1.0 / 20.0));
}

TEST_CASE("average precision matches the exhaustive sweep oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ScoredExample> scores;
    NoisySet noisy;
    for (long i = 0; i < 50; ++i) {
      scores.push_back({i, rng.normal()});
      if (rng.uniform() < 0.3) noisy.insert(i);
    }
    if (noisy.empty() || noisy.size() == scores.size()) continue;
    CHECK(*average_precision(scores, noisy) ==
          doctest::Approx(ap_by_threshold_sweep(scores, noisy))
              .epsilon(1e-12));
  }
}

TEST_CASE("average precision undefined on degenerate class balance") {
  std::vector<ScoredExample> scores{{0, 1.0}, {1, 0.5}};
  CHECK_FALSE(average_precision(scores, {}).has_value());
  NoisySet all{0, 1};
  CHECK_FALSE(average_precision(scores, all).has_value());
}

TEST_CASE("auroc extremes and ties") {
  std::vector<ScoredExample> scores;
  NoisySet noisy;
  for (long i = 0; i < 10; ++i) scores.push_back({i, i < 5 ? 1.0 : 0.0});
  for (long i = 0; i < 5; ++i) noisy.insert(i);
  CHECK(*auroc(scores, noisy) == doctest::Approx(1.0));

  std::vector<ScoredExample> flat;
  for (long i = 0; i < 10; ++i) flat.push_back({i, 0.5});
  CHECK(*auroc(flat, noisy) == doctest::Approx(0.5));
}

TEST_CASE("auroc matches all-pairs counting") {
  Rng rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<ScoredExample> scores;
    NoisySet noisy;
    for (long i = 0; i < 60; ++i) {
      // Coarse grid of scores forces ties through the midrank path.
      scores.push_back({i, std::floor(rng.uniform() * 8.0)});
      if (rng.uniform() < 0.35) noisy.insert(i);
    }
    if (noisy.empty() || noisy.size() == scores.size()) continue;
    CHECK(*auroc(scores, noisy) ==
          doctest::Approx(auroc_by_pairs(scores, noisy)).epsilon(1e-12));
  }
}

TEST_CASE("kendall tau on identical reversed and transposed rankings") {
  std::vector<long> a{0, 1, 2, 3, 4};
  std::vector<long> b{4, 3, 2, 1, 0};
  CHECK(*kendall_tau_top(a, a, 100.0) == doctest::Approx(1.0));
  CHECK(*kendall_tau_top(a, b, 100.0) == doctest::Approx(-1.0));
  // One adjacent transposition among five: 1 discordant pair of 10.
  std::vector<long> c{0, 2, 1, 3, 4};
  CHECK(*kendall_tau_top(a, c, 100.0) == doctest::Approx(0.8));
}

TEST_CASE("kendall tau restricts to the top union") {
  // Rankings agree on the head and differ wildly on the tail.
  std::vector<long> a{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<long> b{1, 0, 2, 9, 8, 7, 6, 5, 4, 3};
  // Top 20% = two ids each: union {0, 1}, one discordant pair.
  CHECK(*kendall_tau_top(a, b, 20.0) == doctest::Approx(-1.0));
}

TEST_CASE("kendall tau undefined below two common ids") {
  std::vector<long> a{0};
  std::vector<long> b{0};
  CHECK_FALSE(kendall_tau_top(a, b, 100.0).has_value());
}
