#include <benchmark/benchmark.h>

#include "sgoif/models.hpp"
#include "sgoif/scoring.hpp"

namespace {

using namespace sgoif;

AnchorBank make_bank(int k, int d, Rng& rng) {
  AnchorBank bank;
  for (int v = 0; v < k; ++v) {
    Vector g(d);
    for (int i = 0; i < d; ++i) g[i] = rng.normal();
    AnchorState a = AnchorState::make(v, g);
    a.phi_v = g;
    a.c_v = 0.5 + 0.5 * rng.uniform();
    bank.anchors.push_back(std::move(a));
  }
  return bank;
}

void BM_score_example(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(3);
  AnchorBank bank = make_bank(8, d, rng);
  AggregationWeights weights = aggregation_weights(bank);
  Vector g(d);
  for (int i = 0; i < d; ++i) g[i] = rng.normal();
  for (auto _ : state) {
    InfluenceRecord rec = score_example(0, g, bank, weights);
    benchmark::DoNotOptimize(rec.aggregated);
  }
}
BENCHMARK(BM_score_example)->Arg(64)->Arg(1024)->Arg(16384);

void BM_per_example_gradient_logistic(benchmark::State& state) {
  const int p = static_cast<int>(state.range(0));
  Rng rng(5);
  Model model = Model::logistic(p, 2);
  Vector theta = model.init_theta(rng);
  Example z;
  z.features.resize(p);
  for (int i = 0; i < p; ++i) z.features[i] = rng.normal();
  z.observed_label = 1;
  z.true_label = 1;
  for (auto _ : state) {
    Vector g = model.gradient(theta, z);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_per_example_gradient_logistic)->Arg(16)->Arg(256)->Arg(2048);

void BM_mlp_hvp(benchmark::State& state) {
  const int p = static_cast<int>(state.range(0));
  Rng rng(9);
  Model model = Model::mlp(p, 16, 4);
  Vector theta = model.init_theta(rng);
  std::vector<Example> batch;
  for (int b = 0; b < 8; ++b) {
    Example z;
    z.features.resize(p);
    for (int i = 0; i < p; ++i) z.features[i] = rng.normal();
    z.observed_label = b % 4;
    z.true_label = z.observed_label;
    batch.push_back(std::move(z));
  }
  Vector v = model.init_theta(rng);
  for (auto _ : state) {
    Vector out = model.hvp(theta, batch, v);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_mlp_hvp)->Arg(16)->Arg(64)->Arg(256);

}  // namespace
