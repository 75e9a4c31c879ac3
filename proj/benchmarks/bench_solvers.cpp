#include <benchmark/benchmark.h>

#include "sgoif/curvature.hpp"
#include "sgoif/ihvp.hpp"

namespace {

using namespace sgoif;

void BM_richardson_step(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(7);
  Matrix h = random_spd(d, 20.0, rng);
  Vector g(d);
  for (int i = 0; i < d; ++i) g[i] = rng.normal();
  Vector diag = h.diagonal();
  LinearOp apply = [&](const Vector& v) -> Vector { return h * v; };
  LinearOp precond = [&](const Vector& v) -> Vector {
    return v.array() / diag.array();
  };
  AnchorState anchor = AnchorState::make(0, g);
  for (auto _ : state) {
    anchor = richardson_step(std::move(anchor), apply, precond, 0.05);
    benchmark::DoNotOptimize(anchor.residual_norm);
  }
}
BENCHMARK(BM_richardson_step)->Arg(64)->Arg(256)->Arg(1024);

void BM_surrogate_apply(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(11);
  CurvatureSurrogate s = CurvatureSurrogate::lowrank_plus_diag(d, 1e-3);
  std::vector<Vector> grads;
  for (int b = 0; b < 8; ++b) {
    Vector g(d);
    for (int i = 0; i < d; ++i) g[i] = rng.normal();
    grads.push_back(std::move(g));
  }
  s.update(grads, 0);
  Matrix q = random_orthogonal(d, rng).leftCols(8);
  Vector lam = Vector::LinSpaced(8, 1.0, 8.0);
  s.set_subspace(q, lam);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  for (auto _ : state) {
    Vector out = s.apply(v);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_surrogate_apply)->Arg(256)->Arg(1024)->Arg(4096);

void BM_woodbury_precond(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(13);
  CurvatureSurrogate s = CurvatureSurrogate::lowrank_plus_diag(d, 1e-3);
  std::vector<Vector> grads;
  for (int b = 0; b < 8; ++b) {
    Vector g(d);
    for (int i = 0; i < d; ++i) g[i] = rng.normal();
    grads.push_back(std::move(g));
  }
  s.update(grads, 0);
  Matrix q = random_orthogonal(d, rng).leftCols(8);
  Vector lam = Vector::LinSpaced(8, 1.0, 8.0);
  s.set_subspace(q, lam);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = rng.normal();
  for (auto _ : state) {
    Vector out = s.precond_apply(v);
    benchmark::DoNotOptimize(out);
  }
}
BENCHMARK(BM_woodbury_precond)->Arg(256)->Arg(1024)->Arg(4096);

void BM_subspace_refresh(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  Rng rng(17);
  Matrix h = random_spd(d, 50.0, rng);
  LinearOp apply = [&](const Vector& v) -> Vector { return h * v; };
  std::vector<Vector> probes;
  for (int j = 0; j < 4; ++j) {
    Vector p(d);
    for (int i = 0; i < d; ++i) p[i] = rng.normal();
    probes.push_back(std::move(p));
  }
  for (auto _ : state) {
    SubspaceState sub;
    sub.r = 8;
    sub = update_subspace(std::move(sub), probes, apply, d, rng);
    benchmark::DoNotOptimize(sub.lambda);
  }
}
BENCHMARK(BM_subspace_refresh)->Arg(128)->Arg(512);

}  // namespace
