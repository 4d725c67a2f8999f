// Serial reference vs OpenMP batch gradient and scoring.

#include <benchmark/benchmark.h>

#include <random>

#include "ctxrisk/model.hpp"
#include "ctxrisk/synthetic.hpp"

using namespace ctxrisk;

namespace {

struct Fixture {
  data::Dataset ds;
  ModelParams params;
  data::IdSet batch;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    data::SyntheticSpec spec;
    spec.n_cases = 256;
    spec.n_features = 8;
    spec.seed = 1;
    Fixture out;
    const auto gen = data::generate_synthetic(spec);
    out.ds = data::normalize(gen.dataset, data::all_ids(gen.dataset));
    ModelConfig cfg;
    cfg.dims.n_features = out.ds.n_features();
    cfg.dims.n_baseline = out.ds.n_baseline();
    out.params = init_model(cfg, 1);
    out.batch = data::all_ids(out.ds);
    return out;
  }();
  return f;
}

void batch_gradient(benchmark::State& state, model::Exec exec) {
  const auto& f = fixture();
  auto p = f.params;
  const data::IdSet batch(f.batch.begin(), f.batch.begin() + state.range(0));
  for (auto _ : state) {
    p.store.zero_grad();
    benchmark::DoNotOptimize(model::batch_loss_and_grad(p, f.ds, batch, 1.0, exec).loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void scoring(benchmark::State& state, model::Exec exec) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(model::predict_scores(f.params, f.ds, f.batch, exec));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.batch.size()));
}

}  // namespace

BENCHMARK_CAPTURE(batch_gradient, serial, model::Exec::kSerial)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(batch_gradient, parallel, model::Exec::kParallel)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(scoring, serial, model::Exec::kSerial)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(scoring, parallel, model::Exec::kParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
