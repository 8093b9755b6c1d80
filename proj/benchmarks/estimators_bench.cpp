// Wall-clock cost of the two susceptibility estimators on the default world
// with an untrained default-size model (cost does not depend on the weights).
#include <benchmark/benchmark.h>

#include "suslab/datagen.hpp"
#include "suslab/suscept.hpp"

namespace {

using namespace suslab;

struct Fixture {
  datagen::World world = datagen::gen_world({});
  std::vector<datagen::QueryRecord> queries = datagen::gen_queries(world);
  toylm::ModelParams params;
  std::vector<datagen::ContextRecord> pool;
  int slots = datagen::max_context_length(world);

  Fixture() {
    toylm::ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(world.vocab.size());
    params = toylm::ModelParams::random(cfg, 1);
    pool = datagen::gen_contexts(world, queries.front().relation, 320, 5);
  }
  static const Fixture& get() {
    static const Fixture f;
    return f;
  }
};

void BM_MonteCarlo(benchmark::State& state) {
  const auto& f = Fixture::get();
  const auto& q = f.queries.front();
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto sample = suscept::sample_contexts(f.pool, q.entity, n, suscept::default_relevant_count(n), 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(suscept::mc_susceptibility(f.params, q.token_ids, sample, f.slots));
  }
  state.counters["forwards"] = static_cast<double>(n);
}
BENCHMARK(BM_MonteCarlo)->Arg(32)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_FisherTopK(benchmark::State& state) {
  const auto& f = Fixture::get();
  const auto& q = f.queries.front();
  const int k = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(suscept::fisher_susceptibility(f.params, q.token_ids, k).trace.value);
  }
  state.counters["backwards"] = k;
}
BENCHMARK(BM_FisherTopK)->Arg(1)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_QuadExact(benchmark::State& state) {
  const auto& f = Fixture::get();
  const auto& q = f.queries.front();
  const auto sample = suscept::sample_contexts(f.pool, q.entity, 128, 4, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(suscept::quad_susceptibility(f.params, q.token_ids, sample, f.slots));
  }
}
BENCHMARK(BM_QuadExact)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
