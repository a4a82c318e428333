#include <benchmark/benchmark.h>

#include <vector>

#include "fixtures.hpp"
#include "kdrank/labelstore.hpp"
#include "kdrank/metrics.hpp"
#include "kdrank/nncore.hpp"
#include "oracles.hpp"

using namespace kdrank;

namespace {

// Snapshot over range(0) segments of range(1) rows each, ids interleaved so
// lookups exercise the binary search rather than the first segment.
void BM_SnapshotLookup(benchmark::State& state) {
  const auto segments = static_cast<std::size_t>(state.range(0));
  const auto rows = static_cast<std::size_t>(state.range(1));
  kdrank::testing::TempDir dir("kdrank-bench");
  const std::vector<labelstore::TaskColumn> tasks{{"CTR", ranker::TaskKind::Binary}};
  {
    labelstore::LabelWriter writer(dir.path(), labelstore::StoreOptions{false});
    std::uint64_t id = 1;
    for (std::size_t s = 0; s < segments; ++s) {
      std::vector<labelstore::LabelRecord> recs;
      for (std::size_t r = 0; r < rows; ++r) recs.push_back({id++, {0.5f}});
      writer.append_segment(recs, tasks, s + 1);
    }
  }
  const auto snap = labelstore::LabelStore(dir.path()).open_snapshot();
  Rng rng(1);
  const std::uint64_t total = segments * rows;
  for (auto _ : state) {
    benchmark::DoNotOptimize(snap.lookup(1 + rng.below(total)));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_SnapshotLookup)->Args({16, 256})->Args({256, 512})->Args({1024, 64});

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const std::vector<std::size_t> dims{32, 32, 16, 1};
  const auto mlp = nncore::Mlp::he_uniform(dims, nncore::Activation::Identity, rng);
  const auto x = kdrank::testing::random_features(batch, 32, rng);
  const nncore::Tensor2 grad(batch, 1, 1.0);
  for (auto _ : state) {
    auto fwd = nncore::mlp_forward(mlp, x, 6.0);
    benchmark::DoNotOptimize(nncore::mlp_backward(mlp, fwd.cache, grad));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(64)->Arg(256)->Arg(1024);

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> s(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = rng.uniform();
    y[i] = static_cast<double>(rng.below(2));
  }
  y[0] = 0;
  y[1] = 1;
  for (auto _ : state) benchmark::DoNotOptimize(metrics::auc(s, y));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_Auc)->Arg(1 << 10)->Arg(1 << 14)->Arg(1 << 18);

}  // namespace

BENCHMARK_MAIN();
