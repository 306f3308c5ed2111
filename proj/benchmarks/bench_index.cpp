#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "nexus/index.hpp"
#include "nexus/rng.hpp"

namespace {

using nexus::FlatIndex;
using nexus::IndexEntry;
using nexus::Rng;

std::vector<IndexEntry> random_entries(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<IndexEntry> entries(n);
  for (std::size_t i = 0; i < n; ++i) {
    entries[i].id = "e" + std::to_string(i);
    entries[i].values.resize(d);
    for (float& v : entries[i].values) v = static_cast<float>(rng.normal());
  }
  return entries;
}

void BM_IndexBuild(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  const std::vector<IndexEntry> entries = random_entries(n, d, rng);
  for (auto _ : state) {
    std::vector<IndexEntry> copy = entries;
    FlatIndex index = FlatIndex::build(std::move(copy), d);
    benchmark::DoNotOptimize(index.size());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n));
}

void BM_IndexSearch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  Rng rng(2);
  const FlatIndex index = FlatIndex::build(random_entries(n, d, rng), d);
  std::vector<float> query(d);
  for (float& v : query) v = static_cast<float>(rng.normal());
  for (auto _ : state) {
    auto hits = index.search(query, k);
    benchmark::DoNotOptimize(hits.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(n));
}

void BM_IndexBatchSearch(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto d = static_cast<std::size_t>(state.range(1));
  const std::size_t queries = 64;
  Rng rng(3);
  const FlatIndex index = FlatIndex::build(random_entries(n, d, rng), d);
  std::vector<std::vector<float>> batch(queries, std::vector<float>(d));
  for (auto& q : batch) {
    for (float& v : q) v = static_cast<float>(rng.normal());
  }
  for (auto _ : state) {
    auto results = index.batch_search(batch, 10);
    benchmark::DoNotOptimize(results.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(queries));
}

}  // namespace

BENCHMARK(BM_IndexBuild)->Args({1000, 32})->Args({10000, 32})->Args({10000, 128});
BENCHMARK(BM_IndexSearch)
    ->Args({1000, 32, 5})
    ->Args({10000, 32, 5})
    ->Args({10000, 128, 5})
    ->Args({10000, 32, 32});
BENCHMARK(BM_IndexBatchSearch)->Args({10000, 32});

BENCHMARK_MAIN();
