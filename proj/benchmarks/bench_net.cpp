#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "nexus/index.hpp"
#include "nexus/matrix.hpp"
#include "nexus/net.hpp"
#include "nexus/preprocess.hpp"
#include "nexus/rng.hpp"

namespace {

namespace net = nexus::net;
using nexus::Mat;
using nexus::Rng;

net::ModelConfig dense_config(std::size_t input, bool model2) {
  net::ModelConfig config;
  config.variant = model2 ? net::Variant::ModelII : net::Variant::ModelI;
  config.attention = false;
  config.input_width = input;
  config.hidden = {128, 64};
  config.dropout_p = model2 ? 0.5 : 0.0;
  return config;
}

Mat random_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Mat out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = rng.normal();
  return out;
}

std::vector<int> alternating_labels(std::size_t n) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
  return labels;
}

void BM_ForwardEval(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  net::ClassifierModel model = net::init_model(dense_config(5, true), rng);
  const Mat features = random_rows(rows, 5, rng);
  for (auto _ : state) {
    auto scores = net::forward(model, features, net::Mode::Eval);
    benchmark::DoNotOptimize(scores.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(rows));
}

void BM_BackwardBatch(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  net::ClassifierModel model = net::init_model(dense_config(5, true), rng);
  const Mat features = random_rows(rows, 5, rng);
  const std::vector<int> labels = alternating_labels(rows);
  Rng mask_rng(3);
  const net::DropoutPlan plan = net::sample_dropout(model, rows, mask_rng);
  for (auto _ : state) {
    auto result = net::backward(model, features, labels, &plan);
    benchmark::DoNotOptimize(result.loss);
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(rows));
}

void BM_TrainEpochs(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng data_rng(4);
  const Mat features = random_rows(rows, 5, data_rng);
  const std::vector<int> labels = alternating_labels(rows);
  for (auto _ : state) {
    state.PauseTiming();
    Rng rng(5);
    net::ClassifierModel model = net::init_model(dense_config(5, true), rng);
    state.ResumeTiming();
    net::TrainConfig config;
    config.learning_rate = 0.05;
    config.epochs = 5;
    config.batch_size = 32;
    auto history = net::train(model, features, labels, config);
    benchmark::DoNotOptimize(history.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(rows) * 5);
}

void BM_GatedFeatures(benchmark::State& state) {
  const auto queries = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 32;
  const std::size_t k = 5;
  Rng rng(6);
  std::vector<nexus::IndexEntry> entries(400);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    entries[i].id = "real-" + std::to_string(i);
    entries[i].values.resize(d);
    for (float& v : entries[i].values) v = static_cast<float>(rng.normal());
  }
  const nexus::FlatIndex index = nexus::FlatIndex::build(std::move(entries), d);

  net::ModelConfig mcfg;
  mcfg.variant = net::Variant::ModelII;
  mcfg.attention = true;
  mcfg.input_width = k;
  mcfg.embedding_dim = d;
  mcfg.hidden = {128, 64};
  net::ClassifierModel model = net::init_model(mcfg, rng);

  Mat embeddings = random_rows(queries, d, rng);
  std::vector<std::string> ids(queries, "");
  nexus::ScalerParams scaler;
  scaler.mean.assign(k, 0.0);
  scaler.std_dev.assign(k, 1.0);
  const net::RetrievalContext ctx{&index, scaler, k};

  for (auto _ : state) {
    auto features = net::gated_features(model, ctx, embeddings, ids);
    benchmark::DoNotOptimize(features.scaled.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(queries));
}

}  // namespace

BENCHMARK(BM_ForwardEval)->Arg(32)->Arg(1024);
BENCHMARK(BM_BackwardBatch)->Arg(32)->Arg(256);
BENCHMARK(BM_TrainEpochs)->Arg(800);
BENCHMARK(BM_GatedFeatures)->Arg(32)->Arg(256);

BENCHMARK_MAIN();
