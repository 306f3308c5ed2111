#include "nexus/net.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "nexus/dataset.hpp"
#include "nexus/error.hpp"
#include "nexus/index.hpp"
#include "nexus/matrix.hpp"
#include "nexus/preprocess.hpp"
#include "nexus/rng.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"

namespace {

namespace net = nexus::net;
using nexus::Error;
using nexus::ErrorCode;
using nexus::Mat;
using nexus::Rng;
using testsupport::TempDir;

ErrorCode code_of(const std::function<void()>& body) {
  try {
    body();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a nexus::Error");
}

net::ModelConfig model1_config(std::size_t input, std::vector<std::size_t> hidden) {
  net::ModelConfig config;
  config.variant = net::Variant::ModelI;
  config.attention = false;
  config.input_width = input;
  config.hidden = std::move(hidden);
  config.dropout_p = 0.0;
  return config;
}

net::ModelConfig model2_config(std::size_t input, std::vector<std::size_t> hidden,
                               double dropout = 0.0) {
  net::ModelConfig config;
  config.variant = net::Variant::ModelII;
  config.attention = false;
  config.input_width = input;
  config.hidden = std::move(hidden);
  config.dropout_p = dropout;
  return config;
}

Mat random_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  Mat out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = rng.normal();
  }
  return out;
}

void zero_parameters(net::ClassifierModel& model) {
  for (net::DenseParams& layer : model.layers) {
    for (std::size_t i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = 0.0;
    for (double& b : layer.b) b = 0.0;
  }
}

TEST(Attention, UniformGatesAtZeroWeights) {
  const net::AttentionParams params{Mat(2, 2, 0.0)};
  const net::AttentionOutput out = net::attention_apply(params, std::vector<double>{2.0, 4.0});
  ASSERT_EQ(out.gates.size(), 2u);
  EXPECT_DOUBLE_EQ(out.gates[0], 0.5);
  EXPECT_DOUBLE_EQ(out.gates[1], 0.5);
  EXPECT_DOUBLE_EQ(out.refined[0], 1.0);
  EXPECT_DOUBLE_EQ(out.refined[1], 2.0);
}

TEST(Attention, ZeroEmbeddingStaysZeroWithUniformGates) {
  Rng rng(4);
  Mat W(3, 3);
  for (std::size_t i = 0; i < W.size(); ++i) W.data()[i] = rng.normal();
  const net::AttentionOutput out =
      net::attention_apply(net::AttentionParams{W}, std::vector<double>{0.0, 0.0, 0.0});
  for (double g : out.gates) EXPECT_DOUBLE_EQ(g, 1.0 / 3.0);
  for (double v : out.refined) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Attention, SoftmaxIsNormalizedForRandomDraws) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Mat W(8, 8);
    for (std::size_t i = 0; i < W.size(); ++i) W.data()[i] = 3.0 * rng.normal();
    std::vector<double> e(8);
    for (double& v : e) v = 5.0 * rng.normal();
    const net::AttentionOutput out = net::attention_apply(net::AttentionParams{W}, e);
    double sum = 0.0;
    for (double g : out.gates) {
      EXPECT_GT(g, 0.0);
      sum += g;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(out.refined[i], out.gates[i] * e[i]);
  }
  EXPECT_EQ(code_of([] {
              net::attention_apply(net::AttentionParams{Mat(2, 2, 0.0)},
                                   std::vector<double>{1.0, 2.0, 3.0});
            }),
            ErrorCode::DimensionMismatch);
}

TEST(Forward, AllZeroWeightsGiveOneHalf) {
  Rng rng(1);
  net::ClassifierModel model = net::init_model(model1_config(3, {4, 2}), rng);
  zero_parameters(model);
  const std::vector<double> scores =
      net::forward(model, random_rows(5, 3, rng), net::Mode::Eval);
  for (double s : scores) EXPECT_DOUBLE_EQ(s, 0.5);
}

TEST(Forward, EvalModeIsDeterministic) {
  Rng rng(2);
  net::ClassifierModel model = net::init_model(model2_config(4, {6, 5}, 0.5), rng);
  const Mat rows = random_rows(8, 4, rng);
  const std::vector<double> first = net::forward(model, rows, net::Mode::Eval);
  const std::vector<double> second = net::forward(model, rows, net::Mode::Eval);
  EXPECT_EQ(first, second);
  for (double s : first) {
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
}

TEST(Forward, TrainModeNormalizesTheBatch) {
  Rng rng(3);
  net::ClassifierModel model = net::init_model(model2_config(5, {8, 6}), rng);
  const Mat rows = random_rows(64, 5, rng);
  net::ForwardCache cache;
  net::forward(model, rows, net::Mode::Train, nullptr, &cache);
  ASSERT_EQ(cache.normalized.size(), 2u);
  for (const Mat& normalized : cache.normalized) {
    for (std::size_t c = 0; c < normalized.cols(); ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < normalized.rows(); ++r) mean += normalized(r, c);
      mean /= static_cast<double>(normalized.rows());
      double var = 0.0;
      for (std::size_t r = 0; r < normalized.rows(); ++r) {
        var += (normalized(r, c) - mean) * (normalized(r, c) - mean);
      }
      var /= static_cast<double>(normalized.rows());
      EXPECT_LT(std::abs(mean), 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-4);
    }
  }
}

TEST(Forward, TrainModeForwardDoesNotTouchRunningStats) {
  Rng rng(9);
  net::ClassifierModel model = net::init_model(model2_config(4, {5, 4}), rng);
  const std::vector<double> before_mean = model.batchnorm[0].running_mean;
  const std::vector<double> before_var = model.batchnorm[0].running_var;
  net::forward(model, random_rows(16, 4, rng), net::Mode::Train);
  EXPECT_EQ(model.batchnorm[0].running_mean, before_mean);
  EXPECT_EQ(model.batchnorm[0].running_var, before_var);
}

TEST(Forward, WidthMismatch) {
  Rng rng(5);
  net::ClassifierModel model = net::init_model(model1_config(3, {4, 2}), rng);
  EXPECT_EQ(code_of([&] { net::forward(model, Mat(2, 4, 0.0), net::Mode::Eval); }),
            ErrorCode::WidthMismatch);
}

TEST(Bce, HandExamplesAndOracle) {
  EXPECT_NEAR(net::bce_loss(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}),
              std::log(2.0), 1e-12);

  // Exactly-correct predictions bottom out at the clamp floor.
  const double floor_loss =
      net::bce_loss(std::vector<double>{1.0, 0.0}, std::vector<int>{1, 0});
  EXPECT_NEAR(floor_loss, 1e-7, 1e-9);

  Rng rng(12);
  std::vector<double> predictions;
  std::vector<int> labels;
  for (int i = 0; i < 257; ++i) {
    predictions.push_back(rng.uniform());
    labels.push_back(rng.below(2) == 1 ? 1 : 0);
  }
  EXPECT_NEAR(net::bce_loss(predictions, labels),
              oracle::bce_long_double(predictions, labels), 1e-10);

  EXPECT_EQ(code_of([] { net::bce_loss(std::vector<double>{0.5}, std::vector<int>{0, 1}); }),
            ErrorCode::LengthMismatch);
}

TEST(Dropout, MasksAreInvertedBernoulli) {
  Rng init_rng(7);
  net::ClassifierModel model = net::init_model(model2_config(4, {32}, 0.5), init_rng);
  Rng mask_rng(100);
  double sum = 0.0;
  std::size_t count = 0;
  for (int draw = 0; draw < 40; ++draw) {
    const net::DropoutPlan plan = net::sample_dropout(model, 16, mask_rng);
    ASSERT_TRUE(plan.enabled);
    ASSERT_EQ(plan.masks.size(), 1u);
    for (std::size_t i = 0; i < plan.masks[0].size(); ++i) {
      const double m = plan.masks[0].data()[i];
      ASSERT_TRUE(m == 0.0 || m == 2.0);  // 1/(1-p) with p = 0.5
      sum += m;
      ++count;
    }
  }
  ASSERT_GE(count, 10000u);
  EXPECT_NEAR(sum / static_cast<double>(count), 1.0, 0.02);

  // p = 0 disables the plan entirely.
  net::ClassifierModel plain = net::init_model(model2_config(4, {8}), init_rng);
  EXPECT_FALSE(net::sample_dropout(plain, 4, mask_rng).enabled);
}

TEST(Dropout, TrainExpectationMatchesEvalOutput) {
  Rng rng(21);
  net::ClassifierModel model = net::init_model(model2_config(4, {16}, 0.5), rng);
  // Damp the output layer so the sigmoid stays near its linear region: the
  // expectation identity E[mask ⊙ h] = h is exact before the nonlinearity,
  // and linearizing keeps the sigmoid's Jensen gap far below the tolerance.
  for (std::size_t i = 0; i < model.layers[1].W.size(); ++i) model.layers[1].W.data()[i] *= 0.1;

  const Mat rows = random_rows(24, 4, rng);

  // Freeze the batch statistics into the running ones so eval mode normalizes
  // exactly like train mode does on this batch.
  net::ForwardCache cache;
  net::forward(model, rows, net::Mode::Train, nullptr, &cache);
  model.batchnorm[0].running_mean = cache.bn_mean[0];
  model.batchnorm[0].running_var = cache.bn_var[0];

  const std::vector<double> eval_scores = net::forward(model, rows, net::Mode::Eval);

  std::vector<double> mean_scores(rows.rows(), 0.0);
  Rng mask_rng(2024);
  const int draws = 20000;
  for (int draw = 0; draw < draws; ++draw) {
    const net::DropoutPlan plan = net::sample_dropout(model, rows.rows(), mask_rng);
    const std::vector<double> scores = net::forward(model, rows, net::Mode::Train, &plan);
    for (std::size_t r = 0; r < mean_scores.size(); ++r) mean_scores[r] += scores[r];
  }
  for (std::size_t r = 0; r < mean_scores.size(); ++r) {
    mean_scores[r] /= draws;
    EXPECT_NEAR(mean_scores[r] / eval_scores[r], 1.0, 0.02) << "row " << r;
  }
}

TEST(Predict, ThresholdAndElementwiseConsistency) {
  Rng rng(30);
  net::ClassifierModel model = net::init_model(model1_config(2, {3, 2}), rng);
  zero_parameters(model);

  // Zero weights give exactly 0.5, which goes to the positive class.
  net::Prediction boundary = net::predict(model, Mat(1, 2, 0.0));
  EXPECT_DOUBLE_EQ(boundary.scores[0], 0.5);
  EXPECT_EQ(boundary.labels[0], 1);

  // A slightly negative output bias lands just below the threshold.
  model.layers.back().b[0] = -0.0004;
  net::Prediction below = net::predict(model, Mat(1, 2, 0.0));
  EXPECT_LT(below.scores[0], 0.5);
  EXPECT_GT(below.scores[0], 0.4998);
  EXPECT_EQ(below.labels[0], 0);

  // Batch prediction equals row-by-row prediction.
  net::ClassifierModel rich = net::init_model(model2_config(3, {5, 4}, 0.5), rng);
  const Mat rows = random_rows(10, 3, rng);
  const net::Prediction batch = net::predict(rich, rows);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    Mat single(1, 3);
    for (std::size_t c = 0; c < 3; ++c) single(0, c) = rows(r, c);
    const net::Prediction one = net::predict(rich, single);
    EXPECT_EQ(one.labels[0], batch.labels[r]);
    EXPECT_EQ(one.scores[0], batch.scores[r]);
  }
}

TEST(Backward, ZeroGradientAtPerfectPredictions) {
  Rng rng(41);
  net::ClassifierModel model = net::init_model(model1_config(2, {3, 2}), rng);
  zero_parameters(model);
  model.layers.back().b[0] = 50.0;  // saturates the sigmoid at the clamp
  const Mat rows = random_rows(6, 2, rng);
  const std::vector<int> labels(6, 1);
  const net::BatchResult result = net::backward(model, rows, labels);
  for (const Mat& gw : result.grads.W) {
    for (std::size_t i = 0; i < gw.size(); ++i) EXPECT_LE(std::abs(gw.data()[i]), 1e-6);
  }
}

TEST(Backward, ReproducesLogisticRegressionGradient) {
  // Hidden ReLU layer pinned to the identity on positive inputs turns the
  // model into plain logistic regression: dL/dw = (p - y) * x.
  net::ModelConfig config = model1_config(1, {1});
  Rng rng(50);
  net::ClassifierModel model = net::init_model(config, rng);
  model.layers[0].W(0, 0) = 1.0;
  model.layers[0].b[0] = 0.0;
  model.layers[1].W(0, 0) = 0.75;
  model.layers[1].b[0] = 0.25;

  const double x = 1.5;
  const int y = 1;
  const double p = 1.0 / (1.0 + std::exp(-(0.75 * x + 0.25)));

  const net::BatchResult result =
      net::backward(model, Mat::from_rows({{x}}), std::vector<int>{y});
  EXPECT_NEAR(result.grads.W[1](0, 0), (p - y) * x, 1e-12);
  EXPECT_NEAR(result.grads.b[1][0], p - y, 1e-12);
  // The first layer sees the same error scaled by the output weight.
  EXPECT_NEAR(result.grads.W[0](0, 0), (p - y) * 0.75 * x, 1e-12);
}

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
  Rng rng(60);
  net::ClassifierModel model = net::init_model(model1_config(3, {4, 2}), rng);
  const Mat features = random_rows(20, 3, rng);
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i % 2);

  const net::ClassifierModel before = model;
  net::TrainConfig config;
  config.learning_rate = 0.0;
  config.epochs = 3;
  config.batch_size = 4;
  config.seed = 1;
  net::train(model, features, labels, config);

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (std::size_t i = 0; i < model.layers[l].W.size(); ++i) {
      EXPECT_EQ(model.layers[l].W.data()[i], before.layers[l].W.data()[i]);
    }
    EXPECT_EQ(model.layers[l].b, before.layers[l].b);
  }
}

TEST(Train, ZeroRateModelTwoStillCommitsRunningStats) {
  Rng rng(61);
  net::ClassifierModel model = net::init_model(model2_config(3, {4}), rng);
  const net::ClassifierModel before = model;
  const Mat features = random_rows(16, 3, rng);
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) labels.push_back(i % 2);
  net::TrainConfig config;
  config.learning_rate = 0.0;
  config.epochs = 1;
  config.batch_size = 16;
  net::train(model, features, labels, config);

  for (std::size_t i = 0; i < model.layers[0].W.size(); ++i) {
    EXPECT_EQ(model.layers[0].W.data()[i], before.layers[0].W.data()[i]);
  }
  EXPECT_EQ(model.batchnorm[0].gamma, before.batchnorm[0].gamma);
  EXPECT_NE(model.batchnorm[0].running_mean, before.batchnorm[0].running_mean);
}

TEST(Train, DeterministicGivenSeed) {
  const auto run = [] {
    Rng rng(70);
    net::ClassifierModel model = net::init_model(model2_config(4, {6, 5}, 0.5), rng);
    Rng data_rng(71);
    const Mat features = random_rows(40, 4, data_rng);
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(i % 2);
    net::TrainConfig config;
    config.learning_rate = 0.05;
    config.epochs = 5;
    config.batch_size = 8;
    config.seed = 9;
    net::train(model, features, labels, config);
    return model;
  };
  const net::ClassifierModel a = run();
  const net::ClassifierModel b = run();
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t i = 0; i < a.layers[l].W.size(); ++i) {
      ASSERT_EQ(a.layers[l].W.data()[i], b.layers[l].W.data()[i]);
    }
    ASSERT_EQ(a.layers[l].b, b.layers[l].b);
  }
  for (std::size_t l = 0; l < a.batchnorm.size(); ++l) {
    ASSERT_EQ(a.batchnorm[l].running_mean, b.batchnorm[l].running_mean);
    ASSERT_EQ(a.batchnorm[l].running_var, b.batchnorm[l].running_var);
  }
}

TEST(Train, SeparableDistanceFeatureConverges) {
  // Reals sit near the real-news corpus (small distances), fakes far away.
  Rng rng(80);
  const std::size_t n = 40;
  Mat raw(n, 1);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool real = i % 2 == 0;
    labels[i] = real ? 1 : 0;
    raw(i, 0) = real ? 0.3 + 0.05 * rng.normal() : 2.5 + 0.1 * rng.normal();
  }
  const nexus::ScalerParams scaler = nexus::fit_scaler(raw);
  const Mat features = nexus::transform(raw, scaler);

  net::ClassifierModel model = net::init_model(model1_config(1, {8, 4}), rng);
  net::TrainConfig config;
  config.learning_rate = 0.5;
  config.epochs = 50;
  config.batch_size = 8;
  config.seed = 3;
  const std::vector<net::EpochStats> history = net::train(model, features, labels, config);

  ASSERT_EQ(history.size(), 50u);
  EXPECT_EQ(history.front().epoch, 1u);
  EXPECT_EQ(history.back().epoch, 50u);
  EXPECT_LE(history.back().loss, 0.1 * history.front().loss);

  const net::Prediction prediction = net::predict(model, features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += prediction.labels[i] == labels[i] ? 1 : 0;
  EXPECT_EQ(correct, n);
}

TEST(Train, EmptyTrainingSetIsRejected) {
  Rng rng(90);
  net::ClassifierModel model = net::init_model(model1_config(2, {3, 2}), rng);
  EXPECT_EQ(code_of([&] {
              net::train(model, Mat(0, 2), std::vector<int>{}, net::TrainConfig{});
            }),
            ErrorCode::EmptyTrainingSet);
}

TEST(Parameters, AlwaysFloatRepresentable) {
  Rng rng(95);
  net::ClassifierModel model = net::init_model(model2_config(3, {5, 4}, 0.5), rng);
  const Mat features = random_rows(24, 3, rng);
  std::vector<int> labels;
  for (int i = 0; i < 24; ++i) labels.push_back(i % 2);
  net::TrainConfig config;
  config.learning_rate = 0.05;
  config.epochs = 2;
  config.batch_size = 6;
  net::train(model, features, labels, config);

  const auto snapped = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  for (const net::DenseParams& layer : model.layers) {
    for (std::size_t i = 0; i < layer.W.size(); ++i) {
      ASSERT_EQ(layer.W.data()[i], snapped(layer.W.data()[i]));
    }
    for (double b : layer.b) ASSERT_EQ(b, snapped(b));
  }
  for (const net::BatchNormParams& bn : model.batchnorm) {
    for (double v : bn.gamma) ASSERT_EQ(v, snapped(v));
    for (double v : bn.running_mean) ASSERT_EQ(v, snapped(v));
    for (double v : bn.running_var) ASSERT_EQ(v, snapped(v));
  }
}

// ---------------------------------------------------------------------------
// Retrieval-gated route.
// ---------------------------------------------------------------------------

struct GatedFixture {
  nexus::FlatIndex index;
  net::ClassifierModel model;
  net::RetrievalContext ctx;
  net::GatedInputs inputs;
};

GatedFixture make_gated_fixture(std::uint64_t seed, std::size_t k = 3) {
  Rng rng(seed);
  const std::size_t d = 5;
  std::vector<nexus::IndexEntry> entries;
  for (int i = 0; i < 12; ++i) {
    nexus::IndexEntry entry;
    entry.id = "real-" + std::to_string(i);
    for (std::size_t c = 0; c < d; ++c) entry.values.push_back(static_cast<float>(rng.normal()));
    entries.push_back(std::move(entry));
  }
  nexus::FlatIndex index = nexus::FlatIndex::build(std::move(entries), d);

  net::ModelConfig config;
  config.variant = net::Variant::ModelII;
  config.attention = true;
  config.input_width = k;
  config.embedding_dim = d;
  config.hidden = {6, 4};
  config.dropout_p = 0.0;
  net::ClassifierModel model = net::init_model(config, rng);
  // Non-trivial gates so the attention path is exercised.
  for (std::size_t i = 0; i < model.attention->W.size(); ++i) {
    model.attention->W.data()[i] =
        static_cast<double>(static_cast<float>(0.4 * rng.normal()));
  }

  net::GatedInputs inputs;
  inputs.embeddings = Mat(8, d);
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < d; ++c) inputs.embeddings(r, c) = rng.normal();
    inputs.ids.push_back("");  // queries not present in the index
    inputs.labels.push_back(static_cast<int>(r % 2));
  }

  nexus::ScalerParams identity;
  identity.mean.assign(k, 0.0);
  identity.std_dev.assign(k, 1.0);
  return GatedFixture{std::move(index), std::move(model),
                      net::RetrievalContext{nullptr, identity, k}, std::move(inputs)};
}

TEST(Gated, FeaturesMatchManualPipeline) {
  GatedFixture fx = make_gated_fixture(101);
  fx.ctx.index = &fx.index;
  const net::GatedFeatures features =
      net::gated_features(fx.model, fx.ctx, fx.inputs.embeddings, fx.inputs.ids);
  ASSERT_EQ(features.scaled.rows(), 8u);
  ASSERT_EQ(features.scaled.cols(), 3u);

  for (std::size_t r = 0; r < 8; ++r) {
    // Gates sum to one and refined = gates * embedding.
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) sum += features.gates(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);

    // Manual route: refine, search with float32 query, recompute distances in
    // double precision against the stored neighbor vectors.
    std::vector<double> e(5);
    for (std::size_t c = 0; c < 5; ++c) e[c] = fx.inputs.embeddings(r, c);
    const net::AttentionOutput refined = net::attention_apply(*fx.model.attention, e);
    std::vector<float> query(5);
    for (std::size_t c = 0; c < 5; ++c) query[c] = static_cast<float>(refined.refined[c]);
    const auto hits = fx.index.search(query, 3);
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t pos = features.neighbors[r][c];
      EXPECT_EQ(fx.index.id_at(pos), hits[c].id);
      const std::span<const float> stored = fx.index.vector_at(pos);
      double dist = 0.0;
      for (std::size_t j = 0; j < 5; ++j) {
        const double diff = refined.refined[j] - static_cast<double>(stored[j]);
        dist += diff * diff;
      }
      EXPECT_NEAR(features.scaled(r, c), dist, 1e-12);  // identity scaler
    }
  }
}

TEST(Gated, ForwardMatchesPlainForwardOnScaledFeatures) {
  GatedFixture fx = make_gated_fixture(102);
  fx.ctx.index = &fx.index;
  const net::GatedFeatures features =
      net::gated_features(fx.model, fx.ctx, fx.inputs.embeddings, fx.inputs.ids);
  const std::vector<double> direct = net::forward(fx.model, features.scaled, net::Mode::Eval);
  const std::vector<double> gated =
      net::forward_gated(fx.model, fx.ctx, fx.inputs, net::Mode::Eval);
  ASSERT_EQ(direct.size(), gated.size());
  for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_DOUBLE_EQ(direct[i], gated[i]);
}

TEST(Gated, TrainIsDeterministicAndChecksK) {
  const auto run = [] {
    GatedFixture fx = make_gated_fixture(103);
    fx.ctx.index = &fx.index;
    net::TrainConfig config;
    config.learning_rate = 0.05;
    config.epochs = 4;
    config.batch_size = 4;
    config.seed = 5;
    config.k = 3;
    net::train_gated(fx.model, fx.ctx, fx.inputs, config);
    return fx.model;
  };
  const net::ClassifierModel a = run();
  const net::ClassifierModel b = run();
  for (std::size_t i = 0; i < a.attention->W.size(); ++i) {
    ASSERT_EQ(a.attention->W.data()[i], b.attention->W.data()[i]);
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t i = 0; i < a.layers[l].W.size(); ++i) {
      ASSERT_EQ(a.layers[l].W.data()[i], b.layers[l].W.data()[i]);
    }
  }

  GatedFixture fx = make_gated_fixture(103);
  fx.ctx.index = &fx.index;
  net::TrainConfig mismatched;
  mismatched.k = 4;  // context built for k = 3
  EXPECT_EQ(code_of([&] { net::train_gated(fx.model, fx.ctx, fx.inputs, mismatched); }),
            ErrorCode::InvalidArgument);
}

// ---------------------------------------------------------------------------
// Checkpointing.
// ---------------------------------------------------------------------------

TEST(ModelIo, RoundTripIsBitExactAndPreservesOutputs) {
  TempDir tmp;
  Rng rng(110);
  for (const bool gated : {false, true}) {
    net::ModelConfig config;
    config.variant = gated ? net::Variant::ModelII : net::Variant::ModelI;
    config.attention = gated;
    config.input_width = 4;
    config.embedding_dim = gated ? 6 : 0;
    config.hidden = {5, 3};
    config.dropout_p = gated ? 0.5 : 0.0;
    net::ClassifierModel model = net::init_model(config, rng);
    if (gated) {
      for (std::size_t i = 0; i < model.attention->W.size(); ++i) {
        model.attention->W.data()[i] =
            static_cast<double>(static_cast<float>(0.2 * rng.normal()));
      }
    }

    const auto path = tmp.file(gated ? "m2.nxmdl" : "m1.nxmdl");
    net::save_model(model, path);
    const net::ClassifierModel loaded = net::load_model(path);

    EXPECT_EQ(loaded.config.variant, model.config.variant);
    EXPECT_EQ(loaded.config.attention, model.config.attention);
    EXPECT_EQ(loaded.config.input_width, model.config.input_width);
    EXPECT_EQ(loaded.config.embedding_dim, model.config.embedding_dim);
    EXPECT_EQ(loaded.config.hidden, model.config.hidden);
    EXPECT_EQ(loaded.config.dropout_p, model.config.dropout_p);
    if (gated) {
      for (std::size_t i = 0; i < model.attention->W.size(); ++i) {
        ASSERT_EQ(loaded.attention->W.data()[i], model.attention->W.data()[i]);
      }
    }
    ASSERT_EQ(loaded.layers.size(), model.layers.size());
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      for (std::size_t i = 0; i < model.layers[l].W.size(); ++i) {
        ASSERT_EQ(loaded.layers[l].W.data()[i], model.layers[l].W.data()[i]);
      }
      ASSERT_EQ(loaded.layers[l].b, model.layers[l].b);
    }
    for (std::size_t l = 0; l < model.batchnorm.size(); ++l) {
      ASSERT_EQ(loaded.batchnorm[l].gamma, model.batchnorm[l].gamma);
      ASSERT_EQ(loaded.batchnorm[l].beta, model.batchnorm[l].beta);
      ASSERT_EQ(loaded.batchnorm[l].running_mean, model.batchnorm[l].running_mean);
      ASSERT_EQ(loaded.batchnorm[l].running_var, model.batchnorm[l].running_var);
    }

    Rng data_rng(111);
    const Mat rows = random_rows(6, 4, data_rng);
    EXPECT_EQ(net::forward(model, rows, net::Mode::Eval),
              net::forward(loaded, rows, net::Mode::Eval));

    // Saving the loaded model reproduces the bytes.
    const auto again = tmp.file("again.nxmdl");
    net::save_model(loaded, again);
    std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_EQ(b1, b2);
  }
}

TEST(ModelIo, HeaderAndCorruptionErrors) {
  TempDir tmp;
  Rng rng(112);
  net::ClassifierModel model = net::init_model(model1_config(2, {3, 2}), rng);
  const auto path = tmp.file("model.nxmdl");
  net::save_model(model, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  ASSERT_GE(bytes.size(), 9u);
  EXPECT_EQ(bytes.substr(0, 6), "NXMDL1");
  EXPECT_EQ(bytes[6], '\0');  // variant byte: ModelI
  EXPECT_EQ(bytes[7], '\0');  // attention flag off
  EXPECT_EQ(bytes[8], '\0');  // batch-norm flag off

  const auto write_variant = [&](const std::string& name, const std::string& data) {
    std::ofstream out(tmp.file(name), std::ios::binary);
    out << data;
  };

  std::string bad = bytes;
  bad[0] = 'Q';
  write_variant("magic.nxmdl", bad);
  EXPECT_EQ(code_of([&] { net::load_model(tmp.file("magic.nxmdl")); }), ErrorCode::BadMagic);

  bad = bytes;
  bad[5] = '3';
  write_variant("ver.nxmdl", bad);
  EXPECT_EQ(code_of([&] { net::load_model(tmp.file("ver.nxmdl")); }),
            ErrorCode::VersionMismatch);

  write_variant("short.nxmdl", bytes.substr(0, bytes.size() - 2));
  EXPECT_EQ(code_of([&] { net::load_model(tmp.file("short.nxmdl")); }),
            ErrorCode::TruncatedFile);

  write_variant("long.nxmdl", bytes + "x");
  EXPECT_EQ(code_of([&] { net::load_model(tmp.file("long.nxmdl")); }), ErrorCode::IoError);

  EXPECT_EQ(code_of([&] { net::load_model(tmp.file("absent.nxmdl")); }), ErrorCode::IoError);
}

TEST(History, CsvExportGolden) {
  TempDir tmp;
  std::vector<net::EpochStats> history;
  history.push_back(net::EpochStats{1, 0.6931471805599453, 0.5});
  history.push_back(net::EpochStats{2, 0.25, 1.0});
  net::write_history_csv(history, tmp.file("history.csv"));
  std::ifstream in(tmp.file("history.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "epoch,loss,train_accuracy");
  std::getline(in, line);
  EXPECT_EQ(line, "1,0.69314718055994529,0.5");
  std::getline(in, line);
  EXPECT_EQ(line, "2,0.25,1");
}

}  // namespace
