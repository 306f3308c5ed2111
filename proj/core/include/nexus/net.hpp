#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "nexus/dataset.hpp"
#include "nexus/index.hpp"
#include "nexus/matrix.hpp"
#include "nexus/preprocess.hpp"
#include "nexus/rng.hpp"

namespace nexus::net {

// ModelI: plain dense/ReLU stack on retrieval distances.
// ModelII: dense -> batch-norm -> ReLU -> dropout stack, optionally fed by
// attention-gated retrieval (see RetrievalContext below).
enum class Variant { ModelI, ModelII };

enum class Mode { Train, Eval };

// Per-dimension gating: gates = softmax(W * e), refined = gates ⊙ e.
struct AttentionParams {
  Mat W;  // d x d
};

struct DenseParams {
  Mat W;                  // out x in, row-major
  std::vector<double> b;  // out
};

struct BatchNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

struct ModelConfig {
  Variant variant = Variant::ModelII;
  bool attention = false;            // ModelII only
  std::size_t input_width = 0;       // classifier input feature count
  std::size_t embedding_dim = 0;     // d; required when attention is enabled
  std::vector<std::size_t> hidden = {128, 64};
  double dropout_p = 0.5;            // ModelII only, in [0, 1)
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

// All learned state. Parameters are kept as doubles but are always snapped to
// float32-representable values (at init and after every update), so the
// float32 checkpoint format round-trips them bit-exactly while gradient
// computations still run in full 64-bit.
struct ClassifierModel {
  ModelConfig config;
  std::optional<AttentionParams> attention;
  std::vector<DenseParams> layers;         // hidden layers + 1-unit output
  std::vector<BatchNormParams> batchnorm;  // ModelII: one per hidden layer
};

// Dense weights: Gaussian with variance 2/fan_in (ReLU-appropriate); biases
// and attention weights start at zero (uniform gates); gamma 1, beta 0.
ClassifierModel init_model(const ModelConfig& config, Rng& rng);

struct AttentionOutput {
  std::vector<double> gates;    // strictly positive, sums to 1
  std::vector<double> refined;  // gates ⊙ e
};

// Softmax over the d outputs of W*e, stabilized by max-subtraction.
AttentionOutput attention_apply(const AttentionParams& params, std::span<const double> e);

// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
double bce_loss(std::span<const double> predictions, std::span<const int> labels);

// Pre-sampled inverted-dropout masks (0 or 1/(1-p)), one per hidden layer,
// shared between the forward and backward passes of a step.
struct DropoutPlan {
  bool enabled = false;
  std::vector<Mat> masks;
};

DropoutPlan sample_dropout(const ClassifierModel& model, std::size_t batch_rows, Rng& rng);

// Intermediate activations exposed for inspection and tests.
struct ForwardCache {
  std::vector<Mat> dense_out;              // per dense layer, before BN/activation
  std::vector<Mat> normalized;             // per BN layer: (x - mean) / sqrt(var + eps)
  std::vector<std::vector<double>> bn_mean;  // train-mode batch statistics
  std::vector<std::vector<double>> bn_var;   // population convention (divide by N)
};

// Row-wise scores in (0, 1). Train mode uses batch statistics for the batch
// norms and applies `dropout` when given; eval mode uses running statistics
// and identity dropout. Never mutates the model (running statistics are
// committed separately, during training).
std::vector<double> forward(const ClassifierModel& model, const Mat& features, Mode mode,
                            const DropoutPlan* dropout = nullptr,
                            ForwardCache* cache = nullptr);

struct Gradients {
  std::optional<Mat> attention_W;
  std::vector<Mat> W;
  std::vector<std::vector<double>> b;
  std::vector<std::vector<double>> gamma;
  std::vector<std::vector<double>> beta;
};

struct BatchResult {
  double loss = 0.0;
  std::vector<double> predictions;
  Gradients grads;
  Mat input_grad;  // d(loss)/d(features)
  // Batch statistics observed during the forward half, for running-stat
  // commits (train() applies them with the configured momentum).
  std::vector<std::vector<double>> bn_batch_mean;
  std::vector<std::vector<double>> bn_batch_var;
};

// Combined train-mode forward and backward pass: exact gradients of
// bce_loss(forward(features)) with respect to every parameter.
BatchResult backward(const ClassifierModel& model, const Mat& features,
                     std::span<const int> labels, const DropoutPlan* dropout = nullptr);

// ---------------------------------------------------------------------------
// Retrieval-gated route (ModelII with attention). The index holds embeddings
// refined with the weights current at build time; during training each step
// re-refines the queries with the live attention weights, re-selects the k
// nearest stored neighbors, and recomputes the squared distances from the
// refined query so gradient flows into W through the query side. Neighbor
// identity is treated as constant within a step.
// ---------------------------------------------------------------------------

struct RetrievalContext {
  const FlatIndex* index = nullptr;
  ScalerParams scaler;  // affine fitted once on the initial train features
  std::size_t k = 5;
};

struct GatedInputs {
  Mat embeddings;                // n x d raw embeddings
  std::vector<std::string> ids;  // per-row self-exclusion id ("" = none)
  std::vector<int> labels;
};

GatedInputs gather_gated_inputs(const Dataset& dataset);

struct GatedFeatures {
  Mat gates;    // n x d
  Mat refined;  // n x d
  Mat scaled;   // n x k, the classifier input
  std::vector<std::vector<std::size_t>> neighbors;  // n x k positions in the index
};

GatedFeatures gated_features(const ClassifierModel& model, const RetrievalContext& ctx,
                             const Mat& embeddings, const std::vector<std::string>& ids);

std::vector<double> forward_gated(const ClassifierModel& model, const RetrievalContext& ctx,
                                  const GatedInputs& inputs, Mode mode,
                                  const DropoutPlan* dropout = nullptr);

BatchResult backward_gated(const ClassifierModel& model, const RetrievalContext& ctx,
                           const GatedInputs& inputs, const DropoutPlan* dropout = nullptr);

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t k = 5;  // retrieval width, used by the gated route
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double train_accuracy = 0.0;
};

// Mini-batch SGD (theta <- theta - lr * grad), per-epoch shuffling driven by
// config.seed. Deterministic: identical (model, data, config) produce
// bit-identical trained parameters.
std::vector<EpochStats> train(ClassifierModel& model, const Mat& features,
                              std::span<const int> labels, const TrainConfig& config);

std::vector<EpochStats> train_gated(ClassifierModel& model, const RetrievalContext& ctx,
                                    const GatedInputs& inputs, const TrainConfig& config);

struct Prediction {
  std::vector<int> labels;     // score >= 0.5 -> 1 (boundary goes to positive)
  std::vector<double> scores;
};

Prediction predict(const ClassifierModel& model, const Mat& features);
Prediction predict_gated(const ClassifierModel& model, const RetrievalContext& ctx,
                         const GatedInputs& inputs);

// Versioned little-endian binary checkpoint; parameters as 32-bit floats.
// load_model(save_model(m)) reproduces every parameter bit-exactly.
void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);

// CSV with header epoch,loss,train_accuracy.
void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path);

}  // namespace nexus::net
