#include "nexus/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "binio.hpp"
#include "nexus/error.hpp"

namespace nexus::net {
namespace {

constexpr char kModelMagic[] = "NXMDL1";
constexpr double kProbClamp = 1e-7;

// Round-trips a double through float32. Parameters live in this subset of
// doubles so checkpoints (stored as float32) are lossless.
double snap(double v) { return static_cast<double>(static_cast<float>(v)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double ez = std::exp(z);
  return ez / (1.0 + ez);
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// out = A * B^T, A: n x k, B: m x k.
Mat matmul_nt(const Mat& a, const Mat& b) {
  Mat out(a.rows(), b.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t i = 0; i < b.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) acc += a(r, j) * b(i, j);
      out(r, i) = acc;
    }
  }
  return out;
}

// out = A * B, A: n x m, B: m x k.
Mat matmul_nn(const Mat& a, const Mat& b) {
  Mat out(a.rows(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double v = a(r, j);
      if (v == 0.0) continue;
      for (std::size_t c = 0; c < b.cols(); ++c) out(r, c) += v * b(j, c);
    }
  }
  return out;
}

// out = A^T * B, A: n x m, B: n x k.
Mat matmul_tn(const Mat& a, const Mat& b) {
  Mat out(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double v = a(r, j);
      if (v == 0.0) continue;
      for (std::size_t c = 0; c < b.cols(); ++c) out(j, c) += v * b(r, c);
    }
  }
  return out;
}

void validate_config(const ModelConfig& config) {
  if (config.input_width == 0) {
    throw Error(ErrorCode::InvalidArgument, "input width must be at least 1");
  }
  if (config.hidden.empty()) {
    throw Error(ErrorCode::InvalidArgument, "need at least one hidden layer");
  }
  for (std::size_t width : config.hidden) {
    if (width == 0) {
      throw Error(ErrorCode::InvalidArgument, "hidden layer width must be at least 1");
    }
  }
  if (!(config.dropout_p >= 0.0 && config.dropout_p < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "dropout probability must lie in [0, 1)");
  }
  if (!(config.bn_momentum > 0.0 && config.bn_momentum <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "batch-norm momentum must lie in (0, 1]");
  }
  if (!(config.bn_eps > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "batch-norm epsilon must be positive");
  }
  if (config.attention) {
    if (config.variant != Variant::ModelII) {
      throw Error(ErrorCode::InvalidArgument, "attention gating requires ModelII");
    }
    if (config.embedding_dim == 0) {
      throw Error(ErrorCode::InvalidArgument,
                  "attention gating needs a positive embedding dimension");
    }
  }
}

void snap_model(ClassifierModel& model) {
  if (model.attention) {
    for (std::size_t i = 0; i < model.attention->W.size(); ++i) {
      model.attention->W.data()[i] = snap(model.attention->W.data()[i]);
    }
  }
  for (DenseParams& layer : model.layers) {
    for (std::size_t i = 0; i < layer.W.size(); ++i) layer.W.data()[i] = snap(layer.W.data()[i]);
    for (double& v : layer.b) v = snap(v);
  }
  for (BatchNormParams& bn : model.batchnorm) {
    for (double& v : bn.gamma) v = snap(v);
    for (double& v : bn.beta) v = snap(v);
    for (double& v : bn.running_mean) v = snap(v);
    for (double& v : bn.running_var) v = snap(v);
  }
}

bool has_batchnorm(const ClassifierModel& model) {
  return model.config.variant == Variant::ModelII;
}

bool has_dropout(const ClassifierModel& model) {
  return model.config.variant == Variant::ModelII && model.config.dropout_p > 0.0;
}

// Everything backward() needs from the forward half of a step.
struct Trace {
  std::vector<Mat> inputs;    // input to each dense layer
  std::vector<Mat> z;         // dense outputs
  std::vector<Mat> xhat;      // BN-normalized activations (ModelII)
  std::vector<std::vector<double>> mu;   // BN batch means (train mode)
  std::vector<std::vector<double>> var;  // BN batch variances, population
  std::vector<Mat> bn_out;    // gamma * xhat + beta
  std::vector<double> scores; // clamped sigmoid outputs
};

std::vector<double> run_forward(const ClassifierModel& model, const Mat& features, Mode mode,
                                const DropoutPlan* dropout, Trace* trace) {
  if (features.cols() != model.config.input_width) {
    throw Error(ErrorCode::WidthMismatch,
                "features have width " + std::to_string(features.cols()) +
                    ", model expects " + std::to_string(model.config.input_width));
  }
  if (features.rows() == 0) {
    throw Error(ErrorCode::EmptyInput, "no rows to run the network on");
  }
  const bool use_dropout =
      mode == Mode::Train && dropout != nullptr && dropout->enabled && has_dropout(model);
  if (use_dropout) {
    if (dropout->masks.size() != model.config.hidden.size()) {
      throw Error(ErrorCode::LengthMismatch, "dropout plan does not cover every hidden layer");
    }
    for (std::size_t l = 0; l < dropout->masks.size(); ++l) {
      if (dropout->masks[l].rows() != features.rows() ||
          dropout->masks[l].cols() != model.config.hidden[l]) {
        throw Error(ErrorCode::WidthMismatch, "dropout mask shape does not match the batch");
      }
    }
  }

  const std::size_t n = features.rows();
  Mat activation = features;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (trace) trace->inputs.push_back(activation);
    const DenseParams& layer = model.layers[l];
    Mat z = matmul_nt(activation, layer.W);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += layer.b[c];
    }
    if (trace) trace->z.push_back(z);

    if (l == model.layers.size() - 1) {
      std::vector<double> scores(n);
      for (std::size_t r = 0; r < n; ++r) scores[r] = clamp_prob(sigmoid(z(r, 0)));
      if (trace) trace->scores = scores;
      return scores;
    }

    Mat stage = std::move(z);
    if (has_batchnorm(model)) {
      const BatchNormParams& bn = model.batchnorm[l];
      const std::size_t w = stage.cols();
      std::vector<double> mu(w, 0.0), var(w, 0.0);
      if (mode == Mode::Train) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < w; ++c) mu[c] += stage(r, c);
        }
        for (double& m : mu) m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < w; ++c) {
            const double d = stage(r, c) - mu[c];
            var[c] += d * d;
          }
        }
        for (double& v : var) v /= static_cast<double>(n);
      } else {
        mu = bn.running_mean;
        var = bn.running_var;
      }
      Mat xhat(n, w);
      for (std::size_t c = 0; c < w; ++c) {
        const double inv_std = 1.0 / std::sqrt(var[c] + bn.eps);
        for (std::size_t r = 0; r < n; ++r) xhat(r, c) = (stage(r, c) - mu[c]) * inv_std;
      }
      Mat bn_out(n, w);
      for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t r = 0; r < n; ++r) bn_out(r, c) = bn.gamma[c] * xhat(r, c) + bn.beta[c];
      }
      if (trace) {
        trace->mu.push_back(std::move(mu));
        trace->var.push_back(std::move(var));
        trace->xhat.push_back(xhat);
        trace->bn_out.push_back(bn_out);
      }
      stage = std::move(bn_out);
    }

    for (std::size_t i = 0; i < stage.size(); ++i) {
      stage.data()[i] = std::max(0.0, stage.data()[i]);
    }
    if (use_dropout) {
      const Mat& mask = dropout->masks[l];
      for (std::size_t i = 0; i < stage.size(); ++i) stage.data()[i] *= mask.data()[i];
    }
    activation = std::move(stage);
  }
  throw Error(ErrorCode::InvalidArgument, "model has no layers");
}

void check_labels(std::span<const int> labels) {
  for (int label : labels) {
    if (label != 0 && label != 1) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "label " + std::to_string(label) + " is outside {0, 1}");
    }
  }
}

}  // namespace

ClassifierModel init_model(const ModelConfig& config, Rng& rng) {
  validate_config(config);
  ClassifierModel model;
  model.config = config;

  if (config.attention) {
    model.attention = AttentionParams{Mat(config.embedding_dim, config.embedding_dim)};
  }

  std::vector<std::size_t> widths;
  widths.push_back(config.input_width);
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l];
    const std::size_t fan_out = widths[l + 1];
    DenseParams layer{Mat(fan_out, fan_in), std::vector<double>(fan_out, 0.0)};
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t r = 0; r < fan_out; ++r) {
      for (std::size_t c = 0; c < fan_in; ++c) layer.W(r, c) = stddev * rng.normal();
    }
    model.layers.push_back(std::move(layer));
  }

  if (config.variant == Variant::ModelII) {
    for (std::size_t width : config.hidden) {
      BatchNormParams bn;
      bn.gamma.assign(width, 1.0);
      bn.beta.assign(width, 0.0);
      bn.running_mean.assign(width, 0.0);
      bn.running_var.assign(width, 1.0);
      bn.momentum = config.bn_momentum;
      bn.eps = config.bn_eps;
      model.batchnorm.push_back(std::move(bn));
    }
  }

  snap_model(model);
  return model;
}

AttentionOutput attention_apply(const AttentionParams& params, std::span<const double> e) {
  const std::size_t d = e.size();
  if (params.W.rows() != params.W.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "attention weight matrix must be square");
  }
  if (params.W.rows() != d) {
    throw Error(ErrorCode::DimensionMismatch,
                "attention weights are " + std::to_string(params.W.rows()) +
                    "-dimensional, embedding is " + std::to_string(d) + "-dimensional");
  }
  AttentionOutput out;
  out.gates.resize(d);
  out.refined.resize(d);

  std::vector<double> logits(d, 0.0);
  for (std::size_t r = 0; r < d; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += params.W(r, c) * e[c];
    logits[r] = acc;
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    out.gates[r] = std::exp(logits[r] - peak);
    total += out.gates[r];
  }
  for (std::size_t r = 0; r < d; ++r) {
    out.gates[r] /= total;
    out.refined[r] = out.gates[r] * e[r];
  }
  return out;
}

double bce_loss(std::span<const double> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "have " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) {
    throw Error(ErrorCode::EmptyInput, "no predictions to score");
  }
  check_labels(labels);
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (!std::isfinite(predictions[i])) {
      throw Error(ErrorCode::NonFiniteValue, "prediction is not finite");
    }
    const double p = clamp_prob(predictions[i]);
    total += labels[i] == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(predictions.size());
}

DropoutPlan sample_dropout(const ClassifierModel& model, std::size_t batch_rows, Rng& rng) {
  DropoutPlan plan;
  if (!has_dropout(model)) return plan;
  plan.enabled = true;
  const double p = model.config.dropout_p;
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t width : model.config.hidden) {
    Mat mask(batch_rows, width);
    for (std::size_t r = 0; r < batch_rows; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        mask(r, c) = rng.uniform() < p ? 0.0 : keep_scale;
      }
    }
    plan.masks.push_back(std::move(mask));
  }
  return plan;
}

std::vector<double> forward(const ClassifierModel& model, const Mat& features, Mode mode,
                            const DropoutPlan* dropout, ForwardCache* cache) {
  if (!cache) return run_forward(model, features, mode, dropout, nullptr);
  Trace trace;
  std::vector<double> scores = run_forward(model, features, mode, dropout, &trace);
  cache->dense_out = std::move(trace.z);
  cache->normalized = std::move(trace.xhat);
  cache->bn_mean = std::move(trace.mu);
  cache->bn_var = std::move(trace.var);
  return scores;
}

BatchResult backward(const ClassifierModel& model, const Mat& features,
                     std::span<const int> labels, const DropoutPlan* dropout) {
  if (labels.size() != features.rows()) {
    throw Error(ErrorCode::LengthMismatch,
                "have " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(features.rows()) + " rows");
  }
  check_labels(labels);

  Trace trace;
  std::vector<double> scores = run_forward(model, features, Mode::Train, dropout, &trace);
  const std::size_t n = features.rows();
  const bool use_dropout =
      dropout != nullptr && dropout->enabled && has_dropout(model);

  BatchResult result;
  result.loss = bce_loss(scores, labels);
  result.predictions = scores;
  result.bn_batch_mean = trace.mu;
  result.bn_batch_var = trace.var;
  result.grads.W.resize(model.layers.size());
  result.grads.b.resize(model.layers.size());
  if (has_batchnorm(model)) {
    result.grads.gamma.resize(model.batchnorm.size());
    result.grads.beta.resize(model.batchnorm.size());
  }

  // Combined sigmoid + BCE gradient at the output unit: (p - y) / n.
  Mat delta(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    delta(r, 0) = (scores[r] - static_cast<double>(labels[r])) / static_cast<double>(n);
  }

  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const DenseParams& layer = model.layers[l];
    result.grads.W[l] = matmul_tn(delta, trace.inputs[l]);
    result.grads.b[l].assign(layer.b.size(), 0.0);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      for (std::size_t c = 0; c < delta.cols(); ++c) result.grads.b[l][c] += delta(r, c);
    }
    Mat upstream = matmul_nn(delta, layer.W);  // gradient wrt the layer's input
    if (l == 0) {
      result.input_grad = std::move(upstream);
      break;
    }

    const std::size_t h = l - 1;  // hidden stage feeding this layer
    if (use_dropout) {
      const Mat& mask = dropout->masks[h];
      for (std::size_t i = 0; i < upstream.size(); ++i) upstream.data()[i] *= mask.data()[i];
    }
    if (has_batchnorm(model)) {
      const Mat& gate = trace.bn_out[h];  // ReLU applied to the BN output
      for (std::size_t i = 0; i < upstream.size(); ++i) {
        if (gate.data()[i] <= 0.0) upstream.data()[i] = 0.0;
      }
      const BatchNormParams& bn = model.batchnorm[h];
      const Mat& xhat = trace.xhat[h];
      const std::size_t w = upstream.cols();
      result.grads.gamma[h].assign(w, 0.0);
      result.grads.beta[h].assign(w, 0.0);
      std::vector<double> sum_dxhat(w, 0.0), sum_dxhat_xhat(w, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const double dy = upstream(r, c);
          result.grads.gamma[h][c] += dy * xhat(r, c);
          result.grads.beta[h][c] += dy;
          const double dxh = dy * bn.gamma[c];
          sum_dxhat[c] += dxh;
          sum_dxhat_xhat[c] += dxh * xhat(r, c);
        }
      }
      Mat dz(n, w);
      for (std::size_t c = 0; c < w; ++c) {
        const double inv_std = 1.0 / std::sqrt(trace.var[h][c] + bn.eps);
        const double scale = inv_std / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          const double dxh = upstream(r, c) * bn.gamma[c];
          dz(r, c) = scale * (static_cast<double>(n) * dxh - sum_dxhat[c] -
                              xhat(r, c) * sum_dxhat_xhat[c]);
        }
      }
      delta = std::move(dz);
    } else {
      const Mat& z = trace.z[h];  // ReLU applied directly to the dense output
      for (std::size_t i = 0; i < upstream.size(); ++i) {
        if (z.data()[i] <= 0.0) upstream.data()[i] = 0.0;
      }
      delta = std::move(upstream);
    }
  }
  return result;
}

GatedInputs gather_gated_inputs(const Dataset& dataset) {
  if (dataset.empty()) {
    throw Error(ErrorCode::EmptyInput, "no records to gather");
  }
  GatedInputs inputs;
  inputs.embeddings = Mat(dataset.size(), dataset.dim());
  inputs.ids.reserve(dataset.size());
  inputs.labels.reserve(dataset.size());
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    const EmbeddingRecord& record = dataset[r];
    for (std::size_t c = 0; c < record.vector.size(); ++c) {
      inputs.embeddings(r, c) = static_cast<double>(record.vector[c]);
    }
    inputs.ids.push_back(record.id);
    inputs.labels.push_back(record.label);
  }
  return inputs;
}

GatedFeatures gated_features(const ClassifierModel& model, const RetrievalContext& ctx,
                             const Mat& embeddings, const std::vector<std::string>& ids) {
  if (!model.attention) {
    throw Error(ErrorCode::InvalidArgument, "model has no attention parameters");
  }
  if (ctx.index == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "retrieval context has no index");
  }
  if (embeddings.cols() != ctx.index->dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "embeddings have dimension " + std::to_string(embeddings.cols()) +
                    ", index expects " + std::to_string(ctx.index->dim()));
  }
  if (!ids.empty() && ids.size() != embeddings.rows()) {
    throw Error(ErrorCode::LengthMismatch, "id list does not match the embedding rows");
  }
  if (ctx.scaler.dim() != ctx.k) {
    throw Error(ErrorCode::WidthMismatch,
                "scaler covers " + std::to_string(ctx.scaler.dim()) +
                    " features, retrieval produces " + std::to_string(ctx.k));
  }
  if (model.config.input_width != ctx.k) {
    throw Error(ErrorCode::WidthMismatch,
                "model expects " + std::to_string(model.config.input_width) +
                    " features, retrieval produces " + std::to_string(ctx.k));
  }

  const std::size_t n = embeddings.rows();
  const std::size_t d = embeddings.cols();
  GatedFeatures out{Mat(n, d), Mat(n, d), Mat(n, ctx.k), {}};
  out.neighbors.resize(n);
  std::vector<float> query(d);
  for (std::size_t r = 0; r < n; ++r) {
    const AttentionOutput att = attention_apply(*model.attention, embeddings.row(r));
    for (std::size_t c = 0; c < d; ++c) {
      out.gates(r, c) = att.gates[c];
      out.refined(r, c) = att.refined[c];
      query[c] = static_cast<float>(att.refined[c]);
    }
    std::optional<std::string_view> exclude;
    if (!ids.empty() && !ids[r].empty()) exclude = ids[r];
    const std::vector<SearchHit> hits = ctx.index->search(query, ctx.k, exclude);

    // The search picks the neighbors; the distances the classifier sees are
    // recomputed from the full-precision refined query so they are an exact,
    // differentiable function of the attention weights.
    out.neighbors[r].reserve(ctx.k);
    for (std::size_t j = 0; j < ctx.k; ++j) {
      const std::size_t pos = *ctx.index->position_of(hits[j].id);
      out.neighbors[r].push_back(pos);
      const std::span<const float> stored = ctx.index->vector_at(pos);
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = out.refined(r, c) - static_cast<double>(stored[c]);
        dist += diff * diff;
      }
      out.scaled(r, j) = (dist - ctx.scaler.mean[j]) / ctx.scaler.denom(j);
    }
  }
  return out;
}

std::vector<double> forward_gated(const ClassifierModel& model, const RetrievalContext& ctx,
                                  const GatedInputs& inputs, Mode mode,
                                  const DropoutPlan* dropout) {
  const GatedFeatures gf = gated_features(model, ctx, inputs.embeddings, inputs.ids);
  return forward(model, gf.scaled, mode, dropout);
}

BatchResult backward_gated(const ClassifierModel& model, const RetrievalContext& ctx,
                           const GatedInputs& inputs, const DropoutPlan* dropout) {
  const GatedFeatures gf = gated_features(model, ctx, inputs.embeddings, inputs.ids);
  BatchResult result = backward(model, gf.scaled, inputs.labels, dropout);

  const std::size_t n = inputs.embeddings.rows();
  const std::size_t d = inputs.embeddings.cols();
  Mat refined_grad(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < ctx.k; ++j) {
      // Chain through the fixed scaler affine and the squared distance.
      const double ddist = result.input_grad(r, j) / ctx.scaler.denom(j);
      const std::span<const float> stored = ctx.index->vector_at(gf.neighbors[r][j]);
      for (std::size_t c = 0; c < d; ++c) {
        refined_grad(r, c) +=
            2.0 * ddist * (gf.refined(r, c) - static_cast<double>(stored[c]));
      }
    }
  }

  // Softmax-gate backward: with a = softmax(W e) and refined = a ⊙ e,
  // d(loss)/d(logit) = a ⊙ (g ⊙ e - <a, g ⊙ e>), dW += outer(dlogit, e).
  Mat attention_grad(d, d);
  std::vector<double> da(d);
  for (std::size_t r = 0; r < n; ++r) {
    double weighted = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      da[c] = refined_grad(r, c) * inputs.embeddings(r, c);
      weighted += gf.gates(r, c) * da[c];
    }
    for (std::size_t i = 0; i < d; ++i) {
      const double dlogit = gf.gates(r, i) * (da[i] - weighted);
      if (dlogit == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) {
        attention_grad(i, c) += dlogit * inputs.embeddings(r, c);
      }
    }
  }
  result.grads.attention_W = std::move(attention_grad);
  result.input_grad = std::move(refined_grad);
  return result;
}

namespace {

void validate_train_config(const TrainConfig& config) {
  if (config.learning_rate < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "learning rate must be non-negative");
  }
  if (config.epochs == 0) {
    throw Error(ErrorCode::InvalidArgument, "epochs must be at least 1");
  }
  if (config.batch_size == 0) {
    throw Error(ErrorCode::InvalidArgument, "batch size must be at least 1");
  }
}

void apply_update(ClassifierModel& model, const Gradients& grads, double lr) {
  if (model.attention && grads.attention_W) {
    Mat& w = model.attention->W;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w.data()[i] = snap(w.data()[i] - lr * grads.attention_W->data()[i]);
    }
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    Mat& w = model.layers[l].W;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w.data()[i] = snap(w.data()[i] - lr * grads.W[l].data()[i]);
    }
    for (std::size_t c = 0; c < model.layers[l].b.size(); ++c) {
      model.layers[l].b[c] = snap(model.layers[l].b[c] - lr * grads.b[l][c]);
    }
  }
  for (std::size_t h = 0; h < model.batchnorm.size(); ++h) {
    BatchNormParams& bn = model.batchnorm[h];
    for (std::size_t c = 0; c < bn.gamma.size(); ++c) {
      bn.gamma[c] = snap(bn.gamma[c] - lr * grads.gamma[h][c]);
      bn.beta[c] = snap(bn.beta[c] - lr * grads.beta[h][c]);
    }
  }
}

void commit_running_stats(ClassifierModel& model, const BatchResult& result) {
  for (std::size_t h = 0; h < model.batchnorm.size(); ++h) {
    BatchNormParams& bn = model.batchnorm[h];
    for (std::size_t c = 0; c < bn.running_mean.size(); ++c) {
      bn.running_mean[c] = snap((1.0 - bn.momentum) * bn.running_mean[c] +
                                bn.momentum * result.bn_batch_mean[h][c]);
      bn.running_var[c] = snap((1.0 - bn.momentum) * bn.running_var[c] +
                               bn.momentum * result.bn_batch_var[h][c]);
    }
  }
}

// Shared SGD loop; `step` runs one batch given the selected row indices and a
// dropout plan, returning the batch result.
template <typename Step>
std::vector<EpochStats> sgd_loop(ClassifierModel& model, std::size_t n_rows,
                                 const TrainConfig& config, std::span<const int> labels,
                                 Step step) {
  validate_train_config(config);
  if (n_rows == 0) {
    throw Error(ErrorCode::EmptyTrainingSet, "no training rows");
  }
  check_labels(labels);

  Rng rng(config.seed);
  std::vector<std::size_t> order(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) order[i] = i;

  std::vector<EpochStats> history;
  history.reserve(config.epochs);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n_rows; begin += config.batch_size) {
      const std::size_t end = std::min(n_rows, begin + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + begin, end - begin);
      DropoutPlan plan = sample_dropout(model, rows.size(), rng);
      const BatchResult result = step(rows, plan.enabled ? &plan : nullptr);
      apply_update(model, result.grads, config.learning_rate);
      commit_running_stats(model, result);
      loss_sum += result.loss * static_cast<double>(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const int predicted = result.predictions[i] >= 0.5 ? 1 : 0;
        if (predicted == labels[rows[i]]) ++correct;
      }
    }
    history.push_back(EpochStats{epoch, loss_sum / static_cast<double>(n_rows),
                                 static_cast<double>(correct) / static_cast<double>(n_rows)});
  }
  return history;
}

}  // namespace

std::vector<EpochStats> train(ClassifierModel& model, const Mat& features,
                              std::span<const int> labels, const TrainConfig& config) {
  if (labels.size() != features.rows()) {
    throw Error(ErrorCode::LengthMismatch,
                "have " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(features.rows()) + " rows");
  }
  return sgd_loop(model, features.rows(), config, labels,
                  [&](std::span<const std::size_t> rows, const DropoutPlan* plan) {
                    Mat batch(rows.size(), features.cols());
                    std::vector<int> batch_labels(rows.size());
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                      for (std::size_t c = 0; c < features.cols(); ++c) {
                        batch(i, c) = features(rows[i], c);
                      }
                      batch_labels[i] = labels[rows[i]];
                    }
                    return backward(model, batch, batch_labels, plan);
                  });
}

std::vector<EpochStats> train_gated(ClassifierModel& model, const RetrievalContext& ctx,
                                    const GatedInputs& inputs, const TrainConfig& config) {
  if (inputs.labels.size() != inputs.embeddings.rows()) {
    throw Error(ErrorCode::LengthMismatch,
                "have " + std::to_string(inputs.labels.size()) + " labels for " +
                    std::to_string(inputs.embeddings.rows()) + " rows");
  }
  if (config.k != ctx.k) {
    throw Error(ErrorCode::InvalidArgument,
                "train config k=" + std::to_string(config.k) +
                    " disagrees with the retrieval context k=" + std::to_string(ctx.k));
  }
  return sgd_loop(model, inputs.embeddings.rows(), config, inputs.labels,
                  [&](std::span<const std::size_t> rows, const DropoutPlan* plan) {
                    GatedInputs batch;
                    batch.embeddings = Mat(rows.size(), inputs.embeddings.cols());
                    batch.ids.resize(rows.size());
                    batch.labels.resize(rows.size());
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                      for (std::size_t c = 0; c < inputs.embeddings.cols(); ++c) {
                        batch.embeddings(i, c) = inputs.embeddings(rows[i], c);
                      }
                      if (!inputs.ids.empty()) batch.ids[i] = inputs.ids[rows[i]];
                      batch.labels[i] = inputs.labels[rows[i]];
                    }
                    return backward_gated(model, ctx, batch, plan);
                  });
}

Prediction predict(const ClassifierModel& model, const Mat& features) {
  Prediction out;
  out.scores = forward(model, features, Mode::Eval);
  out.labels.reserve(out.scores.size());
  for (double score : out.scores) out.labels.push_back(score >= 0.5 ? 1 : 0);
  return out;
}

Prediction predict_gated(const ClassifierModel& model, const RetrievalContext& ctx,
                         const GatedInputs& inputs) {
  Prediction out;
  out.scores = forward_gated(model, ctx, inputs, Mode::Eval);
  out.labels.reserve(out.scores.size());
  for (double score : out.scores) out.labels.push_back(score >= 0.5 ? 1 : 0);
  return out;
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  }
  detail::write_bytes(out, kModelMagic, 6);
  out.put(model.config.variant == Variant::ModelII ? 1 : 0);
  out.put(model.config.attention ? 1 : 0);
  out.put(model.batchnorm.empty() ? 0 : 1);
  detail::write_u32(out, static_cast<std::uint32_t>(model.config.input_width));
  detail::write_u32(out, static_cast<std::uint32_t>(model.config.embedding_dim));
  detail::write_u32(out, static_cast<std::uint32_t>(model.config.hidden.size()));
  for (std::size_t width : model.config.hidden) {
    detail::write_u32(out, static_cast<std::uint32_t>(width));
  }
  detail::write_f64(out, model.config.dropout_p);
  detail::write_f64(out, model.config.bn_momentum);
  detail::write_f64(out, model.config.bn_eps);

  const auto write_tensor = [&out](const double* data, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      detail::write_f32(out, static_cast<float>(data[i]));
    }
  };
  if (model.attention) write_tensor(model.attention->W.data(), model.attention->W.size());
  for (const DenseParams& layer : model.layers) {
    write_tensor(layer.W.data(), layer.W.size());
    write_tensor(layer.b.data(), layer.b.size());
  }
  for (const BatchNormParams& bn : model.batchnorm) {
    write_tensor(bn.gamma.data(), bn.gamma.size());
    write_tensor(bn.beta.data(), bn.beta.size());
    write_tensor(bn.running_mean.data(), bn.running_mean.size());
    write_tensor(bn.running_var.data(), bn.running_var.size());
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + path.string() + "'");
  }
}

ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  }
  detail::check_magic(in, kModelMagic, "model file");

  const auto read_u8 = [&in](const char* what) {
    char byte = 0;
    detail::read_exact(in, &byte, 1, what);
    return static_cast<unsigned char>(byte);
  };
  const unsigned variant_byte = read_u8("variant flag");
  const unsigned attention_byte = read_u8("attention flag");
  const unsigned bn_byte = read_u8("batch-norm flag");
  if (variant_byte > 1 || attention_byte > 1 || bn_byte > 1) {
    throw Error(ErrorCode::IoError, "model file header has an out-of-range flag");
  }

  ModelConfig config;
  config.variant = variant_byte == 1 ? Variant::ModelII : Variant::ModelI;
  config.attention = attention_byte == 1;
  config.input_width = detail::read_u32(in, "input width");
  config.embedding_dim = detail::read_u32(in, "embedding dimension");
  const std::uint32_t n_hidden = detail::read_u32(in, "hidden layer count");
  if (n_hidden == 0 || n_hidden > 64) {
    throw Error(ErrorCode::IoError, "model file declares an implausible hidden layer count");
  }
  config.hidden.clear();
  for (std::uint32_t l = 0; l < n_hidden; ++l) {
    config.hidden.push_back(detail::read_u32(in, "hidden width"));
  }
  config.dropout_p = detail::read_f64(in, "dropout probability");
  config.bn_momentum = detail::read_f64(in, "batch-norm momentum");
  config.bn_eps = detail::read_f64(in, "batch-norm epsilon");
  validate_config(config);
  if (bn_byte != (config.variant == Variant::ModelII ? 1u : 0u)) {
    throw Error(ErrorCode::IoError, "model file batch-norm flag disagrees with the variant");
  }

  ClassifierModel model;
  model.config = config;
  const auto read_tensor = [&in](double* data, std::size_t count, const char* what) {
    for (std::size_t i = 0; i < count; ++i) {
      data[i] = static_cast<double>(detail::read_f32(in, what));
      if (!std::isfinite(data[i])) {
        throw Error(ErrorCode::NonFiniteValue,
                    std::string("model file contains a non-finite ") + what);
      }
    }
  };
  if (config.attention) {
    model.attention = AttentionParams{Mat(config.embedding_dim, config.embedding_dim)};
    read_tensor(model.attention->W.data(), model.attention->W.size(), "attention weight");
  }
  std::vector<std::size_t> widths;
  widths.push_back(config.input_width);
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(1);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseParams layer{Mat(widths[l + 1], widths[l]), std::vector<double>(widths[l + 1], 0.0)};
    read_tensor(layer.W.data(), layer.W.size(), "dense weight");
    read_tensor(layer.b.data(), layer.b.size(), "dense bias");
    model.layers.push_back(std::move(layer));
  }
  if (config.variant == Variant::ModelII) {
    for (std::size_t width : config.hidden) {
      BatchNormParams bn;
      bn.gamma.assign(width, 0.0);
      bn.beta.assign(width, 0.0);
      bn.running_mean.assign(width, 0.0);
      bn.running_var.assign(width, 0.0);
      bn.momentum = config.bn_momentum;
      bn.eps = config.bn_eps;
      read_tensor(bn.gamma.data(), width, "batch-norm gamma");
      read_tensor(bn.beta.data(), width, "batch-norm beta");
      read_tensor(bn.running_mean.data(), width, "batch-norm running mean");
      read_tensor(bn.running_var.data(), width, "batch-norm running variance");
      model.batchnorm.push_back(std::move(bn));
    }
  }
  detail::expect_eof(in, "model file");
  return model;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  }
  out << "epoch,loss,train_accuracy\n";
  char buffer[64];
  for (const EpochStats& stats : history) {
    out << stats.epoch << ',';
    std::snprintf(buffer, sizeof(buffer), "%.17g", stats.loss);
    out << buffer << ',';
    std::snprintf(buffer, sizeof(buffer), "%.17g", stats.train_accuracy);
    out << buffer << '\n';
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + path.string() + "'");
  }
}

}  // namespace nexus::net
