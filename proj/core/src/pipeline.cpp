#include "nexus/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "nexus/error.hpp"
#include "nexus/preprocess.hpp"
#include "nexus/version.hpp"

namespace nexus::pipeline {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// stage bookkeeping
// ---------------------------------------------------------------------------

class StageClock {
 public:
  template <typename F>
  auto run(const std::string& name, F&& body) -> decltype(body()) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(body())>) {
        body();
        record(name, start);
      } else {
        auto value = body();
        record(name, start);
        return value;
      }
    } catch (const Error& e) {
      throw Error(e.code(), "stage '" + name + "': " + e.detail());
    }
  }

  const std::vector<std::pair<std::string, double>>& timings() const { return timings_; }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point start) {
    const std::chrono::duration<double, std::milli> elapsed =
        std::chrono::steady_clock::now() - start;
    timings_.emplace_back(name, elapsed.count());
  }

  std::vector<std::pair<std::string, double>> timings_;
};

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

[[noreturn]] void config_error(const std::string& what) {
  throw Error(ErrorCode::ConfigError, what);
}

double as_number(const json& value, const char* key) {
  if (!value.is_number()) config_error(std::string("key '") + key + "' must be a number");
  return value.get<double>();
}

std::uint64_t as_count(const json& value, const char* key) {
  if (!value.is_number_integer() && !value.is_number_unsigned()) {
    config_error(std::string("key '") + key + "' must be an integer");
  }
  if (value.is_number_integer() && value.get<std::int64_t>() < 0) {
    config_error(std::string("key '") + key + "' must be non-negative");
  }
  return value.get<std::uint64_t>();
}

bool as_bool(const json& value, const char* key) {
  if (!value.is_boolean()) config_error(std::string("key '") + key + "' must be a boolean");
  return value.get<bool>();
}

std::string as_string(const json& value, const char* key) {
  if (!value.is_string()) config_error(std::string("key '") + key + "' must be a string");
  return value.get<std::string>();
}

ScalerParams identity_scaler(std::size_t width) {
  ScalerParams params;
  params.mean.assign(width, 0.0);
  params.std_dev.assign(width, 1.0);
  return params;
}

std::size_t feature_width(const PipelineConfig& config) {
  if (config.attention) return config.k;
  return config.include_cosines ? 2 * config.k : config.k;
}

std::uint64_t synthetic_seed(const PipelineConfig& config) {
  if (config.synthetic.seed) return *config.synthetic.seed;
  return Rng(config.seed).derive(1).seed();
}

std::uint64_t split_seed(const PipelineConfig& config) { return Rng(config.seed).derive(2).seed(); }
Rng init_rng(const PipelineConfig& config) { return Rng(config.seed).derive(3); }
std::uint64_t train_seed(const PipelineConfig& config) { return Rng(config.seed).derive(4).seed(); }
std::uint64_t grid_seed(const PipelineConfig& config) { return Rng(config.seed).derive(5).seed(); }

}  // namespace

std::string_view to_string(RelevanceRule rule) {
  switch (rule) {
    case RelevanceRule::Cluster: return "cluster";
    case RelevanceRule::File: return "file";
  }
  throw Error(ErrorCode::InvalidArgument, "unhandled relevance rule");
}

RelevanceRule relevance_rule_from_string(std::string_view name) {
  if (name == "cluster") return RelevanceRule::Cluster;
  if (name == "file") return RelevanceRule::File;
  config_error("unknown relevance rule '" + std::string(name) +
               "' (expected cluster or file)");
}

std::vector<std::size_t> hidden_widths(const std::string& preset) {
  if (preset == "default") return {128, 64};
  if (preset == "compact") return {64, 32};
  config_error("unknown hidden_preset '" + preset + "' (expected default or compact)");
}

PipelineConfig config_from_json(const std::string& text) {
  const json document = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (document.is_discarded() || !document.is_object()) {
    config_error("configuration must be a JSON object");
  }
  if (!document.contains("version")) config_error("missing required key 'version'");

  PipelineConfig config;
  bool attention_given = false;
  bool seen_synthetic_key = false;
  for (const auto& [key, value] : document.items()) {
    if (key == "version") {
      if (as_count(value, "version") != 1) config_error("unsupported config version");
    } else if (key == "data") {
      config.data_path = as_string(value, "data");
    } else if (key == "synthetic_real") {
      config.synthetic.n_real = as_count(value, "synthetic_real");
      seen_synthetic_key = true;
    } else if (key == "synthetic_fake") {
      config.synthetic.n_fake = as_count(value, "synthetic_fake");
      seen_synthetic_key = true;
    } else if (key == "synthetic_dim") {
      config.synthetic.dim = as_count(value, "synthetic_dim");
      seen_synthetic_key = true;
    } else if (key == "synthetic_separation") {
      config.synthetic.separation = as_number(value, "synthetic_separation");
      seen_synthetic_key = true;
    } else if (key == "synthetic_seed") {
      config.synthetic.seed = as_count(value, "synthetic_seed");
      seen_synthetic_key = true;
    } else if (key == "model_tag") {
      try {
        config.model_tag = model_tag_from_string(as_string(value, "model_tag"));
      } catch (const Error& e) {
        config_error(e.detail());
      }
    } else if (key == "variant") {
      const std::string name = as_string(value, "variant");
      if (name == "model1") {
        config.variant = net::Variant::ModelI;
      } else if (name == "model2") {
        config.variant = net::Variant::ModelII;
      } else {
        config_error("unknown variant '" + name + "' (expected model1 or model2)");
      }
    } else if (key == "attention") {
      config.attention = as_bool(value, "attention");
      attention_given = true;
    } else if (key == "k") {
      config.k = as_count(value, "k");
    } else if (key == "train_fraction") {
      config.train_fraction = as_number(value, "train_fraction");
    } else if (key == "stratified") {
      config.stratified = as_bool(value, "stratified");
    } else if (key == "scale_features") {
      config.scale_features = as_bool(value, "scale_features");
    } else if (key == "include_cosines") {
      config.include_cosines = as_bool(value, "include_cosines");
    } else if (key == "hidden_preset") {
      config.hidden_preset = as_string(value, "hidden_preset");
    } else if (key == "dropout") {
      config.dropout = as_number(value, "dropout");
    } else if (key == "learning_rate") {
      config.learning_rate = as_number(value, "learning_rate");
    } else if (key == "epochs") {
      config.epochs = as_count(value, "epochs");
    } else if (key == "batch_size") {
      config.batch_size = as_count(value, "batch_size");
    } else if (key == "seed") {
      config.seed = as_count(value, "seed");
    } else if (key == "out_dir") {
      config.out_dir = as_string(value, "out_dir");
    } else if (key == "relevance_rule") {
      config.relevance_rule = relevance_rule_from_string(as_string(value, "relevance_rule"));
    } else if (key == "relevance_file") {
      config.relevance_file = as_string(value, "relevance_file");
    } else if (key == "ranking_cutoff") {
      config.ranking_cutoff = as_count(value, "ranking_cutoff");
    } else if (key == "export_features") {
      config.export_features = as_bool(value, "export_features");
    } else {
      config_error("unknown key '" + key + "'");
    }
  }
  if (config.data_path && seen_synthetic_key) {
    config_error("'data' and 'synthetic_*' keys are mutually exclusive");
  }
  if (!attention_given) config.attention = config.variant == net::Variant::ModelII;
  return config;
}

PipelineConfig config_from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return config_from_json(buffer.str());
}

std::string config_to_json(const PipelineConfig& config) {
  ordered_json object;
  object["version"] = 1;
  if (config.data_path) {
    object["data"] = *config.data_path;
  } else {
    object["synthetic_real"] = config.synthetic.n_real;
    object["synthetic_fake"] = config.synthetic.n_fake;
    object["synthetic_dim"] = config.synthetic.dim;
    object["synthetic_separation"] = config.synthetic.separation;
    if (config.synthetic.seed) object["synthetic_seed"] = *config.synthetic.seed;
  }
  if (config.model_tag) object["model_tag"] = std::string(nexus::to_string(*config.model_tag));
  object["variant"] = config.variant == net::Variant::ModelII ? "model2" : "model1";
  object["attention"] = config.attention;
  object["k"] = config.k;
  object["train_fraction"] = config.train_fraction;
  object["stratified"] = config.stratified;
  object["scale_features"] = config.scale_features;
  object["include_cosines"] = config.include_cosines;
  object["hidden_preset"] = config.hidden_preset;
  object["dropout"] = config.dropout;
  object["learning_rate"] = config.learning_rate;
  object["epochs"] = config.epochs;
  object["batch_size"] = config.batch_size;
  object["seed"] = config.seed;
  object["out_dir"] = config.out_dir;
  object["relevance_rule"] = std::string(to_string(config.relevance_rule));
  if (config.relevance_rule == RelevanceRule::File) {
    object["relevance_file"] = config.relevance_file;
  }
  object["ranking_cutoff"] = config.ranking_cutoff;
  object["export_features"] = config.export_features;
  return object.dump(2) + "\n";
}

void validate(const PipelineConfig& config) {
  if (config.k == 0) config_error("k must be at least 1");
  if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0)) {
    config_error("train_fraction must lie strictly between 0 and 1");
  }
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) {
    config_error("dropout must lie in [0, 1)");
  }
  if (config.learning_rate < 0.0) config_error("learning_rate must be non-negative");
  if (config.epochs == 0) config_error("epochs must be at least 1");
  if (config.batch_size == 0) config_error("batch_size must be at least 1");
  if (config.ranking_cutoff == 0) config_error("ranking_cutoff must be at least 1");
  hidden_widths(config.hidden_preset);
  if (config.attention && config.variant != net::Variant::ModelII) {
    config_error("attention requires variant model2");
  }
  if (config.attention && config.include_cosines) {
    config_error("include_cosines applies only to the non-attention routes");
  }
  if (!config.data_path) {
    if (config.synthetic.dim == 0) config_error("synthetic_dim must be at least 1");
    if (config.synthetic.n_real + config.synthetic.n_fake < 2) {
      config_error("synthetic data needs at least two records");
    }
    if (config.synthetic.separation < 0.0) {
      config_error("synthetic_separation must be non-negative");
    }
  } else if (!std::filesystem::exists(*config.data_path)) {
    config_error("data file '" + *config.data_path + "' does not exist");
  }
  if (config.relevance_rule == RelevanceRule::File) {
    if (config.relevance_file.empty()) {
      config_error("relevance_rule 'file' requires relevance_file");
    }
    if (!std::filesystem::exists(config.relevance_file)) {
      config_error("relevance file '" + config.relevance_file + "' does not exist");
    }
  } else if (!config.relevance_file.empty()) {
    config_error("relevance_file requires relevance_rule 'file'");
  }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

IngestSummary summarize(const Dataset& dataset) {
  IngestSummary summary;
  summary.total = dataset.size();
  summary.real = dataset.count_label(1);
  summary.fake = dataset.count_label(0);
  summary.dim = dataset.dim();
  for (ModelTag tag : dataset.model_tags()) {
    std::size_t count = 0;
    for (const EmbeddingRecord& record : dataset.records()) {
      if (record.model == tag) ++count;
    }
    summary.per_model.emplace_back(std::string(nexus::to_string(tag)), count);
  }
  return summary;
}

std::string to_table(const IngestSummary& summary) {
  std::ostringstream out;
  char line[128];
  out << "   Total    Fake    Real     Dim\n";
  std::snprintf(line, sizeof(line), "%8zu %7zu %7zu %7zu\n", summary.total, summary.fake,
                summary.real, summary.dim);
  out << line;
  out << "per-model:";
  for (const auto& [tag, count] : summary.per_model) out << ' ' << tag << '=' << count;
  out << '\n';
  return out.str();
}

std::string to_json(const IngestSummary& summary) {
  ordered_json object;
  object["total"] = summary.total;
  object["fake"] = summary.fake;
  object["real"] = summary.real;
  object["dim"] = summary.dim;
  object["per_model"] = ordered_json::object();
  for (const auto& [tag, count] : summary.per_model) object["per_model"][tag] = count;
  return object.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// hashing and manifest
// ---------------------------------------------------------------------------

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for hashing");
  }
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(ErrorCode::IoError, "cannot initialize the digest context");
  }
  char buffer[1 << 16];
  while (in) {
    in.read(buffer, sizeof(buffer));
    const std::streamsize got = in.gcount();
    if (got > 0 && EVP_DigestUpdate(ctx, buffer, static_cast<std::size_t>(got)) != 1) {
      EVP_MD_CTX_free(ctx);
      throw Error(ErrorCode::IoError, "digest update failed");
    }
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_DigestFinal_ex(ctx, digest, &length) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(ErrorCode::IoError, "digest finalization failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  }
  out << text;
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + path.string() + "'");
  }
}

ordered_json manifest_skeleton(const PipelineConfig& config) {
  ordered_json manifest;
  manifest["tool_version"] = kVersion;
  manifest["seed"] = config.seed;
  manifest["config"] = ordered_json::parse(config_to_json(config));
  manifest["inputs"] = ordered_json::object();
  if (config.data_path) manifest["inputs"][*config.data_path] = sha256_file(*config.data_path);
  if (config.relevance_rule == RelevanceRule::File) {
    manifest["inputs"][config.relevance_file] = sha256_file(config.relevance_file);
  }
  manifest["stages"] = ordered_json::array();
  return manifest;
}

void write_manifest(const std::filesystem::path& run_dir, ordered_json manifest,
                    const StageClock* clock) {
  if (clock != nullptr) {
    for (const auto& [name, ms] : clock->timings()) {
      ordered_json stage;
      stage["name"] = name;
      stage["ms"] = ms;
      manifest["stages"].push_back(std::move(stage));
    }
  }
  write_text_file(run_dir / kManifestFile, manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// shared run machinery
// ---------------------------------------------------------------------------

std::vector<int> labels_of(const Dataset& dataset) {
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (const EmbeddingRecord& record : dataset.records()) labels.push_back(record.label);
  return labels;
}

// Builds the retrieval index over the training split's real-class records.
// For the attention route the stored vectors are the embeddings refined with
// the model's current (initial) gates; otherwise raw embeddings.
FlatIndex build_train_index(const Dataset& train, const net::ClassifierModel& model,
                            bool attention) {
  std::vector<IndexEntry> entries;
  std::vector<double> embedding(train.dim());
  for (const EmbeddingRecord& record : train.records()) {
    if (record.label != 1) continue;
    IndexEntry entry;
    entry.id = record.id;
    if (attention) {
      for (std::size_t c = 0; c < record.vector.size(); ++c) {
        embedding[c] = static_cast<double>(record.vector[c]);
      }
      const net::AttentionOutput refined = net::attention_apply(*model.attention, embedding);
      entry.values.reserve(train.dim());
      for (double v : refined.refined) entry.values.push_back(static_cast<float>(v));
    } else {
      entry.values = record.vector;
    }
    entries.push_back(std::move(entry));
  }
  if (entries.empty()) {
    throw Error(ErrorCode::EmptyClass, "the training split has no real-class records");
  }
  return FlatIndex::build(std::move(entries), train.dim());
}

// Raw (pre-scaler) retrieval features for a dataset, on whichever route the
// config selects.
Mat raw_features(const PipelineConfig& config, const net::ClassifierModel& model,
                 const FlatIndex& index, const Dataset& dataset) {
  if (config.attention) {
    net::RetrievalContext ctx{&index, identity_scaler(config.k), config.k};
    const net::GatedInputs inputs = net::gather_gated_inputs(dataset);
    return net::gated_features(model, ctx, inputs.embeddings, inputs.ids).scaled;
  }
  return retrieval_feature_matrix(index, dataset, config.k, config.include_cosines).features;
}

net::Prediction predict_dataset(const PipelineConfig& config, const net::ClassifierModel& model,
                                const FlatIndex& index, const ScalerParams& scaler,
                                const Dataset& dataset) {
  if (config.attention) {
    net::RetrievalContext ctx{&index, scaler, config.k};
    return net::predict_gated(model, ctx, net::gather_gated_inputs(dataset));
  }
  const Mat features =
      retrieval_feature_matrix(index, dataset, config.k, config.include_cosines).features;
  return net::predict(model, transform(features, scaler));
}

// The vector a record contributes as a retrieval query, on the active route:
// the attention-refined embedding (current weights) or the raw embedding.
std::vector<float> query_vector(const PipelineConfig& config, const net::ClassifierModel& model,
                                const EmbeddingRecord& record) {
  if (!config.attention) return record.vector;
  std::vector<double> embedding(record.vector.size());
  for (std::size_t c = 0; c < record.vector.size(); ++c) {
    embedding[c] = static_cast<double>(record.vector[c]);
  }
  const net::AttentionOutput refined = net::attention_apply(*model.attention, embedding);
  std::vector<float> out(record.vector.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = static_cast<float>(refined.refined[c]);
  return out;
}

std::unordered_map<std::string, std::unordered_set<std::string>> load_relevance_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  }
  std::unordered_map<std::string, std::unordered_set<std::string>> judgments;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json parsed = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("query_id") ||
        !parsed["query_id"].is_string() || !parsed.contains("relevant_ids") ||
        !parsed["relevant_ids"].is_array()) {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(line_number) + " of '" + path.string() +
                      "': expected {\"query_id\": ..., \"relevant_ids\": [...]}");
    }
    auto& set = judgments[parsed["query_id"].get<std::string>()];
    for (const json& id : parsed["relevant_ids"]) {
      if (!id.is_string()) {
        throw Error(ErrorCode::ParseError,
                    "line " + std::to_string(line_number) + " of '" + path.string() +
                        "': relevant_ids must contain strings");
      }
      set.insert(id.get<std::string>());
    }
  }
  return judgments;
}

// Ranking metrics over per-fake-query retrieval lists against the real-news
// index. Queries whose candidate universe contains nothing relevant under the
// active rule are dropped (and counted).
std::optional<RankingMetrics> ranking_metrics(const PipelineConfig& config,
                                              const net::ClassifierModel& model,
                                              const FlatIndex& index, const Dataset& train,
                                              const Dataset& eval_data) {
  std::vector<const EmbeddingRecord*> queries;
  for (const EmbeddingRecord& record : eval_data.records()) {
    if (record.label == 0) queries.push_back(&record);
  }
  if (queries.empty()) return std::nullopt;

  // Per-candidate relevance context for the cluster rule: which train-split
  // class centroid each raw vector falls nearest to.
  std::vector<double> centroid_real, centroid_fake;
  std::unordered_map<std::string_view, int> candidate_cluster;
  std::size_t cluster_members[2] = {0, 0};
  const auto nearest_cluster = [&](std::span<const float> vec) {
    double d_real = 0.0, d_fake = 0.0;
    for (std::size_t c = 0; c < vec.size(); ++c) {
      const double v = static_cast<double>(vec[c]);
      d_real += (v - centroid_real[c]) * (v - centroid_real[c]);
      d_fake += (v - centroid_fake[c]) * (v - centroid_fake[c]);
    }
    return d_real <= d_fake ? 1 : 0;  // tie goes to the real-class centroid
  };
  if (config.relevance_rule == RelevanceRule::Cluster) {
    centroid_real.assign(train.dim(), 0.0);
    centroid_fake.assign(train.dim(), 0.0);
    std::size_t n_real = 0, n_fake = 0;
    for (const EmbeddingRecord& record : train.records()) {
      auto& centroid = record.label == 1 ? centroid_real : centroid_fake;
      (record.label == 1 ? n_real : n_fake) += 1;
      for (std::size_t c = 0; c < record.vector.size(); ++c) {
        centroid[c] += static_cast<double>(record.vector[c]);
      }
    }
    if (n_real == 0 || n_fake == 0) {
      throw Error(ErrorCode::EmptyClass,
                  "the cluster relevance rule needs both classes in the training split");
    }
    for (double& v : centroid_real) v /= static_cast<double>(n_real);
    for (double& v : centroid_fake) v /= static_cast<double>(n_fake);
    for (const EmbeddingRecord& record : train.records()) {
      if (record.label != 1) continue;
      const int cluster = nearest_cluster(record.vector);
      candidate_cluster.emplace(record.id, cluster);
      cluster_members[cluster] += 1;
    }
  }

  std::unordered_map<std::string, std::unordered_set<std::string>> judgments;
  if (config.relevance_rule == RelevanceRule::File) {
    judgments = load_relevance_file(config.relevance_file);
  }

  const std::size_t depth = std::min(config.ranking_cutoff, index.size());
  std::vector<RankedList> lists;
  std::size_t dropped = 0;
  for (const EmbeddingRecord* query : queries) {
    std::size_t universe = 0;
    const std::unordered_set<std::string>* judged = nullptr;
    int query_cluster = 0;
    switch (config.relevance_rule) {
      case RelevanceRule::Cluster:
        query_cluster = nearest_cluster(query->vector);
        universe = cluster_members[query_cluster];
        break;
      case RelevanceRule::File: {
        const auto it = judgments.find(query->id);
        if (it != judgments.end()) {
          judged = &it->second;
          for (const std::string& id : *judged) {
            if (index.position_of(id)) ++universe;
          }
        }
        break;
      }
    }
    if (universe == 0) {
      ++dropped;
      continue;
    }

    const std::vector<SearchHit> hits =
        index.search(query_vector(config, model, *query), depth, query->id);
    RankedList list;
    list.total_relevant = universe;
    list.ids.reserve(hits.size());
    list.relevance.reserve(hits.size());
    for (const SearchHit& hit : hits) {
      int relevant = 0;
      switch (config.relevance_rule) {
        case RelevanceRule::Cluster:
          relevant = candidate_cluster.at(hit.id) == query_cluster ? 1 : 0;
          break;
        case RelevanceRule::File:
          relevant = judged->count(hit.id) > 0 ? 1 : 0;
          break;
      }
      list.ids.push_back(hit.id);
      list.relevance.push_back(relevant);
    }
    lists.push_back(std::move(list));
  }

  RankingMetrics metrics;
  metrics.cutoff = config.ranking_cutoff;
  metrics.evaluated_queries = lists.size();
  metrics.dropped_queries = dropped;
  if (!lists.empty()) {
    metrics.mrr = mrr_at_k(lists, config.ranking_cutoff);
    metrics.recall = recall_at_k(lists, config.ranking_cutoff);
    metrics.ndcg = ndcg_at_k(lists, config.ranking_cutoff);
  }
  return metrics;
}

struct Evaluation {
  EvalReport report;
  std::vector<RocPoint> roc;
};

Evaluation evaluate_model(const PipelineConfig& config, const net::ClassifierModel& model,
                          const FlatIndex& index, const ScalerParams& scaler,
                          const Dataset& train, const Dataset& eval_data) {
  const net::Prediction prediction = predict_dataset(config, model, index, scaler, eval_data);
  const std::vector<int> labels = labels_of(eval_data);
  Evaluation evaluation;
  evaluation.report.classification = classification_metrics(labels, prediction.labels);
  evaluation.report.auc = roc_auc(labels, prediction.scores);
  evaluation.roc = roc_curve(labels, prediction.scores);
  evaluation.report.ranking = ranking_metrics(config, model, index, train, eval_data);
  return evaluation;
}

}  // namespace

Dataset load_configured_dataset(const PipelineConfig& config) {
  Dataset dataset;
  if (config.data_path) {
    dataset = load_jsonl(*config.data_path);
  } else {
    SyntheticSpec spec;
    spec.n_real = config.synthetic.n_real;
    spec.n_fake = config.synthetic.n_fake;
    spec.dim = config.synthetic.dim;
    spec.separation = config.synthetic.separation;
    spec.seed = synthetic_seed(config);
    dataset = synthesize(spec);
  }
  if (config.model_tag) {
    dataset = dataset.filter_by_model(*config.model_tag);
    if (dataset.empty()) {
      throw Error(ErrorCode::EmptyInput,
                  "no records carry model tag '" +
                      std::string(nexus::to_string(*config.model_tag)) + "'");
    }
  } else if (dataset.model_tags().size() > 1) {
    config_error("the dataset mixes model tags; set model_tag to pick one");
  }
  return dataset;
}

IngestSummary run_ingest(const PipelineConfig& config) {
  validate(config);
  const Dataset dataset = load_configured_dataset(config);
  const IngestSummary summary = summarize(dataset);
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    write_text_file(std::filesystem::path(config.out_dir) / kIngestFile, to_json(summary));
  }
  return summary;
}

TrainOutcome run_train(const PipelineConfig& config) {
  validate(config);
  if (config.out_dir.empty()) config_error("training requires out_dir");
  const std::filesystem::path run_dir(config.out_dir);
  std::filesystem::create_directories(run_dir);

  StageClock clock;
  const Dataset dataset =
      clock.run("load", [&] { return load_configured_dataset(config); });

  ordered_json manifest = manifest_skeleton(config);
  write_manifest(run_dir, manifest, nullptr);  // before any results

  const SplitResult parts = clock.run("split", [&] {
    SplitResult result =
        split(dataset, SplitSpec{config.train_fraction, config.stratified, split_seed(config)});
    if (result.test.empty()) {
      throw Error(ErrorCode::TooFewRows, "the test split is empty; lower train_fraction");
    }
    return result;
  });

  net::ModelConfig mcfg;
  mcfg.variant = config.variant;
  mcfg.attention = config.attention;
  mcfg.input_width = feature_width(config);
  mcfg.embedding_dim = config.attention ? dataset.dim() : 0;
  mcfg.hidden = hidden_widths(config.hidden_preset);
  mcfg.dropout_p = config.dropout;
  Rng model_rng = init_rng(config);
  net::ClassifierModel model = net::init_model(mcfg, model_rng);

  const FlatIndex index = clock.run(
      "index", [&] { return build_train_index(parts.train, model, config.attention); });

  const Mat train_raw =
      clock.run("features", [&] { return raw_features(config, model, index, parts.train); });

  const ScalerParams scaler = clock.run("scaler", [&] {
    return config.scale_features ? fit_scaler(train_raw)
                                 : identity_scaler(feature_width(config));
  });

  net::TrainConfig tcfg;
  tcfg.learning_rate = config.learning_rate;
  tcfg.epochs = config.epochs;
  tcfg.batch_size = config.batch_size;
  tcfg.seed = train_seed(config);
  tcfg.k = config.k;
  const std::vector<int> train_labels = labels_of(parts.train);
  const std::vector<net::EpochStats> history = clock.run("train", [&] {
    if (config.attention) {
      const net::RetrievalContext ctx{&index, scaler, config.k};
      return net::train_gated(model, ctx, net::gather_gated_inputs(parts.train), tcfg);
    }
    return net::train(model, transform(train_raw, scaler), train_labels, tcfg);
  });

  const Evaluation evaluation = clock.run("evaluate", [&] {
    return evaluate_model(config, model, index, scaler, parts.train, parts.test);
  });

  clock.run("artifacts", [&] {
    index.save(run_dir / kIndexFile);
    save_scaler(scaler, run_dir / kScalerFile);
    net::save_model(model, run_dir / kModelFile);
    net::write_history_csv(history, run_dir / kHistoryFile);
    save_eval_report(evaluation.report, run_dir / kMetricsFile);
    write_roc_csv(evaluation.roc, run_dir / kRocFile);
    if (config.export_features) {
      write_features_csv(run_dir / kTrainFeaturesFile, train_raw, config.k, train_labels);
      const Mat test_raw = raw_features(config, model, index, parts.test);
      write_features_csv(run_dir / kTestFeaturesFile, test_raw, config.k,
                         labels_of(parts.test));
    }
  });

  write_manifest(run_dir, std::move(manifest), &clock);
  return TrainOutcome{evaluation.report, history, run_dir};
}

EvalReport run_evaluate(const PipelineConfig& config,
                        const std::optional<std::filesystem::path>& external_data) {
  validate(config);
  if (config.out_dir.empty()) config_error("evaluation requires out_dir");
  const std::filesystem::path run_dir(config.out_dir);
  for (const char* artifact : {kManifestFile, kIndexFile, kScalerFile, kModelFile}) {
    if (!std::filesystem::exists(run_dir / artifact)) {
      throw Error(ErrorCode::MissingArtifact,
                  "run directory is missing '" + std::string(artifact) + "'");
    }
  }

  // The training-time config snapshot pins choices the artifact widths alone
  // cannot distinguish (e.g. k=10 plain vs k=5 with cosines).
  {
    std::ifstream manifest_in(run_dir / kManifestFile);
    const json manifest = json::parse(manifest_in, nullptr, /*allow_exceptions=*/false);
    if (manifest.is_discarded() || !manifest.is_object() || !manifest.contains("config")) {
      throw Error(ErrorCode::ParseError, "manifest is missing its config snapshot");
    }
    const PipelineConfig trained = config_from_json(manifest["config"].dump());
    if (trained.variant != config.variant || trained.attention != config.attention ||
        trained.k != config.k || trained.include_cosines != config.include_cosines ||
        trained.model_tag != config.model_tag) {
      throw Error(ErrorCode::ArtifactMismatch,
                  "configuration disagrees with the run manifest on "
                  "variant/attention/k/include_cosines/model_tag");
    }
  }

  const FlatIndex index = FlatIndex::load(run_dir / kIndexFile);
  const ScalerParams scaler = load_scaler(run_dir / kScalerFile);
  const net::ClassifierModel model = net::load_model(run_dir / kModelFile);

  if (model.config.variant != config.variant || model.config.attention != config.attention) {
    throw Error(ErrorCode::ArtifactMismatch,
                "checkpoint variant/attention disagree with the configuration");
  }
  if (model.config.input_width != feature_width(config)) {
    throw Error(ErrorCode::ArtifactMismatch,
                "checkpoint expects " + std::to_string(model.config.input_width) +
                    " features but the configuration produces " +
                    std::to_string(feature_width(config)));
  }
  if (scaler.dim() != feature_width(config)) {
    throw Error(ErrorCode::ArtifactMismatch,
                "scaler covers " + std::to_string(scaler.dim()) +
                    " features but the configuration produces " +
                    std::to_string(feature_width(config)));
  }

  const Dataset dataset = load_configured_dataset(config);
  if (index.dim() != dataset.dim()) {
    throw Error(ErrorCode::ArtifactMismatch,
                "index dimension " + std::to_string(index.dim()) +
                    " disagrees with the dataset dimension " + std::to_string(dataset.dim()));
  }
  const SplitResult parts =
      split(dataset, SplitSpec{config.train_fraction, config.stratified, split_seed(config)});

  Dataset eval_data;
  if (external_data) {
    eval_data = load_jsonl(*external_data);
    if (config.model_tag) {
      eval_data = eval_data.filter_by_model(*config.model_tag);
      if (eval_data.empty()) {
        throw Error(ErrorCode::EmptyInput,
                    "no external records carry model tag '" +
                        std::string(nexus::to_string(*config.model_tag)) + "'");
      }
    }
    if (eval_data.dim() != index.dim()) {
      throw Error(ErrorCode::ArtifactMismatch,
                  "external data dimension " + std::to_string(eval_data.dim()) +
                      " disagrees with the index dimension " + std::to_string(index.dim()));
    }
  } else {
    eval_data = parts.test;
  }

  const Evaluation evaluation =
      evaluate_model(config, model, index, scaler, parts.train, eval_data);
  save_eval_report(evaluation.report, run_dir / kMetricsFile);
  write_roc_csv(evaluation.roc, run_dir / kRocFile);
  return evaluation.report;
}

std::vector<SearchHit> search_index_by_vector(const std::filesystem::path& index_path,
                                              const std::vector<float>& query, std::size_t k) {
  const FlatIndex index = FlatIndex::load(index_path);
  return index.search(query, k);
}

std::vector<SearchHit> search_index_by_id(const std::filesystem::path& index_path,
                                          const std::string& id, std::size_t k) {
  const FlatIndex index = FlatIndex::load(index_path);
  const auto position = index.position_of(id);
  if (!position) {
    throw Error(ErrorCode::InvalidArgument, "id '" + id + "' is not in the index");
  }
  const std::span<const float> stored = index.vector_at(*position);
  return index.search(std::vector<float>(stored.begin(), stored.end()), k, id);
}

std::string run_report(const std::filesystem::path& run_dir) {
  for (const char* artifact : {kManifestFile, kMetricsFile, kHistoryFile}) {
    if (!std::filesystem::exists(run_dir / artifact)) {
      throw Error(ErrorCode::MissingArtifact,
                  "run directory is missing '" + std::string(artifact) + "'");
    }
  }
  std::ifstream manifest_in(run_dir / kManifestFile);
  const ordered_json manifest =
      ordered_json::parse(manifest_in, nullptr, /*allow_exceptions=*/false);
  if (manifest.is_discarded() || !manifest.is_object()) {
    throw Error(ErrorCode::ParseError, "manifest is not a JSON object");
  }
  const EvalReport metrics = load_eval_report(run_dir / kMetricsFile);

  std::ifstream history_in(run_dir / kHistoryFile);
  std::string line;
  if (!std::getline(history_in, line) || line != "epoch,loss,train_accuracy") {
    throw Error(ErrorCode::ParseError, "history CSV has an unexpected header");
  }
  std::size_t epochs = 0;
  double final_loss = 0.0, final_accuracy = 0.0;
  while (std::getline(history_in, line)) {
    if (line.empty()) continue;
    std::size_t epoch = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf", &epoch, &final_loss, &final_accuracy) != 3) {
      throw Error(ErrorCode::ParseError, "history CSV has a malformed row");
    }
    ++epochs;
  }

  ordered_json report;
  report["manifest"] = manifest;
  report["history"] = {{"epochs", epochs},
                       {"final_loss", final_loss},
                       {"final_train_accuracy", final_accuracy}};
  report["metrics"] = ordered_json::parse(to_json(metrics));
  write_text_file(run_dir / kReportFile, report.dump(2) + "\n");

  std::ostringstream out;
  out << "run directory: " << run_dir.string() << "\n";
  out << "tool version:  " << manifest.value("tool_version", std::string("?")) << "\n";
  out << "seed:          " << manifest.value("seed", std::uint64_t{0}) << "\n";
  out << "epochs:        " << epochs << " (final loss " << final_loss
      << ", final train accuracy " << final_accuracy << ")\n\n";
  out << to_table(metrics);
  return out.str();
}

std::vector<GridResult> run_grid(const PipelineConfig& config) {
  validate(config);
  if (config.out_dir.empty()) config_error("the grid search requires out_dir");
  const std::filesystem::path run_dir(config.out_dir);
  std::filesystem::create_directories(run_dir);

  const Dataset dataset = load_configured_dataset(config);
  const SplitResult parts =
      split(dataset, SplitSpec{config.train_fraction, config.stratified, split_seed(config)});
  // Carve a validation slice out of the training split; the test split stays
  // untouched by model selection.
  const SplitResult inner =
      split(parts.train, SplitSpec{0.8, config.stratified, grid_seed(config)});

  const double rates[] = {0.005, 0.01, 0.05};
  const std::size_t batches[] = {16, 32, 64};
  const std::string presets[] = {"default", "compact"};

  std::vector<GridResult> results;
  for (const std::string& preset : presets) {
    for (double rate : rates) {
      for (std::size_t batch : batches) {
        PipelineConfig combo = config;
        combo.learning_rate = rate;
        combo.batch_size = batch;
        combo.hidden_preset = preset;

        net::ModelConfig mcfg;
        mcfg.variant = combo.variant;
        mcfg.attention = combo.attention;
        mcfg.input_width = feature_width(combo);
        mcfg.embedding_dim = combo.attention ? dataset.dim() : 0;
        mcfg.hidden = hidden_widths(preset);
        mcfg.dropout_p = combo.dropout;
        Rng model_rng = init_rng(combo);
        net::ClassifierModel model = net::init_model(mcfg, model_rng);

        const FlatIndex index = build_train_index(inner.train, model, combo.attention);
        const Mat fit_raw = raw_features(combo, model, index, inner.train);
        const ScalerParams scaler = combo.scale_features
                                        ? fit_scaler(fit_raw)
                                        : identity_scaler(feature_width(combo));

        net::TrainConfig tcfg;
        tcfg.learning_rate = rate;
        tcfg.epochs = combo.epochs;
        tcfg.batch_size = batch;
        tcfg.seed = train_seed(combo);
        tcfg.k = combo.k;
        if (combo.attention) {
          const net::RetrievalContext ctx{&index, scaler, combo.k};
          net::train_gated(model, ctx, net::gather_gated_inputs(inner.train), tcfg);
        } else {
          net::train(model, transform(fit_raw, scaler), labels_of(inner.train), tcfg);
        }

        const net::Prediction prediction =
            predict_dataset(combo, model, index, scaler, inner.test);
        const std::vector<int> labels = labels_of(inner.test);
        const ClassificationReport report = classification_metrics(labels, prediction.labels);
        GridResult result;
        result.learning_rate = rate;
        result.batch_size = batch;
        result.hidden_preset = preset;
        result.val_accuracy = report.accuracy;
        result.val_auc = roc_auc(labels, prediction.scores);
        results.push_back(std::move(result));
      }
    }
  }

  std::stable_sort(results.begin(), results.end(),
                   [](const GridResult& a, const GridResult& b) {
                     return a.val_accuracy > b.val_accuracy;
                   });
  std::ostringstream csv;
  csv << "learning_rate,batch_size,hidden_preset,val_accuracy,val_auc\n";
  char buffer[160];
  for (const GridResult& r : results) {
    std::snprintf(buffer, sizeof(buffer), "%.17g,%zu,%s,%.17g,%.17g\n", r.learning_rate,
                  r.batch_size, r.hidden_preset.c_str(), r.val_accuracy, r.val_auc);
    csv << buffer;
  }
  write_text_file(run_dir / kGridFile, csv.str());
  return results;
}

}  // namespace nexus::pipeline
