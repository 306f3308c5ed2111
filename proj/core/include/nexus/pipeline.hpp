#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nexus/dataset.hpp"
#include "nexus/index.hpp"
#include "nexus/metrics.hpp"
#include "nexus/net.hpp"

namespace nexus::pipeline {

struct SyntheticConfig {
  std::size_t n_real = 500;
  std::size_t n_fake = 500;
  std::size_t dim = 32;
  double separation = 2.0;
  // When unset, the generator seed is derived from the run seed.
  std::optional<std::uint64_t> seed;
};

// How a retrieved candidate is judged relevant to a query when computing the
// ranking metrics (MRR/Recall/nDCG).
//   Cluster: query and candidate fall nearest to the same train-split class
//            centroid (the synthetic-data default).
//   File:    explicit JSONL judgments {"query_id": ..., "relevant_ids": [...]}.
enum class RelevanceRule { Cluster, File };

std::string_view to_string(RelevanceRule rule);
RelevanceRule relevance_rule_from_string(std::string_view name);

// Flat, versioned run configuration. Unknown keys in the JSON document are
// hard errors.
struct PipelineConfig {
  std::optional<std::string> data_path;  // JSONL input; unset = synthetic data
  SyntheticConfig synthetic;
  std::optional<ModelTag> model_tag;  // keep only records with this tag
  net::Variant variant = net::Variant::ModelII;
  bool attention = true;  // ModelII only
  std::size_t k = 5;
  double train_fraction = 0.8;
  bool stratified = true;
  bool scale_features = true;
  bool include_cosines = false;  // distance+cosine features (non-attention routes)
  std::string hidden_preset = "default";  // "default" = 128/64, "compact" = 64/32
  double dropout = 0.5;
  double learning_rate = 0.01;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::string out_dir;
  RelevanceRule relevance_rule = RelevanceRule::Cluster;
  std::string relevance_file;
  std::size_t ranking_cutoff = 10;
  bool export_features = false;
};

PipelineConfig config_from_json(const std::string& text);
PipelineConfig config_from_json_file(const std::filesystem::path& path);

// Canonical snapshot with stable key order; embedded in the run manifest.
std::string config_to_json(const PipelineConfig& config);

// Semantic validation, including existence of referenced paths.
void validate(const PipelineConfig& config);

std::vector<std::size_t> hidden_widths(const std::string& preset);

struct IngestSummary {
  std::size_t total = 0;
  std::size_t fake = 0;
  std::size_t real = 0;
  std::size_t dim = 0;
  std::vector<std::pair<std::string, std::size_t>> per_model;  // tag -> count
};

IngestSummary summarize(const Dataset& dataset);
std::string to_table(const IngestSummary& summary);
std::string to_json(const IngestSummary& summary);

// Artifact file names inside a run directory.
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kIndexFile = "index.nxidx";
inline constexpr const char* kScalerFile = "scaler.json";
inline constexpr const char* kModelFile = "model.nxmdl";
inline constexpr const char* kHistoryFile = "history.csv";
inline constexpr const char* kMetricsFile = "metrics.json";
inline constexpr const char* kRocFile = "roc.csv";
inline constexpr const char* kIngestFile = "ingest.json";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kGridFile = "grid.csv";
inline constexpr const char* kTrainFeaturesFile = "features_train.csv";
inline constexpr const char* kTestFeaturesFile = "features_test.csv";

// Loads (or synthesizes) the configured dataset and applies the model-tag
// filter. Shared by every subcommand so they all see the same records.
Dataset load_configured_dataset(const PipelineConfig& config);

// Validates + summarizes the dataset; writes <out_dir>/ingest.json when an
// output directory is configured.
IngestSummary run_ingest(const PipelineConfig& config);

struct TrainOutcome {
  EvalReport test_report;
  std::vector<net::EpochStats> history;
  std::filesystem::path run_dir;
};

// Full training run: filter -> split -> index over train real-class
// embeddings -> retrieval features -> scaler fit on train -> train ->
// evaluate on the held-out test split -> persist artifacts. Everything except
// manifest timings is byte-deterministic in (config, inputs).
TrainOutcome run_train(const PipelineConfig& config);

// Re-evaluates the artifacts in config.out_dir, on the config's held-out test
// split or on an external labeled JSONL file.
EvalReport run_evaluate(const PipelineConfig& config,
                        const std::optional<std::filesystem::path>& external_data);

std::vector<SearchHit> search_index_by_vector(const std::filesystem::path& index_path,
                                              const std::vector<float>& query, std::size_t k);

// Uses the stored vector of `id` as the query and excludes the record itself.
std::vector<SearchHit> search_index_by_id(const std::filesystem::path& index_path,
                                          const std::string& id, std::size_t k);

// Merges manifest, training history, and the evaluation report into
// <run_dir>/report.json; returns the human-readable rendering.
std::string run_report(const std::filesystem::path& run_dir);

struct GridResult {
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  std::string hidden_preset;
  double val_accuracy = 0.0;
  double val_auc = 0.0;
};

// Small hyperparameter sweep over learning rate x batch size x hidden preset,
// scored on a validation slice carved out of the training split. Writes
// <out_dir>/grid.csv; rows ordered best-first.
std::vector<GridResult> run_grid(const PipelineConfig& config);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace nexus::pipeline
