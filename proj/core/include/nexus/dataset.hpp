#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nexus/rng.hpp"

namespace nexus {

// Source model that produced an embedding. `Synthetic` marks vectors drawn
// from the built-in Gaussian generator rather than a text encoder.
enum class ModelTag { Bert, Roberta, Gpt2, Distilbert, Synthetic };

std::string_view to_string(ModelTag tag);
ModelTag model_tag_from_string(std::string_view name);

// One labelled embedding. Label 1 marks the positive ("real") class,
// label 0 the negative ("fake") class.
struct EmbeddingRecord {
  std::string id;
  int label = 0;
  ModelTag model = ModelTag::Synthetic;
  std::vector<float> vector;
  std::optional<std::string> text;
};

// An in-memory collection of records with a single shared dimensionality.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<EmbeddingRecord> records);

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t dim() const { return dim_; }
  const std::vector<EmbeddingRecord>& records() const { return records_; }
  const EmbeddingRecord& operator[](std::size_t i) const { return records_[i]; }

  std::size_t count_label(int label) const;
  std::vector<ModelTag> model_tags() const;
  Dataset filter_by_model(ModelTag tag) const;

 private:
  std::vector<EmbeddingRecord> records_;
  std::size_t dim_ = 0;
};

// Reads one JSON object per line. Blank lines are skipped. Every malformed
// line is collected into a single diagnostic before the load fails.
Dataset load_jsonl(const std::filesystem::path& path);

// Writes records back out, one JSON object per line, keys in the canonical
// order (id, label, model, vector, then text when present).
void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);

struct SplitSpec {
  double train_fraction = 0.8;
  bool stratified = true;
  std::uint64_t seed = 0;
};

struct SplitResult {
  Dataset train;
  Dataset test;
};

// Random train/test partition. With `stratified` the per-class proportions of
// the input are preserved (train size per class = round(fraction * count)).
// Records in each half keep their original relative order.
SplitResult split(const Dataset& dataset, const SplitSpec& spec);

struct SyntheticSpec {
  std::size_t n_real = 500;
  std::size_t n_fake = 500;
  std::size_t dim = 32;
  double separation = 2.0;
  std::uint64_t seed = 42;
};

// Two isotropic unit-variance Gaussian clusters with means at +/- separation
// along the normalized all-ones direction. Real records come first
// ("real-000000", label 1), then fake records ("fake-000000", label 0).
Dataset synthesize(const SyntheticSpec& spec);

}  // namespace nexus
