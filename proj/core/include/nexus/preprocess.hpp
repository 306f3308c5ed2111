#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "nexus/dataset.hpp"
#include "nexus/index.hpp"
#include "nexus/matrix.hpp"

namespace nexus {

// Per-column standardization parameters (z = (x - mean) / max(std, epsilon)).
// Standard deviations use the population convention (divide by N).
struct ScalerParams {
  std::vector<double> mean;
  std::vector<double> std_dev;
  double epsilon = 1e-8;

  std::size_t dim() const { return mean.size(); }
  double denom(std::size_t column) const { return std::max(std_dev[column], epsilon); }
};

// Fits column means and population standard deviations. Requires at least
// two rows; a single row would make every standard deviation zero.
ScalerParams fit_scaler(const Mat& rows);

Mat transform(const Mat& rows, const ScalerParams& params);
Mat inverse_transform(const Mat& rows, const ScalerParams& params);

void save_scaler(const ScalerParams& params, const std::filesystem::path& path);
ScalerParams load_scaler(const std::filesystem::path& path);

// Cosine similarity with double accumulation, clamped to [-1, 1]. Rejects
// zero-norm inputs, for which the quantity is undefined.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Retrieval-derived feature row for one query: the k nearest squared L2
// distances in ascending order, optionally followed by the cosine similarity
// to each of those neighbors in the same order.
std::vector<double> extract_retrieval_features(const FlatIndex& index,
                                               std::span<const float> query, std::size_t k,
                                               std::optional<std::string_view> exclude,
                                               bool include_cosines);

struct RetrievalFeatures {
  Mat features;                             // one row per query, k or 2k columns
  std::vector<std::vector<SearchHit>> hits; // the neighbors behind each row
};

// Feature rows for every record in `queries`. Each record's own id is
// excluded from its candidate set, so indexing the query set itself yields
// leave-one-out features.
RetrievalFeatures retrieval_feature_matrix(const FlatIndex& index, const Dataset& queries,
                                           std::size_t k, bool include_cosines);

// CSV with header d1..dk[,c1..ck],label. `k` tells the distance column count
// apart from the optional cosine block.
void write_features_csv(const std::filesystem::path& path, const Mat& features,
                        std::size_t k, const std::vector<int>& labels);

}  // namespace nexus
