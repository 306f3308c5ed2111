#include "nexus/preprocess.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nexus/error.hpp"

namespace nexus {
namespace {

void require_width(const Mat& rows, std::size_t expected, const char* what) {
  if (rows.cols() != expected) {
    throw Error(ErrorCode::WidthMismatch,
                std::string(what) + ": matrix has " + std::to_string(rows.cols()) +
                    " columns, scaler expects " + std::to_string(expected));
  }
}

}  // namespace

ScalerParams fit_scaler(const Mat& rows) {
  if (rows.rows() < 2) {
    throw Error(ErrorCode::TooFewRows,
                "scaler needs at least 2 rows, got " + std::to_string(rows.rows()));
  }
  const double n = static_cast<double>(rows.rows());
  ScalerParams params;
  params.mean.assign(rows.cols(), 0.0);
  params.std_dev.assign(rows.cols(), 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t c = 0; c < rows.cols(); ++c) params.mean[c] += rows(r, c);
  }
  for (double& m : params.mean) m /= n;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t c = 0; c < rows.cols(); ++c) {
      const double d = rows(r, c) - params.mean[c];
      params.std_dev[c] += d * d;
    }
  }
  for (double& s : params.std_dev) s = std::sqrt(s / n);
  return params;
}

Mat transform(const Mat& rows, const ScalerParams& params) {
  require_width(rows, params.dim(), "transform");
  Mat out(rows.rows(), rows.cols());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t c = 0; c < rows.cols(); ++c) {
      out(r, c) = (rows(r, c) - params.mean[c]) / params.denom(c);
    }
  }
  return out;
}

Mat inverse_transform(const Mat& rows, const ScalerParams& params) {
  require_width(rows, params.dim(), "inverse_transform");
  Mat out(rows.rows(), rows.cols());
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t c = 0; c < rows.cols(); ++c) {
      out(r, c) = rows(r, c) * params.denom(c) + params.mean[c];
    }
  }
  return out;
}

void save_scaler(const ScalerParams& params, const std::filesystem::path& path) {
  nlohmann::ordered_json object;
  object["version"] = 1;
  object["mean"] = params.mean;
  object["std"] = params.std_dev;
  object["epsilon"] = params.epsilon;
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  }
  out << object.dump(2) << '\n';
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + path.string() + "'");
  }
}

ScalerParams load_scaler(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  }
  const nlohmann::json object = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (object.is_discarded() || !object.is_object()) {
    throw Error(ErrorCode::ParseError, "'" + path.string() + "' is not a JSON object");
  }
  if (object.value("version", 0) != 1) {
    throw Error(ErrorCode::VersionMismatch,
                "'" + path.string() + "' has an unsupported scaler version");
  }
  ScalerParams params;
  try {
    params.mean = object.at("mean").get<std::vector<double>>();
    params.std_dev = object.at("std").get<std::vector<double>>();
    params.epsilon = object.at("epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, "'" + path.string() + "': " + e.what());
  }
  if (params.mean.size() != params.std_dev.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "'" + path.string() + "': mean and std lengths differ");
  }
  return params;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "cosine similarity needs equal lengths, got " + std::to_string(a.size()) +
                    " and " + std::to_string(b.size()));
  }
  double dot = 0.0, norm_a = 0.0, norm_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    norm_a += x * x;
    norm_b += y * y;
  }
  if (norm_a == 0.0 || norm_b == 0.0) {
    throw Error(ErrorCode::ZeroVector, "cosine similarity is undefined for a zero vector");
  }
  const double value = dot / (std::sqrt(norm_a) * std::sqrt(norm_b));
  return std::clamp(value, -1.0, 1.0);
}

std::vector<double> extract_retrieval_features(const FlatIndex& index,
                                               std::span<const float> query, std::size_t k,
                                               std::optional<std::string_view> exclude,
                                               bool include_cosines) {
  const std::vector<SearchHit> hits = index.search(query, k, exclude);
  std::vector<double> features;
  features.reserve(include_cosines ? 2 * k : k);
  for (const SearchHit& hit : hits) features.push_back(hit.distance);
  if (include_cosines) {
    for (const SearchHit& hit : hits) {
      const auto pos = index.position_of(hit.id);
      features.push_back(cosine_similarity(query, index.vector_at(*pos)));
    }
  }
  return features;
}

RetrievalFeatures retrieval_feature_matrix(const FlatIndex& index, const Dataset& queries,
                                           std::size_t k, bool include_cosines) {
  if (queries.empty()) {
    throw Error(ErrorCode::EmptyInput, "no queries to extract features for");
  }
  if (queries.dim() != index.dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "queries have dimension " + std::to_string(queries.dim()) +
                    ", index expects " + std::to_string(index.dim()));
  }
  const std::size_t width = include_cosines ? 2 * k : k;
  RetrievalFeatures out{Mat(queries.size(), width), {}};
  out.hits.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const EmbeddingRecord& record = queries[q];
    std::vector<SearchHit> hits = index.search(record.vector, k, record.id);
    for (std::size_t j = 0; j < k; ++j) out.features(q, j) = hits[j].distance;
    if (include_cosines) {
      for (std::size_t j = 0; j < k; ++j) {
        const auto pos = index.position_of(hits[j].id);
        out.features(q, k + j) = cosine_similarity(record.vector, index.vector_at(*pos));
      }
    }
    out.hits.push_back(std::move(hits));
  }
  return out;
}

void write_features_csv(const std::filesystem::path& path, const Mat& features,
                        std::size_t k, const std::vector<int>& labels) {
  if (features.cols() != k && features.cols() != 2 * k) {
    throw Error(ErrorCode::WidthMismatch,
                "feature matrix has " + std::to_string(features.cols()) +
                    " columns; expected k=" + std::to_string(k) + " or 2k");
  }
  if (labels.size() != features.rows()) {
    throw Error(ErrorCode::LengthMismatch,
                "have " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(features.rows()) + " feature rows");
  }
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  }
  for (std::size_t j = 0; j < k; ++j) out << 'd' << j + 1 << ',';
  if (features.cols() == 2 * k) {
    for (std::size_t j = 0; j < k; ++j) out << 'c' << j + 1 << ',';
  }
  out << "label\n";
  char buffer[64];
  for (std::size_t r = 0; r < features.rows(); ++r) {
    for (std::size_t c = 0; c < features.cols(); ++c) {
      std::snprintf(buffer, sizeof(buffer), "%.17g", features(r, c));
      out << buffer << ',';
    }
    out << labels[r] << '\n';
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + path.string() + "'");
  }
}

}  // namespace nexus
