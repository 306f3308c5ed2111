#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nexus {

// One (id, distance) search result. Distances are squared L2; the ranking is
// identical to Euclidean distance and skips a square root per candidate.
// Every consumer in this codebase (features, CLI output, file formats) uses
// the squared convention.
struct SearchHit {
  std::string id;
  double distance = 0.0;

  friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

struct IndexEntry {
  std::string id;
  std::vector<float> values;
};

// Exact top-k squared-L2 index over fixed-dimension float32 vectors.
// Exhaustive scan, no approximation. Distances accumulate in double.
// Ties on distance resolve to the earlier-inserted entry, so results are
// fully deterministic. Immutable once built or loaded; const searches are
// safe from any number of threads and always equal the sequential result.
class FlatIndex {
 public:
  static FlatIndex build(std::vector<IndexEntry> entries, std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }

  const std::string& id_at(std::size_t pos) const { return ids_[pos]; }
  std::span<const float> vector_at(std::size_t pos) const {
    return {data_.data() + pos * dim_, dim_};
  }
  std::optional<std::size_t> position_of(std::string_view id) const;

  // The k nearest entries to `query`, ascending by (distance, insertion
  // order). `exclude` removes at most one entry (typically the query's own
  // id) from consideration. k must satisfy 1 <= k <= effective size.
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k,
                                std::optional<std::string_view> exclude = {}) const;

  // Elementwise equivalent to calling search per query, results in query
  // order. May fan out across threads internally; the output contract is the
  // sequential one. `exclusions`, when nonempty, must match queries in size.
  std::vector<std::vector<SearchHit>> batch_search(
      const std::vector<std::vector<float>>& queries, std::size_t k,
      const std::vector<std::optional<std::string>>& exclusions = {}) const;

  void save(const std::filesystem::path& destination) const;
  static FlatIndex load(const std::filesystem::path& source);

 private:
  FlatIndex() = default;

  std::size_t dim_ = 0;
  std::vector<float> data_;  // size() * dim_, row-major
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> position_;
};

}  // namespace nexus
