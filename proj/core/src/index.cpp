#include "nexus/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "binio.hpp"
#include "nexus/error.hpp"

namespace nexus {
namespace {

constexpr char kIndexMagic[] = "NXIDX1";

struct Candidate {
  double distance;
  std::size_t position;

  // Worse-first ordering for the bounded max-heap: larger distance first,
  // later insertion breaks ties.
  bool worse_than(const Candidate& other) const {
    if (distance != other.distance) return distance > other.distance;
    return position > other.position;
  }
};

double squared_l2(std::span<const float> a, const float* b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

void require_finite(std::span<const float> values, const std::string& id) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::NonFiniteValue,
                  "vector '" + id + "' contains a non-finite coordinate");
    }
  }
}

}  // namespace

FlatIndex FlatIndex::build(std::vector<IndexEntry> entries, std::size_t dim) {
  if (entries.empty()) {
    throw Error(ErrorCode::EmptyCollection, "cannot build an index from zero vectors");
  }
  if (dim == 0) {
    throw Error(ErrorCode::InvalidArgument, "index dimension must be at least 1");
  }
  FlatIndex index;
  index.dim_ = dim;
  index.data_.reserve(entries.size() * dim);
  index.ids_.reserve(entries.size());
  index.position_.reserve(entries.size());
  for (auto& entry : entries) {
    if (entry.values.size() != dim) {
      throw Error(ErrorCode::DimensionMismatch,
                  "vector '" + entry.id + "' has dimension " +
                      std::to_string(entry.values.size()) + ", index expects " +
                      std::to_string(dim));
    }
    require_finite(entry.values, entry.id);
    auto [it, inserted] = index.position_.emplace(entry.id, index.ids_.size());
    if (!inserted) {
      throw Error(ErrorCode::DuplicateId, "duplicate vector id '" + entry.id + "'");
    }
    index.data_.insert(index.data_.end(), entry.values.begin(), entry.values.end());
    index.ids_.push_back(std::move(entry.id));
  }
  return index;
}

std::optional<std::size_t> FlatIndex::position_of(std::string_view id) const {
  auto it = position_.find(std::string(id));
  if (it == position_.end()) return std::nullopt;
  return it->second;
}

std::vector<SearchHit> FlatIndex::search(std::span<const float> query, std::size_t k,
                                         std::optional<std::string_view> exclude) const {
  if (query.size() != dim_) {
    throw Error(ErrorCode::DimensionMismatch,
                "query has dimension " + std::to_string(query.size()) +
                    ", index expects " + std::to_string(dim_));
  }
  require_finite(query, "<query>");

  std::size_t excluded_pos = size();  // sentinel: nothing excluded
  if (exclude) {
    if (auto pos = position_of(*exclude)) excluded_pos = *pos;
  }
  const std::size_t effective = size() - (excluded_pos < size() ? 1 : 0);
  if (k == 0) {
    throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  }
  if (k > effective) {
    throw Error(ErrorCode::KTooLarge,
                "k=" + std::to_string(k) + " exceeds the " + std::to_string(effective) +
                    " searchable entries");
  }

  // Bounded max-heap of the k best candidates seen so far.
  std::vector<Candidate> heap;
  heap.reserve(k);
  const auto heap_cmp = [](const Candidate& a, const Candidate& b) {
    return b.worse_than(a);  // heap top = worst kept candidate
  };
  for (std::size_t pos = 0; pos < size(); ++pos) {
    if (pos == excluded_pos) continue;
    const Candidate cand{squared_l2(query, data_.data() + pos * dim_), pos};
    if (heap.size() < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), heap_cmp);
    } else if (heap.front().worse_than(cand)) {
      std::pop_heap(heap.begin(), heap.end(), heap_cmp);
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), heap_cmp);
    }
  }
  std::sort_heap(heap.begin(), heap.end(), heap_cmp);

  std::vector<SearchHit> hits;
  hits.reserve(heap.size());
  for (const Candidate& c : heap) {
    hits.push_back(SearchHit{ids_[c.position], c.distance});
  }
  return hits;
}

std::vector<std::vector<SearchHit>> FlatIndex::batch_search(
    const std::vector<std::vector<float>>& queries, std::size_t k,
    const std::vector<std::optional<std::string>>& exclusions) const {
  if (!exclusions.empty() && exclusions.size() != queries.size()) {
    throw Error(ErrorCode::LengthMismatch,
                "exclusions list has " + std::to_string(exclusions.size()) +
                    " entries for " + std::to_string(queries.size()) + " queries");
  }
  std::vector<std::vector<SearchHit>> results(queries.size());

  const auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t q = begin; q < end; ++q) {
      std::optional<std::string_view> exclude;
      if (!exclusions.empty() && exclusions[q]) exclude = *exclusions[q];
      try {
        results[q] = search(queries[q], k, exclude);
      } catch (const Error& e) {
        throw Error(e.code(), "query " + std::to_string(q) + ": " + e.what());
      }
    }
  };

  const std::size_t workers = std::thread::hardware_concurrency();
  if (workers > 1 && queries.size() >= 64 && size() >= 256) {
    const std::size_t n_threads = std::min<std::size_t>(workers, queries.size());
    const std::size_t chunk = (queries.size() + n_threads - 1) / n_threads;
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> failures(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
      threads.emplace_back([&, t] {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(queries.size(), begin + chunk);
        try {
          run_range(begin, end);
        } catch (...) {
          failures[t] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& failure : failures) {
      if (failure) std::rethrow_exception(failure);
    }
  } else {
    run_range(0, queries.size());
  }
  return results;
}

void FlatIndex::save(const std::filesystem::path& destination) const {
  std::ofstream out(destination, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + destination.string() + "' for writing");
  }
  detail::write_bytes(out, kIndexMagic, 6);
  detail::write_u32(out, static_cast<std::uint32_t>(dim_));
  detail::write_u64(out, static_cast<std::uint64_t>(size()));
  for (std::size_t pos = 0; pos < size(); ++pos) {
    detail::write_u64(out, static_cast<std::uint64_t>(ids_[pos].size()));
    detail::write_bytes(out, ids_[pos].data(), ids_[pos].size());
    for (float v : vector_at(pos)) detail::write_f32(out, v);
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + destination.string() + "'");
  }
}

FlatIndex FlatIndex::load(const std::filesystem::path& source) {
  std::ifstream in(source, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + source.string() + "' for reading");
  }
  detail::check_magic(in, kIndexMagic, "index file");
  const std::uint32_t dim = detail::read_u32(in, "index dimension");
  const std::uint64_t count = detail::read_u64(in, "index entry count");
  if (dim == 0) {
    throw Error(ErrorCode::IoError, "index file declares dimension 0");
  }
  if (count == 0) {
    throw Error(ErrorCode::EmptyCollection, "index file contains zero vectors");
  }

  std::vector<IndexEntry> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t id_len = detail::read_u64(in, "entry id length");
    IndexEntry entry;
    entry.id.resize(id_len);
    if (id_len > 0) detail::read_exact(in, entry.id.data(), id_len, "entry id");
    entry.values.resize(dim);
    for (std::uint32_t c = 0; c < dim; ++c) {
      entry.values[c] = detail::read_f32(in, "vector coordinate");
    }
    entries.push_back(std::move(entry));
  }
  detail::expect_eof(in, "index file");
  return build(std::move(entries), dim);
}

}  // namespace nexus
