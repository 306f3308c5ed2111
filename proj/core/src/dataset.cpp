#include "nexus/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "nexus/error.hpp"

namespace nexus {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

struct Diagnostic {
  ErrorCode code;
  std::string message;
};

[[noreturn]] void throw_diagnostics(const std::filesystem::path& path,
                                    const std::vector<Diagnostic>& diagnostics) {
  std::ostringstream message;
  message << diagnostics.size() << (diagnostics.size() == 1 ? " error" : " errors")
          << " in '" << path.string() << "':";
  const std::size_t shown = std::min<std::size_t>(diagnostics.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) {
    message << (i == 0 ? " " : "; ") << diagnostics[i].message;
  }
  if (shown < diagnostics.size()) {
    message << "; ... (" << diagnostics.size() - shown << " more)";
  }
  throw Error(diagnostics.front().code, message.str());
}

std::string format_numbered_id(const char* prefix, std::size_t n) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%s-%06zu", prefix, n);
  return buffer;
}

}  // namespace

std::string_view to_string(ModelTag tag) {
  switch (tag) {
    case ModelTag::Bert: return "bert";
    case ModelTag::Roberta: return "roberta";
    case ModelTag::Gpt2: return "gpt2";
    case ModelTag::Distilbert: return "distilbert";
    case ModelTag::Synthetic: return "synthetic";
  }
  throw Error(ErrorCode::InvalidArgument, "unhandled model tag");
}

ModelTag model_tag_from_string(std::string_view name) {
  if (name == "bert") return ModelTag::Bert;
  if (name == "roberta") return ModelTag::Roberta;
  if (name == "gpt2") return ModelTag::Gpt2;
  if (name == "distilbert") return ModelTag::Distilbert;
  if (name == "synthetic") return ModelTag::Synthetic;
  throw Error(ErrorCode::InvalidArgument,
              "unknown model tag '" + std::string(name) +
                  "' (expected bert, roberta, gpt2, distilbert, or synthetic)");
}

Dataset::Dataset(std::vector<EmbeddingRecord> records) : records_(std::move(records)) {
  if (records_.empty()) return;
  dim_ = records_.front().vector.size();
  std::unordered_set<std::string_view> seen;
  seen.reserve(records_.size());
  for (const EmbeddingRecord& record : records_) {
    if (record.vector.empty()) {
      throw Error(ErrorCode::DimensionMismatch,
                  "record '" + record.id + "' has an empty vector");
    }
    if (record.vector.size() != dim_) {
      throw Error(ErrorCode::DimInconsistent,
                  "record '" + record.id + "' has dimension " +
                      std::to_string(record.vector.size()) + ", expected " +
                      std::to_string(dim_));
    }
    if (record.label != 0 && record.label != 1) {
      throw Error(ErrorCode::LabelOutOfRange,
                  "record '" + record.id + "' has label " + std::to_string(record.label) +
                      ", expected 0 or 1");
    }
    for (float v : record.vector) {
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::NonFiniteValue,
                    "record '" + record.id + "' contains a non-finite coordinate");
      }
    }
    if (!seen.insert(record.id).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate record id '" + record.id + "'");
    }
  }
}

std::size_t Dataset::count_label(int label) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(),
                    [label](const EmbeddingRecord& r) { return r.label == label; }));
}

std::vector<ModelTag> Dataset::model_tags() const {
  std::vector<ModelTag> tags;
  for (const EmbeddingRecord& record : records_) {
    if (std::find(tags.begin(), tags.end(), record.model) == tags.end()) {
      tags.push_back(record.model);
    }
  }
  return tags;
}

Dataset Dataset::filter_by_model(ModelTag tag) const {
  std::vector<EmbeddingRecord> kept;
  for (const EmbeddingRecord& record : records_) {
    if (record.model == tag) kept.push_back(record);
  }
  return Dataset(std::move(kept));
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  }

  std::vector<EmbeddingRecord> records;
  std::vector<Diagnostic> diagnostics;
  std::unordered_map<std::string, std::size_t> first_line_of_id;
  std::size_t expected_dim = 0;
  std::size_t line_number = 0;
  std::string line;

  const auto report = [&](ErrorCode code, const std::string& what) {
    diagnostics.push_back(
        {code, "line " + std::to_string(line_number) + ": " + what});
  };

  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    const json parsed = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded()) {
      report(ErrorCode::ParseError, "invalid JSON");
      continue;
    }
    if (!parsed.is_object()) {
      report(ErrorCode::ParseError, "expected a JSON object");
      continue;
    }

    EmbeddingRecord record;
    bool line_ok = true;
    const auto fail = [&](ErrorCode code, const std::string& what) {
      report(code, what);
      line_ok = false;
    };

    if (auto it = parsed.find("id"); it != parsed.end() && it->is_string()) {
      record.id = it->get<std::string>();
      if (record.id.empty()) fail(ErrorCode::ParseError, "field 'id' must be non-empty");
    } else {
      fail(ErrorCode::ParseError, "field 'id' must be a string");
    }

    if (auto it = parsed.find("label"); it != parsed.end() && it->is_number_integer()) {
      const std::int64_t label = it->get<std::int64_t>();
      if (label != 0 && label != 1) {
        fail(ErrorCode::LabelOutOfRange,
             "label " + std::to_string(label) + " is outside {0, 1}");
      } else {
        record.label = static_cast<int>(label);
      }
    } else {
      fail(ErrorCode::ParseError, "field 'label' must be an integer");
    }

    if (auto it = parsed.find("model"); it != parsed.end() && it->is_string()) {
      try {
        record.model = model_tag_from_string(it->get<std::string>());
      } catch (const Error& e) {
        fail(ErrorCode::ParseError, e.what());
      }
    } else {
      fail(ErrorCode::ParseError, "field 'model' must be a string");
    }

    if (auto it = parsed.find("vector");
        it != parsed.end() && it->is_array() && !it->empty()) {
      record.vector.reserve(it->size());
      for (const json& value : *it) {
        if (!value.is_number()) {
          fail(ErrorCode::ParseError, "field 'vector' must contain only numbers");
          break;
        }
        const double v = value.get<double>();
        if (!std::isfinite(v)) {
          fail(ErrorCode::NonFiniteValue, "field 'vector' contains a non-finite value");
          break;
        }
        record.vector.push_back(static_cast<float>(v));
      }
    } else {
      fail(ErrorCode::ParseError, "field 'vector' must be a non-empty array");
    }

    if (auto it = parsed.find("text"); it != parsed.end()) {
      if (it->is_string()) {
        record.text = it->get<std::string>();
      } else if (!it->is_null()) {
        fail(ErrorCode::ParseError, "field 'text' must be a string when present");
      }
    }

    if (!line_ok) continue;

    if (expected_dim == 0) {
      expected_dim = record.vector.size();
    } else if (record.vector.size() != expected_dim) {
      fail(ErrorCode::DimInconsistent,
           "vector has dimension " + std::to_string(record.vector.size()) +
               ", expected " + std::to_string(expected_dim));
    }
    if (auto [it, inserted] = first_line_of_id.emplace(record.id, line_number); !inserted) {
      fail(ErrorCode::DuplicateId, "id '" + record.id + "' already used on line " +
                                       std::to_string(it->second));
    }
    if (!line_ok) continue;

    records.push_back(std::move(record));
  }

  if (!diagnostics.empty()) throw_diagnostics(path, diagnostics);
  if (records.empty()) {
    throw Error(ErrorCode::EmptyInput, "no records found in '" + path.string() + "'");
  }
  return Dataset(std::move(records));
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  }
  for (const EmbeddingRecord& record : dataset.records()) {
    ordered_json object;
    object["id"] = record.id;
    object["label"] = record.label;
    object["model"] = to_string(record.model);
    object["vector"] = record.vector;
    if (record.text) object["text"] = *record.text;
    out << object.dump() << '\n';
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + path.string() + "'");
  }
}

SplitResult split(const Dataset& dataset, const SplitSpec& spec) {
  if (dataset.empty()) {
    throw Error(ErrorCode::EmptyInput, "cannot split an empty dataset");
  }
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument,
                "train_fraction must lie strictly between 0 and 1");
  }

  Rng rng(spec.seed);
  std::vector<bool> in_train(dataset.size(), false);

  const auto assign_prefix = [&](std::vector<std::size_t>& indices) {
    rng.shuffle(indices);
    auto n_train = static_cast<std::size_t>(
        std::llround(spec.train_fraction * static_cast<double>(indices.size())));
    n_train = std::min(n_train, indices.size());
    for (std::size_t i = 0; i < n_train; ++i) in_train[indices[i]] = true;
  };

  if (spec.stratified) {
    for (int label : {0, 1}) {
      std::vector<std::size_t> indices;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (dataset[i].label == label) indices.push_back(i);
      }
      if (indices.empty()) {
        throw Error(ErrorCode::EmptyClass,
                    "cannot stratify: no records with label " + std::to_string(label));
      }
      assign_prefix(indices);
    }
  } else {
    std::vector<std::size_t> indices(dataset.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    assign_prefix(indices);
  }

  std::vector<EmbeddingRecord> train_records;
  std::vector<EmbeddingRecord> test_records;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (in_train[i] ? train_records : test_records).push_back(dataset[i]);
  }
  return SplitResult{Dataset(std::move(train_records)), Dataset(std::move(test_records))};
}

Dataset synthesize(const SyntheticSpec& spec) {
  if (spec.n_real + spec.n_fake < 2) {
    throw Error(ErrorCode::InvalidArgument, "need at least two records in total");
  }
  if (spec.dim == 0) {
    throw Error(ErrorCode::InvalidArgument, "dimension must be at least 1");
  }
  if (spec.separation < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "separation must be non-negative");
  }

  // Cluster means sit at +/- separation * u where u is the unit all-ones
  // direction, i.e. each coordinate is shifted by separation / sqrt(dim).
  const double offset = spec.separation / std::sqrt(static_cast<double>(spec.dim));
  Rng rng(spec.seed);

  std::vector<EmbeddingRecord> records;
  records.reserve(spec.n_real + spec.n_fake);
  const auto emit = [&](const char* prefix, std::size_t n, int label, double mean) {
    for (std::size_t i = 0; i < n; ++i) {
      EmbeddingRecord record;
      record.id = format_numbered_id(prefix, i);
      record.label = label;
      record.model = ModelTag::Synthetic;
      record.vector.reserve(spec.dim);
      for (std::size_t c = 0; c < spec.dim; ++c) {
        record.vector.push_back(static_cast<float>(mean + rng.normal()));
      }
      records.push_back(std::move(record));
    }
  };
  emit("real", spec.n_real, 1, offset);
  emit("fake", spec.n_fake, 0, -offset);
  return Dataset(std::move(records));
}

}  // namespace nexus
