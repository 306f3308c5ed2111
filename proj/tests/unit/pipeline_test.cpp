#include "nexus/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "nexus/dataset.hpp"
#include "nexus/error.hpp"
#include "nexus/metrics.hpp"
#include "nexus/net.hpp"
#include "nexus/rng.hpp"
#include "support/temp_dir.hpp"

namespace {

namespace fs = std::filesystem;
namespace pl = nexus::pipeline;
using nexus::Dataset;
using nexus::EmbeddingRecord;
using nexus::Error;
using nexus::ErrorCode;
using nexus::Rng;
using testsupport::TempDir;

ErrorCode code_of(const std::function<void()>& body) {
  try {
    body();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a nexus::Error");
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  EXPECT_TRUE(in.is_open()) << path;
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// A small synthetic run that finishes in well under a second.
pl::PipelineConfig small_config(const fs::path& out_dir) {
  pl::PipelineConfig config;
  config.synthetic.n_real = 60;
  config.synthetic.n_fake = 60;
  config.synthetic.dim = 6;
  config.synthetic.separation = 2.0;
  config.k = 3;
  config.epochs = 8;
  config.batch_size = 16;
  config.learning_rate = 0.05;
  config.seed = 11;
  config.out_dir = out_dir.string();
  return config;
}

TEST(Config, MinimalDocumentGetsDefaults) {
  const pl::PipelineConfig config = pl::config_from_json("{\"version\": 1}");
  EXPECT_EQ(config.variant, nexus::net::Variant::ModelII);
  EXPECT_TRUE(config.attention);
  EXPECT_EQ(config.k, 5u);
  EXPECT_DOUBLE_EQ(config.train_fraction, 0.8);
  EXPECT_EQ(config.hidden_preset, "default");
  EXPECT_EQ(config.epochs, 100u);
  EXPECT_EQ(config.relevance_rule, pl::RelevanceRule::Cluster);
  EXPECT_FALSE(config.data_path.has_value());
  // Picking the first variant flips the attention default off.
  EXPECT_FALSE(pl::config_from_json("{\"version\": 1, \"variant\": \"model1\"}").attention);
}

TEST(Config, CanonicalJsonIsStableUnderRoundTrip) {
  pl::PipelineConfig config;
  config.synthetic.n_real = 12;
  config.synthetic.n_fake = 34;
  config.synthetic.dim = 5;
  config.synthetic.separation = 1.25;
  config.synthetic.seed = 99;
  config.variant = nexus::net::Variant::ModelI;
  config.attention = false;
  config.include_cosines = true;
  config.k = 7;
  config.hidden_preset = "compact";
  config.seed = 3;
  config.out_dir = "/tmp/somewhere";
  const std::string text = pl::config_to_json(config);
  const pl::PipelineConfig back = pl::config_from_json(text);
  EXPECT_EQ(pl::config_to_json(back), text);
  EXPECT_EQ(back.synthetic.seed, std::optional<std::uint64_t>(99));
  EXPECT_EQ(back.k, 7u);
  EXPECT_TRUE(back.include_cosines);
}

TEST(Config, ParseAndValidationErrors) {
  const auto parse_code = [](const std::string& text) {
    return code_of([&] { pl::config_from_json(text); });
  };
  EXPECT_EQ(parse_code("not json"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("[]"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("{}"), ErrorCode::ConfigError);                       // no version
  EXPECT_EQ(parse_code("{\"version\": 2}"), ErrorCode::ConfigError);         // wrong version
  EXPECT_EQ(parse_code("{\"version\": 1, \"kk\": 3}"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("{\"version\": 1, \"k\": \"five\"}"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("{\"version\": 1, \"k\": -2}"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_code("{\"version\": 1, \"variant\": \"model3\"}"), ErrorCode::ConfigError);
  EXPECT_EQ(parse_code(
                "{\"version\": 1, \"data\": \"x.jsonl\", \"synthetic_dim\": 8}"),
            ErrorCode::ConfigError);  // two data sources

  const auto invalid = [](const std::function<void(pl::PipelineConfig&)>& mutate) {
    pl::PipelineConfig config;
    mutate(config);
    return code_of([&] { pl::validate(config); });
  };
  EXPECT_EQ(invalid([](auto& c) { c.k = 0; }), ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.train_fraction = 1.0; }), ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.dropout = 1.0; }), ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.epochs = 0; }), ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.batch_size = 0; }), ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.learning_rate = -0.1; }), ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.hidden_preset = "huge"; }), ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) {
              c.variant = nexus::net::Variant::ModelI;
              c.attention = true;
            }),
            ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.include_cosines = true; }),  // attention is on
            ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.relevance_file = "j.jsonl"; }), ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.relevance_rule = pl::RelevanceRule::File; }),
            ErrorCode::ConfigError);  // file rule without a file
  EXPECT_EQ(invalid([](auto& c) { c.data_path = "/definitely/not/here.jsonl"; }),
            ErrorCode::ConfigError);
  EXPECT_EQ(invalid([](auto& c) { c.ranking_cutoff = 0; }), ErrorCode::ConfigError);
}

TEST(Ingest, SummarizesTheConfiguredDataset) {
  TempDir tmp;
  pl::PipelineConfig config;
  config.synthetic.n_real = 12;
  config.synthetic.n_fake = 8;
  config.synthetic.dim = 4;
  config.synthetic.seed = 5;
  const pl::IngestSummary summary = pl::run_ingest(config);  // no out_dir: nothing written
  EXPECT_EQ(summary.total, 20u);
  EXPECT_EQ(summary.real, 12u);
  EXPECT_EQ(summary.fake, 8u);
  EXPECT_EQ(summary.dim, 4u);
  ASSERT_EQ(summary.per_model.size(), 1u);
  EXPECT_EQ(summary.per_model[0].first, "synthetic");
  EXPECT_EQ(summary.per_model[0].second, 20u);

  const std::string table = pl::to_table(summary);
  EXPECT_NE(table.find("Total"), std::string::npos);
  EXPECT_NE(table.find("20"), std::string::npos);

  config.out_dir = tmp.file("ingest-run").string();
  pl::run_ingest(config);
  EXPECT_TRUE(fs::exists(fs::path(config.out_dir) / pl::kIngestFile));
  EXPECT_NE(slurp(fs::path(config.out_dir) / pl::kIngestFile).find("\"total\": 20"),
            std::string::npos);
}

TEST(Train, WritesArtifactsAndIsByteDeterministic) {
  TempDir tmp;
  const pl::PipelineConfig config_a = small_config(tmp.file("run-a"));
  pl::PipelineConfig config_b = config_a;
  config_b.out_dir = tmp.file("run-b").string();

  const pl::TrainOutcome outcome = pl::run_train(config_a);
  EXPECT_EQ(outcome.run_dir, fs::path(config_a.out_dir));
  EXPECT_EQ(outcome.history.size(), 8u);
  EXPECT_GT(outcome.test_report.auc, 0.5);
  ASSERT_TRUE(outcome.test_report.ranking.has_value());

  for (const char* name : {pl::kManifestFile, pl::kIndexFile, pl::kScalerFile, pl::kModelFile,
                           pl::kHistoryFile, pl::kMetricsFile, pl::kRocFile}) {
    EXPECT_TRUE(fs::exists(outcome.run_dir / name)) << name;
  }
  // The metrics file is exactly the canonical serialization of the report.
  EXPECT_EQ(slurp(outcome.run_dir / pl::kMetricsFile), nexus::to_json(outcome.test_report));

  pl::run_train(config_b);
  for (const char* name : {pl::kIndexFile, pl::kScalerFile, pl::kModelFile, pl::kHistoryFile,
                           pl::kMetricsFile, pl::kRocFile}) {
    EXPECT_EQ(slurp(fs::path(config_a.out_dir) / name),
              slurp(fs::path(config_b.out_dir) / name))
        << name;
  }

  // The manifest records the hashes of input files (none here), the seed and
  // the stage list.
  const std::string manifest = slurp(outcome.run_dir / pl::kManifestFile);
  EXPECT_NE(manifest.find("\"seed\": 11"), std::string::npos);
  EXPECT_NE(manifest.find("\"stages\""), std::string::npos);
}

TEST(Train, ExportsFeatureTablesOnRequest) {
  TempDir tmp;
  pl::PipelineConfig config = small_config(tmp.file("run"));
  config.export_features = true;
  pl::run_train(config);
  const std::string train_csv = slurp(fs::path(config.out_dir) / pl::kTrainFeaturesFile);
  EXPECT_EQ(train_csv.substr(0, train_csv.find('\n')), "d1,d2,d3,label");
  EXPECT_TRUE(fs::exists(fs::path(config.out_dir) / pl::kTestFeaturesFile));
}

TEST(Train, HeldOutRowsNeverInfluenceTrainingArtifacts) {
  TempDir tmp;
  const Dataset dataset = nexus::synthesize(nexus::SyntheticSpec{40, 40, 5, 2.0, 77});
  const fs::path file_a = tmp.file("a.jsonl");
  nexus::save_jsonl(dataset, file_a);

  pl::PipelineConfig config = small_config(tmp.file("run-a"));
  config.synthetic = pl::SyntheticConfig{};
  config.data_path = file_a.string();

  // Recreate the pipeline's split to learn which records are held out.
  const std::uint64_t split_seed = Rng(config.seed).derive(2).seed();
  const nexus::SplitResult parts = nexus::split(
      dataset, nexus::SplitSpec{config.train_fraction, config.stratified, split_seed});
  std::set<std::string> held_out;
  for (const EmbeddingRecord& r : parts.test.records()) held_out.insert(r.id);
  ASSERT_FALSE(held_out.empty());

  // Variant B: identical training rows, scrambled held-out vectors.
  std::vector<EmbeddingRecord> tampered = dataset.records();
  Rng noise(999);
  for (EmbeddingRecord& r : tampered) {
    if (held_out.count(r.id) != 0) {
      for (float& v : r.vector) v = static_cast<float>(noise.normal() * 3.0);
    }
  }
  const fs::path file_b = tmp.file("b.jsonl");
  nexus::save_jsonl(Dataset(std::move(tampered)), file_b);

  pl::PipelineConfig config_b = config;
  config_b.data_path = file_b.string();
  config_b.out_dir = tmp.file("run-b").string();

  pl::run_train(config);
  pl::run_train(config_b);

  // Everything fitted or trained must be identical: the held-out rows were
  // never consulted.
  for (const char* name :
       {pl::kIndexFile, pl::kScalerFile, pl::kModelFile, pl::kHistoryFile}) {
    EXPECT_EQ(slurp(fs::path(config.out_dir) / name),
              slurp(fs::path(config_b.out_dir) / name))
        << name;
  }
  // The evaluation did look at the held-out rows.
  EXPECT_NE(slurp(fs::path(config.out_dir) / pl::kMetricsFile),
            slurp(fs::path(config_b.out_dir) / pl::kMetricsFile));
}

TEST(Train, StageTaggedFailures) {
  TempDir tmp;
  pl::PipelineConfig config = small_config(tmp.file("run"));
  config.synthetic.n_real = 15;
  config.synthetic.n_fake = 15;
  config.k = 200;  // far more neighbors than train-split real records
  try {
    pl::run_train(config);
    FAIL() << "expected KTooLarge";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::KTooLarge);
    EXPECT_NE(std::string(e.what()).find("stage '"), std::string::npos);
  }

  pl::PipelineConfig tiny = small_config(tmp.file("run2"));
  tiny.synthetic.n_real = 2;
  tiny.synthetic.n_fake = 2;
  tiny.k = 1;
  EXPECT_EQ(code_of([&] { pl::run_train(tiny); }), ErrorCode::TooFewRows);
}

TEST(Evaluate, ReproducesTheTrainingReportFromArtifacts) {
  TempDir tmp;
  const pl::PipelineConfig config = small_config(tmp.file("run"));
  const pl::TrainOutcome outcome = pl::run_train(config);
  const std::string original_metrics = slurp(outcome.run_dir / pl::kMetricsFile);

  const nexus::EvalReport report = pl::run_evaluate(config, std::nullopt);
  EXPECT_EQ(report, outcome.test_report);
  EXPECT_EQ(slurp(outcome.run_dir / pl::kMetricsFile), original_metrics);
}

TEST(Evaluate, ChecksArtifactsAgainstTheRequest) {
  TempDir tmp;
  const pl::PipelineConfig config = small_config(tmp.file("run"));
  pl::run_train(config);

  pl::PipelineConfig different_k = config;
  different_k.k = 4;
  EXPECT_EQ(code_of([&] { pl::run_evaluate(different_k, std::nullopt); }),
            ErrorCode::ArtifactMismatch);

  pl::PipelineConfig different_variant = config;
  different_variant.variant = nexus::net::Variant::ModelI;
  different_variant.attention = false;
  EXPECT_EQ(code_of([&] { pl::run_evaluate(different_variant, std::nullopt); }),
            ErrorCode::ArtifactMismatch);

  pl::PipelineConfig empty_dir = config;
  empty_dir.out_dir = tmp.file("nothing-here").string();
  fs::create_directories(empty_dir.out_dir);
  EXPECT_EQ(code_of([&] { pl::run_evaluate(empty_dir, std::nullopt); }),
            ErrorCode::MissingArtifact);
}

TEST(Evaluate, AcceptsExternalDataWithMatchingWidth) {
  TempDir tmp;
  const pl::PipelineConfig config = small_config(tmp.file("run"));
  pl::run_train(config);

  const Dataset full = pl::load_configured_dataset(config);
  const fs::path external = tmp.file("external.jsonl");
  nexus::save_jsonl(full, external);
  const nexus::EvalReport report = pl::run_evaluate(config, external);
  const auto& c = report.classification.confusion;
  EXPECT_EQ(c.tp + c.fp + c.tn + c.fn, full.size());
  EXPECT_GT(report.auc, 0.5);

  const Dataset narrow = nexus::synthesize(nexus::SyntheticSpec{10, 10, 7, 1.0, 3});
  const fs::path bad = tmp.file("narrow.jsonl");
  nexus::save_jsonl(narrow, bad);
  EXPECT_EQ(code_of([&] { pl::run_evaluate(config, bad); }), ErrorCode::ArtifactMismatch);
}

TEST(SearchHelpers, QueryByVectorAndById) {
  TempDir tmp;
  const pl::PipelineConfig config = small_config(tmp.file("run"));
  pl::run_train(config);
  const fs::path index_path = fs::path(config.out_dir) / pl::kIndexFile;

  const std::vector<float> probe(6, 0.25f);
  const auto hits = pl::search_index_by_vector(index_path, probe, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_LE(hits[0].distance, hits[1].distance);
  EXPECT_LE(hits[1].distance, hits[2].distance);

  const std::string anchor = hits[0].id;
  const auto neighbors = pl::search_index_by_id(index_path, anchor, 3);
  ASSERT_EQ(neighbors.size(), 3u);
  for (const nexus::SearchHit& h : neighbors) EXPECT_NE(h.id, anchor);

  EXPECT_EQ(code_of([&] { pl::search_index_by_id(index_path, "no-such-id", 2); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { pl::search_index_by_vector(index_path, probe, 10000); }),
            ErrorCode::KTooLarge);
}

TEST(Report, MergesManifestHistoryAndMetrics) {
  TempDir tmp;
  const pl::PipelineConfig config = small_config(tmp.file("run"));
  const pl::TrainOutcome outcome = pl::run_train(config);

  const std::string text = pl::run_report(outcome.run_dir);
  EXPECT_NE(text.find("tool version:"), std::string::npos);
  EXPECT_NE(text.find("precision"), std::string::npos);
  EXPECT_NE(text.find("epochs:        8"), std::string::npos);

  const std::string merged = slurp(outcome.run_dir / pl::kReportFile);
  EXPECT_NE(merged.find("\"manifest\""), std::string::npos);
  EXPECT_NE(merged.find("\"history\""), std::string::npos);
  EXPECT_NE(merged.find("\"metrics\""), std::string::npos);

  EXPECT_EQ(code_of([&] { pl::run_report(tmp.file("not-a-run")); }),
            ErrorCode::MissingArtifact);
}

TEST(Grid, SweepsAndRanksCombinations) {
  TempDir tmp;
  pl::PipelineConfig config = small_config(tmp.file("grid-run"));
  config.synthetic.n_real = 30;
  config.synthetic.n_fake = 30;
  config.synthetic.dim = 4;
  config.k = 2;
  config.epochs = 3;
  const std::vector<pl::GridResult> results = pl::run_grid(config);
  ASSERT_EQ(results.size(), 18u);  // 3 rates x 3 batch sizes x 2 presets
  for (std::size_t i = 1; i < results.size(); ++i) {
    EXPECT_GE(results[i - 1].val_accuracy, results[i].val_accuracy);
  }
  std::set<double> rates;
  std::set<std::string> presets;
  for (const pl::GridResult& r : results) {
    rates.insert(r.learning_rate);
    presets.insert(r.hidden_preset);
    EXPECT_GE(r.val_accuracy, 0.0);
    EXPECT_LE(r.val_accuracy, 1.0);
  }
  EXPECT_EQ(rates.size(), 3u);
  EXPECT_EQ(presets.size(), 2u);

  const std::string csv = slurp(fs::path(config.out_dir) / pl::kGridFile);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "learning_rate,batch_size,hidden_preset,val_accuracy,val_auc");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 19);
}

TEST(Sanity, ShuffledLabelsScoreChanceAuc) {
  // Permuting the labels destroys the geometry/label link, so the distance
  // features carry no signal and the classifier must land near AUC 0.5 on
  // average.
  TempDir tmp;
  double total_auc = 0.0;
  const int runs = 8;
  for (int s = 0; s < runs; ++s) {
    Dataset dataset =
        nexus::synthesize(nexus::SyntheticSpec{50, 50, 8, 2.0, static_cast<std::uint64_t>(s)});
    std::vector<EmbeddingRecord> records = dataset.records();
    std::vector<int> labels;
    for (const EmbeddingRecord& r : records) labels.push_back(r.label);
    Rng shuffle_rng(1000 + static_cast<std::uint64_t>(s));
    shuffle_rng.shuffle(labels);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].label = labels[i];

    const fs::path file = tmp.file("perm-" + std::to_string(s) + ".jsonl");
    nexus::save_jsonl(Dataset(std::move(records)), file);

    pl::PipelineConfig config;
    config.data_path = file.string();
    config.variant = nexus::net::Variant::ModelI;
    config.attention = false;
    config.k = 3;
    config.epochs = 10;
    config.batch_size = 16;
    config.learning_rate = 0.05;
    config.seed = static_cast<std::uint64_t>(s);
    config.out_dir = tmp.file("perm-run-" + std::to_string(s)).string();
    total_auc += pl::run_train(config).test_report.auc;
  }
  EXPECT_NEAR(total_auc / runs, 0.5, 0.07);
}

}  // namespace
