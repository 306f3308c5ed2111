// Command-line front end: ingest | train | evaluate | search | report.
// Results go to stdout, diagnostics to stderr; the exit code identifies the
// error family (see nexus/error.hpp).

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nexus/error.hpp"
#include "nexus/pipeline.hpp"
#include "nexus/version.hpp"

namespace {

using nexus::Error;
using nexus::ErrorCode;
namespace pipeline = nexus::pipeline;

struct GlobalArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

// Config file first, then command-line overrides on top.
pipeline::PipelineConfig resolve_config(const GlobalArgs& args) {
  pipeline::PipelineConfig config;
  if (!args.config_path.empty()) {
    config = pipeline::config_from_json_file(args.config_path);
  }
  if (args.seed) config.seed = *args.seed;
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  return config;
}

std::vector<float> parse_vector(const std::string& text) {
  std::vector<float> values;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    const std::string token = text.substr(start, end - start);
    if (token.find_first_not_of(" \t") == std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "--vector has an empty component");
    }
    char* parsed_end = nullptr;
    const float value = std::strtof(token.c_str(), &parsed_end);
    while (parsed_end != nullptr && (*parsed_end == ' ' || *parsed_end == '\t')) ++parsed_end;
    if (parsed_end == nullptr || *parsed_end != '\0') {
      throw Error(ErrorCode::InvalidArgument, "--vector component '" + token + "' is not a number");
    }
    values.push_back(value);
    start = end + 1;
  }
  return values;
}

void print_hits(const std::vector<nexus::SearchHit>& hits) {
  std::printf("rank,id,distance\n");
  for (std::size_t i = 0; i < hits.size(); ++i) {
    std::printf("%zu,%s,%.17g\n", i + 1, hits[i].id.c_str(), hits[i].distance);
  }
}

int run_search(const GlobalArgs& globals, const std::string& index_path, const std::string& id,
               const std::string& vector_text, std::size_t k) {
  std::filesystem::path path;
  if (!index_path.empty()) {
    path = index_path;
  } else {
    const pipeline::PipelineConfig config = resolve_config(globals);
    if (config.out_dir.empty()) {
      throw Error(ErrorCode::ConfigError, "search needs --index, or --out/--config to find one");
    }
    path = std::filesystem::path(config.out_dir) / pipeline::kIndexFile;
  }
  if (id.empty() == vector_text.empty()) {
    throw Error(ErrorCode::ConfigError, "search needs exactly one of --id and --vector");
  }
  const std::vector<nexus::SearchHit> hits =
      id.empty() ? pipeline::search_index_by_vector(path, parse_vector(vector_text), k)
                 : pipeline::search_index_by_id(path, id, k);
  print_hits(hits);
  return 0;
}

int run_train_command(const GlobalArgs& globals, bool grid) {
  const pipeline::PipelineConfig config = resolve_config(globals);
  if (grid) {
    const std::vector<pipeline::GridResult> results = pipeline::run_grid(config);
    std::printf("learning_rate,batch_size,hidden_preset,val_accuracy,val_auc\n");
    for (const pipeline::GridResult& r : results) {
      std::printf("%g,%zu,%s,%.4f,%.4f\n", r.learning_rate, r.batch_size,
                  r.hidden_preset.c_str(), r.val_accuracy, r.val_auc);
    }
    std::printf("grid results written to %s\n",
                (std::filesystem::path(config.out_dir) / pipeline::kGridFile).c_str());
    return 0;
  }
  const pipeline::TrainOutcome outcome = pipeline::run_train(config);
  if (!outcome.history.empty()) {
    const nexus::net::EpochStats& last = outcome.history.back();
    std::printf("trained %zu epochs (final loss %.6f, final train accuracy %.4f)\n", last.epoch,
                last.loss, last.train_accuracy);
  }
  std::fputs(nexus::to_table(outcome.test_report).c_str(), stdout);
  std::printf("artifacts written to %s\n", outcome.run_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented fake-news classifier: exact top-k L2 index, "
               "feed-forward classifier on retrieval features, IR metrics"};
  app.set_version_flag("--version", std::string(nexus::kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs globals;
  app.add_option("--config", globals.config_path, "JSON run configuration")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", globals.seed, "Override the configured root seed");
  app.add_option("--out", globals.out_dir, "Override the configured output directory");

  CLI::App* ingest = app.add_subcommand("ingest", "Validate and summarize the dataset");

  bool grid = false;
  CLI::App* train = app.add_subcommand("train", "Train a classifier and persist the artifacts");
  train->add_flag("--grid", grid, "Sweep learning rate x batch size x hidden preset instead");

  std::string eval_data;
  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Evaluate stored artifacts and refresh metrics.json");
  evaluate->add_option("--data", eval_data, "External labeled JSONL file to evaluate on")
      ->check(CLI::ExistingFile);

  std::string index_path, search_id, vector_text;
  std::size_t k = 5;
  CLI::App* search = app.add_subcommand("search", "Query a saved index");
  search->add_option("--index", index_path, "Index file (default: <out_dir>/index.nxidx)");
  search->add_option("--id", search_id, "Use this indexed record as the query (self excluded)");
  search->add_option("--vector", vector_text, "Comma-separated query vector");
  search->add_option("-k,--k", k, "Number of neighbors");

  std::string report_dir;
  CLI::App* report = app.add_subcommand("report", "Consolidated report for a run directory");
  report->add_option("run_dir", report_dir, "Run directory (default: the configured out_dir)");

  try {
    app.parse(argc, argv);

    if (ingest->parsed()) {
      const pipeline::IngestSummary summary = pipeline::run_ingest(resolve_config(globals));
      std::fputs(pipeline::to_table(summary).c_str(), stdout);
      return 0;
    }
    if (train->parsed()) return run_train_command(globals, grid);
    if (evaluate->parsed()) {
      std::optional<std::filesystem::path> external;
      if (!eval_data.empty()) external = eval_data;
      const nexus::EvalReport result = pipeline::run_evaluate(resolve_config(globals), external);
      std::fputs(nexus::to_table(result).c_str(), stdout);
      return 0;
    }
    if (search->parsed()) return run_search(globals, index_path, search_id, vector_text, k);
    if (report->parsed()) {
      std::string dir = report_dir;
      if (dir.empty()) dir = resolve_config(globals).out_dir;
      if (dir.empty()) {
        throw Error(ErrorCode::ConfigError, "report needs a run directory (argument or --out)");
      }
      std::fputs(pipeline::run_report(dir).c_str(), stdout);
      return 0;
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return nexus::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
