#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nexus {

// Positive class is label 1 ("real"): tp counts real articles predicted real.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct ClassificationReport {
  ConfusionCounts confusion;
  double accuracy = 0.0;
  ClassMetrics positive;  // label 1
  ClassMetrics negative;  // label 0
  ClassMetrics macro;     // unweighted mean over the two classes
  ClassMetrics weighted;  // support-weighted mean
  // True when any precision/recall/f1 denominator was zero; the affected
  // value is reported as 0 instead of NaN.
  bool zero_division = false;

  friend bool operator==(const ClassificationReport&, const ClassificationReport&) = default;
};

ClassificationReport classification_metrics(std::span<const int> labels,
                                            std::span<const int> predicted);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

// Points swept from the most permissive threshold down: starts at
// (+inf, 0, 0), one point per distinct score, ends at (min score, 1, 1).
std::vector<RocPoint> roc_curve(std::span<const int> labels, std::span<const double> scores);

// Rank-statistic AUC: probability a random positive outscores a random
// negative, ties counted 1/2 (average ranks). Equals the trapezoidal area
// under roc_curve.
double roc_auc(std::span<const int> labels, std::span<const double> scores);

void write_roc_csv(const std::vector<RocPoint>& curve, const std::filesystem::path& path);

// One query's retrieval result: candidate ids best-first with binary
// relevance marks. total_relevant is the number of relevant items in the
// query's whole candidate universe; 0 means "derive from the marks" (i.e. the
// list is the universe).
struct RankedList {
  std::vector<std::string> ids;
  std::vector<int> relevance;
  std::size_t total_relevant = 0;
};

// Mean reciprocal rank of the first relevant item within the top k (0 for
// queries with none there).
double mrr_at_k(std::span<const RankedList> lists, std::size_t k);

// Mean fraction of each query's relevant items that appear in its top k.
// Every query must have at least one relevant item in its universe.
double recall_at_k(std::span<const RankedList> lists, std::size_t k);

// Binary-gain DCG with 1/log2(rank+1) discount, normalized by the ideal
// ordering. Queries with no relevant items contribute 0.
double ndcg_at_k(std::span<const RankedList> lists, std::size_t k);

struct RankingMetrics {
  std::size_t cutoff = 10;
  double mrr = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t evaluated_queries = 0;
  // Queries excluded because no candidate in their universe was relevant
  // under the active relevance rule.
  std::size_t dropped_queries = 0;

  friend bool operator==(const RankingMetrics&, const RankingMetrics&) = default;
};

struct EvalReport {
  ClassificationReport classification;
  double auc = 0.0;
  std::optional<RankingMetrics> ranking;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Stable-field-order JSON; serializing the same report twice is
// byte-identical.
std::string to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

// Human-readable fixed-width table.
std::string to_table(const EvalReport& report);

void save_eval_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_eval_report(const std::filesystem::path& path);

}  // namespace nexus
