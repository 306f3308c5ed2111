#include "nexus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "nexus/error.hpp"

namespace nexus {
namespace {

void check_binary(std::span<const int> values, const char* what) {
  for (int v : values) {
    if (v != 0 && v != 1) {
      throw Error(ErrorCode::LabelOutOfRange,
                  std::string(what) + " " + std::to_string(v) + " is outside {0, 1}");
    }
  }
}

void check_paired(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch,
                std::string(what) + ": lengths " + std::to_string(a) + " and " +
                    std::to_string(b) + " differ");
  }
}

void check_scores(std::span<const int> labels, std::span<const double> scores) {
  check_paired(labels.size(), scores.size(), "labels vs scores");
  if (labels.empty()) {
    throw Error(ErrorCode::EmptyInput, "no scored examples");
  }
  check_binary(labels, "label");
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw Error(ErrorCode::NonFiniteValue, "score is not finite");
    }
  }
  const auto positives = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), 1));
  if (positives == 0 || positives == labels.size()) {
    throw Error(ErrorCode::SingleClass, "need both classes to compute ROC/AUC");
  }
}

void validate_ranked(const RankedList& list, std::size_t query) {
  check_paired(list.ids.size(), list.relevance.size(), "ranked ids vs relevance");
  check_binary(list.relevance, "relevance mark");
  std::unordered_set<std::string_view> seen;
  for (const std::string& id : list.ids) {
    if (!seen.insert(id).second) {
      throw Error(ErrorCode::DuplicateId,
                  "query " + std::to_string(query) + ": duplicate candidate id '" + id + "'");
    }
  }
  const auto marked = static_cast<std::size_t>(
      std::count(list.relevance.begin(), list.relevance.end(), 1));
  if (list.total_relevant != 0 && list.total_relevant < marked) {
    throw Error(ErrorCode::InvalidArgument,
                "query " + std::to_string(query) +
                    ": total_relevant is smaller than the marks in the list");
  }
}

std::size_t relevant_universe(const RankedList& list) {
  if (list.total_relevant != 0) return list.total_relevant;
  return static_cast<std::size_t>(
      std::count(list.relevance.begin(), list.relevance.end(), 1));
}

void validate_ranking_args(std::span<const RankedList> lists, std::size_t k) {
  if (k == 0) {
    throw Error(ErrorCode::InvalidArgument, "ranking cutoff k must be at least 1");
  }
  if (lists.empty()) {
    throw Error(ErrorCode::EmptyQuerySet, "no queries to evaluate");
  }
  for (std::size_t q = 0; q < lists.size(); ++q) validate_ranked(lists[q], q);
}

double discount(std::size_t rank_one_based) {
  return 1.0 / std::log2(static_cast<double>(rank_one_based) + 1.0);
}

}  // namespace

ClassificationReport classification_metrics(std::span<const int> labels,
                                            std::span<const int> predicted) {
  check_paired(labels.size(), predicted.size(), "labels vs predictions");
  if (labels.empty()) {
    throw Error(ErrorCode::EmptyInput, "no examples to evaluate");
  }
  check_binary(labels, "label");
  check_binary(predicted, "prediction");

  ClassificationReport report;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) {
      (predicted[i] == 1 ? report.confusion.tp : report.confusion.fn) += 1;
    } else {
      (predicted[i] == 1 ? report.confusion.fp : report.confusion.tn) += 1;
    }
  }
  const double n = static_cast<double>(labels.size());
  report.accuracy = static_cast<double>(report.confusion.tp + report.confusion.tn) / n;

  const auto safe_div = [&report](std::size_t num, std::size_t den) {
    if (den == 0) {
      report.zero_division = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  const auto fill = [&](ClassMetrics& m, std::size_t tp, std::size_t fp, std::size_t fn) {
    m.precision = safe_div(tp, tp + fp);
    m.recall = safe_div(tp, tp + fn);
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      report.zero_division = true;
      m.f1 = 0.0;
    }
    m.support = tp + fn;
  };
  fill(report.positive, report.confusion.tp, report.confusion.fp, report.confusion.fn);
  fill(report.negative, report.confusion.tn, report.confusion.fn, report.confusion.fp);

  report.macro.precision = (report.positive.precision + report.negative.precision) / 2.0;
  report.macro.recall = (report.positive.recall + report.negative.recall) / 2.0;
  report.macro.f1 = (report.positive.f1 + report.negative.f1) / 2.0;
  report.macro.support = labels.size();

  const double w1 = static_cast<double>(report.positive.support) / n;
  const double w0 = static_cast<double>(report.negative.support) / n;
  report.weighted.precision = w1 * report.positive.precision + w0 * report.negative.precision;
  report.weighted.recall = w1 * report.positive.recall + w0 * report.negative.recall;
  report.weighted.f1 = w1 * report.positive.f1 + w0 * report.negative.f1;
  report.weighted.support = labels.size();
  return report;
}

std::vector<RocPoint> roc_curve(std::span<const int> labels, std::span<const double> scores) {
  check_scores(labels, scores);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double n_neg = static_cast<double>(labels.size()) - n_pos;

  std::vector<RocPoint> curve;
  curve.push_back(RocPoint{std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    curve.push_back(RocPoint{threshold, static_cast<double>(fp) / n_neg,
                             static_cast<double>(tp) / n_pos});
  }
  return curve;
}

double roc_auc(std::span<const int> labels, std::span<const double> scores) {
  check_scores(labels, scores);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups, then the Mann-Whitney statistic.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
    }
    i = j;
  }
  const auto n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double n_neg = static_cast<double>(labels.size()) - n_pos;
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

void write_roc_csv(const std::vector<RocPoint>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  }
  out << "threshold,fpr,tpr\n";
  char buffer[160];
  for (const RocPoint& point : curve) {
    std::snprintf(buffer, sizeof(buffer), "%.17g,%.17g,%.17g\n", point.threshold, point.fpr,
                  point.tpr);
    out << buffer;
  }
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + path.string() + "'");
  }
}

double mrr_at_k(std::span<const RankedList> lists, std::size_t k) {
  validate_ranking_args(lists, k);
  double total = 0.0;
  for (const RankedList& list : lists) {
    const std::size_t depth = std::min(k, list.ids.size());
    for (std::size_t i = 0; i < depth; ++i) {
      if (list.relevance[i] == 1) {
        total += 1.0 / static_cast<double>(i + 1);
        break;
      }
    }
  }
  return total / static_cast<double>(lists.size());
}

double recall_at_k(std::span<const RankedList> lists, std::size_t k) {
  validate_ranking_args(lists, k);
  double total = 0.0;
  for (std::size_t q = 0; q < lists.size(); ++q) {
    const RankedList& list = lists[q];
    const std::size_t universe = relevant_universe(list);
    if (universe == 0) {
      throw Error(ErrorCode::NoRelevant,
                  "query " + std::to_string(q) + " has no relevant items");
    }
    const std::size_t depth = std::min(k, list.ids.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < depth; ++i) hits += list.relevance[i] == 1 ? 1 : 0;
    total += static_cast<double>(hits) / static_cast<double>(universe);
  }
  return total / static_cast<double>(lists.size());
}

double ndcg_at_k(std::span<const RankedList> lists, std::size_t k) {
  validate_ranking_args(lists, k);
  double total = 0.0;
  for (const RankedList& list : lists) {
    const std::size_t universe = relevant_universe(list);
    if (universe == 0) continue;  // contributes 0
    const std::size_t depth = std::min(k, list.ids.size());
    double dcg = 0.0;
    for (std::size_t i = 0; i < depth; ++i) {
      if (list.relevance[i] == 1) dcg += discount(i + 1);
    }
    double ideal = 0.0;
    for (std::size_t i = 1; i <= std::min(k, universe); ++i) ideal += discount(i);
    total += dcg / ideal;
  }
  return total / static_cast<double>(lists.size());
}

namespace {

using nlohmann::ordered_json;

ordered_json class_metrics_json(const ClassMetrics& m) {
  ordered_json object;
  object["precision"] = m.precision;
  object["recall"] = m.recall;
  object["f1"] = m.f1;
  object["support"] = m.support;
  return object;
}

ClassMetrics class_metrics_from(const nlohmann::json& object) {
  ClassMetrics m;
  m.precision = object.at("precision").get<double>();
  m.recall = object.at("recall").get<double>();
  m.f1 = object.at("f1").get<double>();
  m.support = object.at("support").get<std::size_t>();
  return m;
}

}  // namespace

std::string to_json(const EvalReport& report) {
  ordered_json object;
  object["accuracy"] = report.classification.accuracy;
  object["precision"] = report.classification.positive.precision;
  object["recall"] = report.classification.positive.recall;
  object["f1"] = report.classification.positive.f1;
  object["auc"] = report.auc;
  object["zero_division"] = report.classification.zero_division;
  object["confusion"] = {{"tp", report.classification.confusion.tp},
                         {"fp", report.classification.confusion.fp},
                         {"tn", report.classification.confusion.tn},
                         {"fn", report.classification.confusion.fn}};
  object["per_class"]["real"] = class_metrics_json(report.classification.positive);
  object["per_class"]["fake"] = class_metrics_json(report.classification.negative);
  object["macro"] = class_metrics_json(report.classification.macro);
  object["weighted"] = class_metrics_json(report.classification.weighted);
  if (report.ranking) {
    object["ranking"] = {
        {"cutoff", report.ranking->cutoff},
        {"mrr", report.ranking->mrr},
        {"recall", report.ranking->recall},
        {"ndcg", report.ranking->ndcg},
        {"evaluated_queries", report.ranking->evaluated_queries},
        {"dropped_queries", report.ranking->dropped_queries}};
  }
  return object.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  const nlohmann::json object = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (object.is_discarded() || !object.is_object()) {
    throw Error(ErrorCode::ParseError, "evaluation report is not a JSON object");
  }
  EvalReport report;
  try {
    report.classification.accuracy = object.at("accuracy").get<double>();
    report.auc = object.at("auc").get<double>();
    report.classification.zero_division = object.at("zero_division").get<bool>();
    const auto& confusion = object.at("confusion");
    report.classification.confusion.tp = confusion.at("tp").get<std::size_t>();
    report.classification.confusion.fp = confusion.at("fp").get<std::size_t>();
    report.classification.confusion.tn = confusion.at("tn").get<std::size_t>();
    report.classification.confusion.fn = confusion.at("fn").get<std::size_t>();
    report.classification.positive = class_metrics_from(object.at("per_class").at("real"));
    report.classification.negative = class_metrics_from(object.at("per_class").at("fake"));
    report.classification.macro = class_metrics_from(object.at("macro"));
    report.classification.weighted = class_metrics_from(object.at("weighted"));
    if (object.contains("ranking")) {
      const auto& ranking = object.at("ranking");
      RankingMetrics rm;
      rm.cutoff = ranking.at("cutoff").get<std::size_t>();
      rm.mrr = ranking.at("mrr").get<double>();
      rm.recall = ranking.at("recall").get<double>();
      rm.ndcg = ranking.at("ndcg").get<double>();
      rm.evaluated_queries = ranking.at("evaluated_queries").get<std::size_t>();
      rm.dropped_queries = ranking.at("dropped_queries").get<std::size_t>();
      report.ranking = rm;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("evaluation report: ") + e.what());
  }
  return report;
}

std::string to_table(const EvalReport& report) {
  std::ostringstream out;
  char line[160];
  out << "          precision    recall        f1   support\n";
  const auto row = [&](const char* name, const ClassMetrics& m) {
    std::snprintf(line, sizeof(line), "%-8s %10.4f %9.4f %9.4f %9zu\n", name, m.precision,
                  m.recall, m.f1, m.support);
    out << line;
  };
  row("real", report.classification.positive);
  row("fake", report.classification.negative);
  row("macro", report.classification.macro);
  row("weighted", report.classification.weighted);
  std::snprintf(line, sizeof(line), "\naccuracy %.4f\nauc      %.4f\n",
                report.classification.accuracy, report.auc);
  out << line;
  const ConfusionCounts& c = report.classification.confusion;
  std::snprintf(line, sizeof(line), "confusion tp=%zu fp=%zu tn=%zu fn=%zu\n", c.tp, c.fp,
                c.tn, c.fn);
  out << line;
  if (report.ranking) {
    std::snprintf(line, sizeof(line),
                  "ranking@%zu mrr=%.4f recall=%.4f ndcg=%.4f (queries=%zu, dropped=%zu)\n",
                  report.ranking->cutoff, report.ranking->mrr, report.ranking->recall,
                  report.ranking->ndcg, report.ranking->evaluated_queries,
                  report.ranking->dropped_queries);
    out << line;
  }
  if (report.classification.zero_division) {
    out << "warning: a zero denominator was reported as 0\n";
  }
  return out.str();
}

void save_eval_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  }
  out << to_json(report);
  if (!out) {
    throw Error(ErrorCode::IoError, "failed while writing '" + path.string() + "'");
  }
}

EvalReport load_eval_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "' for reading");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return eval_report_from_json(buffer.str());
}

}  // namespace nexus
