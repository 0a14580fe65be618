#pragma once

// Classification and retrieval evaluation: confusion matrix, macro
// precision/recall/accuracy/F1, per-query precision-recall and mAP.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "ranking.hpp"

namespace cbmir {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t n, std::vector<std::string> names = {})
      : n_(n), counts_(n * n, 0), class_names_(std::move(names)) {
    if (class_names_.empty())
      for (std::size_t i = 0; i < n; ++i) class_names_.push_back(std::to_string(i));
    if (class_names_.size() != n) throw InputError("class name count does not match matrix size");
  }

  std::size_t classes() const { return n_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * n_ + pred]; }

  std::uint64_t row_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < n_; ++p) s += at(truth, p);
    return s;
  }
  std::uint64_t col_sum(std::size_t pred) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < n_; ++t) s += at(t, pred);
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t k = 0; k < n_; ++k) s += at(k, k);
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
  std::vector<std::string> class_names_;
};

inline ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                        std::span<const std::size_t> predicted, std::size_t n,
                                        std::vector<std::string> names = {}) {
  if (truth.size() != predicted.size())
    throw InputError("true and predicted label lists differ in length");
  ConfusionMatrix cm(n, std::move(names));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= n || predicted[i] >= n)
      throw InputError("label out of range at position " + std::to_string(i));
    ++cm.at(truth[i], predicted[i]);
  }
  return cm;
}

struct ClassMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0;
  double recall = 0.0;
  bool precision_undefined = false;  // class never predicted
  bool recall_undefined = false;     // class absent from ground truth
};

struct ClassificationReport {
  std::vector<ClassMetrics> per_class;
  double average_precision = 0.0;  // macro mean of TP/(TP+FP)
  double average_recall = 0.0;     // macro mean of TP/(TP+FN)
  double accuracy = 0.0;           // macro mean of (TP+TN)/total
  double overall_accuracy = 0.0;   // trace/total
  double f1 = 0.0;                 // 2*AP*AR/(AP+AR)
  bool f1_undefined = false;
};

inline ClassificationReport classification_report(const ConfusionMatrix& cm) {
  const std::size_t n = cm.classes();
  const std::uint64_t total = cm.total();
  if (n == 0 || total == 0) throw InputError("classification report needs a non-empty matrix");
  ClassificationReport rep;
  rep.per_class.resize(n);
  double sum_p = 0.0, sum_r = 0.0, sum_acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ClassMetrics& m = rep.per_class[k];
    m.tp = cm.at(k, k);
    m.fp = cm.col_sum(k) - m.tp;
    m.fn = cm.row_sum(k) - m.tp;
    m.tn = total - m.tp - m.fp - m.fn;
    if (m.tp + m.fp == 0) {
      m.precision_undefined = true;
    } else {
      m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    }
    if (m.tp + m.fn == 0) {
      m.recall_undefined = true;
    } else {
      m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    }
    sum_p += m.precision;
    sum_r += m.recall;
    sum_acc += static_cast<double>(m.tp + m.tn) / static_cast<double>(total);
  }
  const double nd = static_cast<double>(n);
  rep.average_precision = sum_p / nd;
  rep.average_recall = sum_r / nd;
  rep.accuracy = sum_acc / nd;
  rep.overall_accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  const double denom = rep.average_precision + rep.average_recall;
  if (denom == 0.0) {
    rep.f1_undefined = true;
  } else {
    rep.f1 = 2.0 * rep.average_precision * rep.average_recall / denom;
  }
  return rep;
}

struct MetricsReport {
  ConfusionMatrix confusion;
  ClassificationReport report;
};

inline MetricsReport evaluate_predictions(std::span<const std::size_t> truth,
                                          std::span<const std::size_t> predicted, std::size_t n,
                                          std::vector<std::string> names = {}) {
  MetricsReport out;
  out.confusion = confusion_matrix(truth, predicted, n, std::move(names));
  out.report = classification_report(out.confusion);
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
  friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

// One point per rank cutoff k = 1..depth.
struct PRCurve {
  std::vector<PRPoint> points;
};

struct QueryEvaluation {
  PRCurve curve;
  std::size_t depth = 0;
  std::size_t relevant_retrieved = 0;
  std::size_t total_relevant = 0;
  double precision_at_depth = 0.0;
  double recall_at_depth = 0.0;
  double average_precision = 0.0;
  bool valid = true;  // false when the database holds no relevant item
};

// `relevant[k]` tells whether the item at rank k+1 is relevant.
// Average precision is the mean of precision@k over relevant ranks,
// normalised by min(total_relevant, depth).
inline QueryEvaluation evaluate_ranking(const std::vector<bool>& relevant,
                                        std::size_t total_relevant) {
  QueryEvaluation q;
  q.depth = relevant.size();
  q.total_relevant = total_relevant;
  q.valid = total_relevant > 0;
  q.curve.points.reserve(relevant.size());
  double ap_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < relevant.size(); ++k) {
    const bool hit = relevant[k];
    const double precision = static_cast<double>(hits + hit) / static_cast<double>(k + 1);
    if (hit) {
      ++hits;
      ap_sum += precision;
    }
    const double recall =
        q.valid ? static_cast<double>(hits) / static_cast<double>(total_relevant) : 0.0;
    q.curve.points.push_back({recall, precision});
  }
  q.relevant_retrieved = hits;
  if (q.depth > 0) q.precision_at_depth = static_cast<double>(hits) / static_cast<double>(q.depth);
  if (q.valid) {
    q.recall_at_depth = static_cast<double>(hits) / static_cast<double>(total_relevant);
    const std::size_t norm = std::min(total_relevant, q.depth);
    q.average_precision = norm ? ap_sum / static_cast<double>(norm) : 0.0;
  }
  return q;
}

// Relevance is equality of true labels between result item and query.
inline QueryEvaluation retrieval_pr(const RetrievalResult& result, std::size_t query_true_label,
                                    std::size_t total_relevant_in_db) {
  std::vector<bool> rel(result.items.size());
  for (std::size_t k = 0; k < rel.size(); ++k)
    rel[k] = result.items[k].true_label == query_true_label;
  return evaluate_ranking(rel, total_relevant_in_db);
}

inline double mean_average_precision(std::span<const QueryEvaluation> queries) {
  double sum = 0.0;
  std::size_t valid = 0;
  for (const auto& q : queries) {
    if (!q.valid) continue;
    sum += q.average_precision;
    ++valid;
  }
  if (valid == 0) throw InputError("mean average precision needs at least one valid query");
  return sum / static_cast<double>(valid);
}

// Mean (recall, precision) at each cutoff k = 1..depth over valid queries.
// A query shorter than k contributes its last point.
inline PRCurve average_curve(std::span<const QueryEvaluation> queries, std::size_t depth) {
  PRCurve out;
  std::size_t valid = 0;
  for (const auto& q : queries) valid += q.valid && !q.curve.points.empty();
  if (valid == 0) return out;
  out.points.assign(depth, {});
  for (const auto& q : queries) {
    if (!q.valid || q.curve.points.empty()) continue;
    for (std::size_t k = 0; k < depth; ++k) {
      const auto& p = q.curve.points[std::min(k, q.curve.points.size() - 1)];
      out.points[k].recall += p.recall;
      out.points[k].precision += p.precision;
    }
  }
  for (auto& p : out.points) {
    p.recall /= static_cast<double>(valid);
    p.precision /= static_cast<double>(valid);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plot data: CSV rows of layer,filter_mode,recall,precision.

struct PRSeries {
  std::string layer;
  std::string filter_mode;
  PRCurve curve;
};

inline constexpr const char* kPlotHeader = "layer,filter_mode,recall,precision";

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void emit_pr_plot_data(std::span<const PRSeries> series, const std::string& path) {
  if (series.empty()) throw InputError("no curves to write");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << kPlotHeader << '\n';
  for (const auto& s : series)
    for (const auto& p : s.curve.points)
      out << s.layer << ',' << s.filter_mode << ',' << format_real(p.recall) << ','
          << format_real(p.precision) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<PRSeries> parse_pr_plot_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kPlotHeader)
    throw FormatError("plot data file lacks the expected header");
  std::vector<PRSeries> series;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string layer, mode, r, p;
    if (!std::getline(ss, layer, ',') || !std::getline(ss, mode, ',') ||
        !std::getline(ss, r, ',') || !std::getline(ss, p))
      throw FormatError("malformed plot data row: " + line);
    if (series.empty() || series.back().layer != layer || series.back().filter_mode != mode)
      series.push_back({layer, mode, {}});
    series.back().curve.points.push_back({std::stod(r), std::stod(p)});
  }
  return series;
}

}  // namespace cbmir
