#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "detbench/annotations.hpp"
#include "detbench/matcheval.hpp"

namespace detbench {

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;  // lowest score admitted at this point
};

struct APResult {
  std::int64_t category_id = 0;
  double iou_threshold = 0.0;
  double ap = 0.0;
  std::vector<PRPoint> points;
};

// IoU thresholds .50, .55, ..., .95.
std::array<double, 10> coco_iou_thresholds();
// Recall samples 0.00, 0.01, ..., 1.00.
inline constexpr int kRecallSamples = 101;

double precision(const ConfusionCounts& c) noexcept;
double recall(const ConfusionCounts& c) noexcept;
double f1(double p, double r) noexcept;

// 101-point interpolated AP for one class across any number of images.
// Returns nullopt (skip) when there are no non-crowd ground truths.
// Throws DomainError if the inputs mix categories.
std::optional<APResult> average_precision(const std::vector<Detection>& dets,
                                          const std::vector<Annotation>& gts,
                                          double iou_thr);

// Mean over the retained classes. Throws UndefinedMetricError on empty input.
double mean_ap(const std::vector<APResult>& aps);

struct ClassAP {
  std::int64_t category_id = 0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap = 0.0;  // mean over the ten thresholds
};

struct MapSuite {
  double map50 = 0.0;
  double map75 = 0.0;
  double map = 0.0;
  std::vector<ClassAP> per_class;  // ascending category id
};

// mAP@50, mAP@75 and mAP@[.50:.95] over every class with ground truth.
// Throws UndefinedMetricError when no class has ground truth.
MapSuite map_suite(const std::vector<Detection>& dets, const std::vector<Annotation>& gts);

struct ClassMetrics {
  std::int64_t category_id = 0;
  std::string name;
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ap50 = 0.0;
  double ap75 = 0.0;
  double ap = 0.0;
};

struct MetricsReport {
  std::string model;
  std::string dataset;
  int fold = -1;
  std::optional<double> training_time_seconds;

  // Micro-averaged (pooled counts) operating-point metrics.
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Macro variants: unweighted means over classes with ground truth.
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;

  double map50 = 0.0;
  double map75 = 0.0;
  double map = 0.0;
  ConfusionCounts counts;
  std::vector<ClassMetrics> per_class;
};

struct EvalOptions {
  double iou_threshold = 0.5;
  double score_threshold = 0.5;
};

// Full metric suite over `image_ids` of `ds`. Detections on other images are
// ignored. Throws UndefinedMetricError when the images hold no ground truth.
MetricsReport evaluate(const Dataset& ds, const std::vector<Detection>& dets,
                       const std::vector<std::int64_t>& image_ids, const EvalOptions& opts);
// Convenience: every image of `ds`.
MetricsReport evaluate(const Dataset& ds, const std::vector<Detection>& dets,
                       const EvalOptions& opts);

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single fold
  std::vector<double> values;
};

MetricSummary summarize(const std::vector<double>& values);

struct AggregateReport {
  std::string model;
  std::string dataset;
  std::vector<int> folds;
  MetricSummary precision, recall, f1, map50, map75, map;
  // F1 recomputed from the fold-mean precision and recall; differs in
  // general from f1.mean.
  double f1_of_means = 0.0;
  std::optional<MetricSummary> training_time_seconds;
  ConfusionCounts counts;  // pooled over folds
};

// Throws DomainError on mixed model/dataset labels, PreconditionError on an
// empty list.
AggregateReport aggregate_folds(const std::vector<MetricsReport>& reports);

// Fixed two-decimal percentage, e.g. 0.95124 -> "95.12".
std::string format_percent(double ratio);

inline constexpr const char* kFoldCsvHeader =
    "model,dataset,fold,precision,recall,f1,map50,map75,map,tp,fp,fn,training_time_s";
std::string fold_csv_row(const MetricsReport& r);

void to_json(nlohmann::json& j, const ConfusionCounts& c);
void from_json(const nlohmann::json& j, ConfusionCounts& c);
void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);
void to_json(nlohmann::json& j, const MetricSummary& s);
void from_json(const nlohmann::json& j, MetricSummary& s);
void to_json(nlohmann::json& j, const AggregateReport& a);
void from_json(const nlohmann::json& j, AggregateReport& a);

}  // namespace detbench
