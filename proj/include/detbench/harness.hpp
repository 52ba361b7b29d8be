#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "detbench/errors.hpp"
#include "detbench/metrics.hpp"

namespace detbench {

// Invalid or unresolvable run configuration (CLI exit status 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct DatasetConfig {
  std::string name;
  std::filesystem::path annotations;
  std::filesystem::path plan;
};

struct RunConfig {
  std::vector<DatasetConfig> datasets;
  std::vector<std::string> models;
  // Expanded per (model, fold, dataset), e.g. "runs/{dataset}/{model}/fold{fold}/dets.json".
  std::string detections_template;
  // Relative detection paths resolve against this (the config file's directory).
  std::filesystem::path base_dir;
  EvalOptions thresholds;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> loss_log;
  // dataset -> model -> per-fold training seconds (pass-through metadata).
  std::map<std::string, std::map<std::string, std::vector<double>>> training_times;
};

// Relative paths are resolved against `base_dir`. Throws ConfigError.
RunConfig parse_run_config_text(std::string_view text, const std::filesystem::path& base_dir);
RunConfig parse_run_config(const std::filesystem::path& path);

std::string expand_template(std::string_view pattern, std::string_view model, int fold,
                            std::string_view dataset);

struct LossRecord {
  std::string model;
  std::string dataset;
  int epoch = 0;
  double loss_classification = 0.0;
  double loss_regression = 0.0;
  std::string split;  // optional free-form column

  double combined() const noexcept { return loss_classification + loss_regression; }
  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

inline constexpr int kExpectedEpochs = 12;

// Parses `model,dataset,epoch,loss_cls,loss_reg[,split]`, returning records
// sorted by (model, dataset, split, epoch). Epochs must run 1..E without gaps
// in every series (IntegrityError otherwise); losses must be non-negative
// (DomainError). Series whose length is not 12 add a warning.
std::vector<LossRecord> parse_loss_log_text(std::string_view text,
                                            std::vector<std::string>* warnings = nullptr);
std::vector<LossRecord> ingest_loss_log(const std::filesystem::path& path,
                                        std::vector<std::string>* warnings = nullptr);

// Min-max to [0, 1]; a constant series maps to zeros.
std::vector<double> min_max_normalize(const std::vector<double>& series);

struct LossCurve {
  std::string model;
  std::vector<std::string> datasets;  // contributing datasets, sorted
  std::vector<double> normalized;     // index e holds epoch e+1
  bool strictly_decreasing = false;
  std::vector<std::string> notes;
};

// Per (model, dataset): combined = cls + reg, min-max normalized. Per model:
// epoch-wise mean over datasets, truncated to the shortest series. Curves are
// sorted by model name. When a (model, dataset) pair carries several `split`
// values, `split` must select one (DomainError otherwise).
std::vector<LossCurve> normalize_and_combine_losses(const std::vector<LossRecord>& records,
                                                    std::vector<std::string>* warnings = nullptr,
                                                    const std::optional<std::string>& split = {});

struct FoldGap {
  std::string dataset;
  std::string model;
  int fold = 0;
  std::string path;
  std::string reason;
};

struct FoldAudit {
  std::string dataset;
  std::string model;
  int fold = 0;
  std::size_t detections_in_file = 0;
  std::size_t detections_evaluated = 0;  // on the fold's test images
  std::size_t ground_truths_evaluated = 0;
  bool sound = true;  // every evaluated item lies on a test image
};

struct DatasetProvenance {
  std::string name;
  int k = 0;
  std::uint64_t plan_seed = 0;
  std::string plan_checksum;
  std::size_t images = 0;
};

struct BenchmarkReport {
  std::vector<std::string> models;  // declared order
  std::vector<DatasetProvenance> datasets;
  double iou_threshold = 0.5;
  double score_threshold = 0.5;
  std::uint64_t seed = 0;
  std::vector<MetricsReport> folds;          // sorted (dataset, model, fold)
  std::vector<AggregateReport> aggregates;   // sorted (dataset, model)
  std::vector<FoldGap> gaps;
  std::vector<FoldAudit> audits;
  std::vector<LossCurve> loss_curves;
  std::vector<std::string> warnings;
};

// Evaluates every (dataset, model, fold) on the fold's test images and
// aggregates across folds. Missing detection files become gaps; a plan whose
// checksum does not match its dataset aborts with IntegrityError.
BenchmarkReport run_evaluation(const RunConfig& cfg);

struct ReportFormats {
  bool csv = true;
  bool json = true;
};

ReportFormats parse_formats(std::string_view list);  // e.g. "csv,json"

std::string report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(std::string_view text);

// Per-dataset summary table: one row per declared model.
std::string table_csv(const BenchmarkReport& report, const std::string& dataset);
std::string folds_csv(const BenchmarkReport& report);
std::string loss_curves_csv(const std::vector<LossCurve>& curves);
std::string loss_flags_csv(const std::vector<LossCurve>& curves);

// Writes table_<dataset>.csv, folds.csv, gaps.csv, loss_curves.csv and
// loss_flags.csv (csv) and report.json (json). Returns the written paths.
std::vector<std::filesystem::path> emit_report(const BenchmarkReport& report,
                                               const std::filesystem::path& dir,
                                               const ReportFormats& formats);

}  // namespace detbench
