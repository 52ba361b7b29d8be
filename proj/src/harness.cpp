#include "detbench/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "detbench/annotations.hpp"
#include "detbench/splitcore.hpp"

namespace detbench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string expand_template(std::string_view pattern, std::string_view model, int fold,
                            std::string_view dataset) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size();) {
    auto match = [&](std::string_view key) { return pattern.substr(i, key.size()) == key; };
    if (match("{model}")) {
      out += model;
      i += 7;
    } else if (match("{fold}")) {
      out += std::to_string(fold);
      i += 6;
    } else if (match("{dataset}")) {
      out += dataset;
      i += 9;
    } else {
      out += pattern[i++];
    }
  }
  return out;
}

RunConfig parse_run_config_text(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig cfg;
  cfg.base_dir = base_dir;
  try {
    for (const auto& d : doc.at("datasets")) {
      cfg.datasets.push_back({d.at("name").get<std::string>(),
                              resolve(base_dir, d.at("annotations").get<std::string>()),
                              resolve(base_dir, d.at("plan").get<std::string>())});
    }
    cfg.models = doc.at("models").get<std::vector<std::string>>();
    cfg.detections_template = doc.at("detections").get<std::string>();
    cfg.thresholds.iou_threshold = doc.value("iou_threshold", 0.5);
    cfg.thresholds.score_threshold = doc.value("score_threshold", 0.5);
    cfg.output_dir = resolve(base_dir, doc.value("output_dir", std::string("report")));
    cfg.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("loss_log")) {
      cfg.loss_log = resolve(base_dir, doc.at("loss_log").get<std::string>());
    }
    if (doc.contains("training_times")) {
      cfg.training_times =
          doc.at("training_times")
              .get<std::map<std::string, std::map<std::string, std::vector<double>>>>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }

  if (cfg.datasets.empty()) throw ConfigError("run config declares no datasets");
  if (cfg.models.empty()) throw ConfigError("run config declares no models");
  std::set<std::string> names;
  for (const auto& d : cfg.datasets) {
    if (d.name.empty() || !names.insert(d.name).second) {
      throw ConfigError("dataset names must be non-empty and unique");
    }
    if (!fs::exists(d.annotations)) {
      throw ConfigError("annotation file not found: " + d.annotations.string());
    }
    if (!fs::exists(d.plan)) throw ConfigError("plan file not found: " + d.plan.string());
  }
  std::set<std::string> models(cfg.models.begin(), cfg.models.end());
  if (models.size() != cfg.models.size() || models.count("")) {
    throw ConfigError("model names must be non-empty and unique");
  }
  const auto& t = cfg.detections_template;
  if (t.find("{model}") == std::string::npos || t.find("{fold}") == std::string::npos ||
      (cfg.datasets.size() > 1 && t.find("{dataset}") == std::string::npos)) {
    throw ConfigError(
        "detections template must contain {model} and {fold} (and {dataset} when several "
        "datasets are declared)");
  }
  for (double v : {cfg.thresholds.iou_threshold, cfg.thresholds.score_threshold}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("thresholds must lie in [0, 1]");
  }
  if (cfg.loss_log && !fs::exists(*cfg.loss_log)) {
    throw ConfigError("loss log not found: " + cfg.loss_log->string());
  }
  return cfg;
}

RunConfig parse_run_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config_text(text, path.parent_path());
}

std::vector<LossRecord> parse_loss_log_text(std::string_view text,
                                            std::vector<std::string>* warnings) {
  std::vector<LossRecord> records;
  bool header_seen = false;
  bool has_split = false;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t eol = text.find('\n', pos);
    const std::size_t line_start = pos;
    const std::string_view line =
        trim(text.substr(pos, eol == std::string_view::npos ? text.size() - pos : eol - pos));
    pos = eol == std::string_view::npos ? text.size() : eol + 1;
    if (line.empty()) continue;
    const auto cols = split_csv_line(line);
    if (!header_seen) {
      const bool base = cols.size() >= 5 && cols[0] == "model" && cols[1] == "dataset" &&
                        cols[2] == "epoch" && cols[3] == "loss_cls" && cols[4] == "loss_reg";
      has_split = cols.size() == 6 && cols[5] == "split";
      if (!base || (cols.size() != 5 && !has_split)) {
        throw ParseError("loss log header must be model,dataset,epoch,loss_cls,loss_reg[,split]",
                         line_start);
      }
      header_seen = true;
      continue;
    }
    if (cols.size() != (has_split ? 6u : 5u)) {
      throw ParseError("loss log row has the wrong number of columns", line_start);
    }
    LossRecord r;
    r.model = std::string(cols[0]);
    r.dataset = std::string(cols[1]);
    auto parse_num = [&](std::string_view s, auto& dst) {
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), dst);
      if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ParseError("loss log: bad number '" + std::string(s) + "'", line_start);
      }
    };
    parse_num(cols[2], r.epoch);
    parse_num(cols[3], r.loss_classification);
    parse_num(cols[4], r.loss_regression);
    if (has_split) r.split = std::string(cols[5]);
    if (!(r.loss_classification >= 0.0) || !(r.loss_regression >= 0.0)) {
      throw DomainError("loss log: negative loss for " + r.model + "/" + r.dataset +
                        " at epoch " + std::to_string(r.epoch));
    }
    if (r.epoch < 1) {
      throw DomainError("loss log: epoch must be >= 1 (" + r.model + "/" + r.dataset + ")");
    }
    records.push_back(std::move(r));
  }

  std::stable_sort(records.begin(), records.end(), [](const LossRecord& a, const LossRecord& b) {
    return std::tie(a.model, a.dataset, a.split, a.epoch) <
           std::tie(b.model, b.dataset, b.split, b.epoch);
  });
  for (std::size_t i = 0; i < records.size();) {
    std::size_t j = i;
    int expected = 1;
    for (; j < records.size() && records[j].model == records[i].model &&
           records[j].dataset == records[i].dataset && records[j].split == records[i].split;
         ++j) {
      if (records[j].epoch != expected) {
        const std::string series = records[i].model + "/" + records[i].dataset;
        if (records[j].epoch < expected) {
          throw IntegrityError("loss log: duplicate epoch " + std::to_string(records[j].epoch) +
                                   " in " + series,
                               {records[j].epoch});
        }
        throw IntegrityError("loss log: epoch " + std::to_string(expected) + " missing in " +
                                 series,
                             {expected});
      }
      ++expected;
    }
    const auto length = j - i;
    if (warnings && length != static_cast<std::size_t>(kExpectedEpochs)) {
      warnings->push_back("loss series " + records[i].model + "/" + records[i].dataset + " has " +
                          std::to_string(length) + " epochs (expected " +
                          std::to_string(kExpectedEpochs) + ")");
    }
    i = j;
  }
  return records;
}

std::vector<LossRecord> ingest_loss_log(const fs::path& path, std::vector<std::string>* warnings) {
  return parse_loss_log_text(read_text_file(path), warnings);
}

std::vector<double> min_max_normalize(const std::vector<double>& series) {
  std::vector<double> out(series.size(), 0.0);
  if (series.empty()) return out;
  const auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = (series[i] - *lo) / range;
  return out;
}

std::vector<LossCurve> normalize_and_combine_losses(const std::vector<LossRecord>& records,
                                                    std::vector<std::string>* warnings,
                                                    const std::optional<std::string>& split) {
  // model -> dataset -> split -> epoch -> combined loss
  std::map<std::string, std::map<std::string, std::map<std::string, std::map<int, double>>>> by;
  for (const auto& r : records) {
    if (split && r.split != *split) continue;
    by[r.model][r.dataset][r.split][r.epoch] = r.combined();
  }
  std::vector<LossCurve> curves;
  for (const auto& [model, datasets] : by) {
    LossCurve curve;
    curve.model = model;
    std::vector<std::vector<double>> normalized;
    for (const auto& [dataset, splits] : datasets) {
      if (splits.size() > 1) {
        throw DomainError("loss series " + model + "/" + dataset +
                          " mixes several splits; select one");
      }
      std::vector<double> combined;
      for (const auto& [epoch, v] : splits.begin()->second) combined.push_back(v);
      if (combined.empty()) continue;
      curve.datasets.push_back(dataset);
      normalized.push_back(min_max_normalize(combined));
    }
    if (normalized.empty()) continue;
    std::size_t common = normalized.front().size();
    bool ragged = false;
    for (const auto& n : normalized) {
      ragged |= n.size() != common;
      common = std::min(common, n.size());
    }
    if (ragged) {
      const std::string note = "datasets differ in epoch count; truncated to " +
                               std::to_string(common) + " epochs";
      curve.notes.push_back(note);
      if (warnings) warnings->push_back(model + ": " + note);
    }
    if (normalized.size() == 1) {
      curve.notes.push_back("single dataset: " + curve.datasets.front());
    }
    curve.normalized.assign(common, 0.0);
    for (std::size_t e = 0; e < common; ++e) {
      double sum = 0.0;
      for (const auto& n : normalized) sum += n[e];
      curve.normalized[e] = sum / static_cast<double>(normalized.size());
    }
    curve.strictly_decreasing = true;
    for (std::size_t e = 1; e < common; ++e) {
      if (!(curve.normalized[e] < curve.normalized[e - 1])) curve.strictly_decreasing = false;
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

BenchmarkReport run_evaluation(const RunConfig& cfg) {
  BenchmarkReport report;
  report.models = cfg.models;
  report.iou_threshold = cfg.thresholds.iou_threshold;
  report.score_threshold = cfg.thresholds.score_threshold;
  report.seed = cfg.seed;

  for (const auto& dcfg : cfg.datasets) {
    const Dataset ds = parse_dataset(dcfg.annotations);
    const FoldPlan plan = parse_plan(dcfg.plan);
    const std::string checksum = dataset_checksum(ds);
    if (plan.dataset_checksum != checksum) {
      throw IntegrityError("plan " + dcfg.plan.string() + " was built for dataset checksum " +
                           plan.dataset_checksum + ", but " + dcfg.annotations.string() +
                           " has checksum " + checksum);
    }
    report.datasets.push_back({dcfg.name, plan.k, plan.seed, plan.dataset_checksum,
                               ds.images.size()});

    std::vector<FoldSplit> splits;
    for (int f = 0; f < plan.k; ++f) splits.push_back(materialize_fold(plan, f));

    std::vector<std::string> models = cfg.models;
    std::sort(models.begin(), models.end());
    for (const auto& model : models) {
      std::vector<MetricsReport> per_fold;
      for (int f = 0; f < plan.k; ++f) {
        const std::string path =
            expand_template(cfg.detections_template, model, f, dcfg.name);
        const fs::path dets_path = resolve(cfg.base_dir, path);
        if (!fs::exists(dets_path)) {
          report.gaps.push_back({dcfg.name, model, f, path, "detections file missing"});
          continue;
        }
        const std::vector<Detection> dets = parse_detections(dets_path);
        check_detections(dets, ds);
        const auto& test = splits[static_cast<std::size_t>(f)].test_ids;
        const std::unordered_set<std::int64_t> test_set(test.begin(), test.end());

        FoldAudit audit{dcfg.name, model, f, dets.size(), 0, 0, true};
        for (const auto& d : dets) audit.detections_evaluated += test_set.count(d.image_id);
        for (const auto& a : ds.annotations) audit.ground_truths_evaluated += test_set.count(a.image_id);

        MetricsReport r;
        try {
          r = evaluate(ds, dets, test, cfg.thresholds);
        } catch (const UndefinedMetricError& e) {
          report.gaps.push_back({dcfg.name, model, f, path, e.what()});
          continue;
        }
        const auto evaluated = r.counts.tp + r.counts.fn;
        std::size_t test_gts = 0;
        for (const auto& a : ds.annotations) {
          if (!a.iscrowd && test_set.count(a.image_id)) ++test_gts;
        }
        audit.sound = static_cast<std::size_t>(evaluated) == test_gts &&
                      static_cast<std::size_t>(r.counts.tp + r.counts.fp) <=
                          audit.detections_evaluated;
        report.audits.push_back(audit);

        r.model = model;
        r.dataset = dcfg.name;
        r.fold = f;
        auto dt = cfg.training_times.find(dcfg.name);
        if (dt != cfg.training_times.end()) {
          auto mt = dt->second.find(model);
          if (mt != dt->second.end() && static_cast<std::size_t>(f) < mt->second.size()) {
            r.training_time_seconds = mt->second[static_cast<std::size_t>(f)];
          }
        }
        per_fold.push_back(r);
      }
      if (!per_fold.empty()) report.aggregates.push_back(aggregate_folds(per_fold));
      report.folds.insert(report.folds.end(), per_fold.begin(), per_fold.end());
    }
  }

  auto by_dataset_model = [](const auto& a, const auto& b) {
    return std::tie(a.dataset, a.model) < std::tie(b.dataset, b.model);
  };
  std::stable_sort(report.folds.begin(), report.folds.end(),
                   [](const MetricsReport& a, const MetricsReport& b) {
                     return std::tie(a.dataset, a.model, a.fold) <
                            std::tie(b.dataset, b.model, b.fold);
                   });
  std::stable_sort(report.aggregates.begin(), report.aggregates.end(), by_dataset_model);
  std::stable_sort(report.gaps.begin(), report.gaps.end(), [](const FoldGap& a, const FoldGap& b) {
    return std::tie(a.dataset, a.model, a.fold) < std::tie(b.dataset, b.model, b.fold);
  });

  if (cfg.loss_log) {
    const auto records = ingest_loss_log(*cfg.loss_log, &report.warnings);
    report.loss_curves = normalize_and_combine_losses(records, &report.warnings);
  }

  emit_report(report, cfg.output_dir, ReportFormats{});
  return report;
}

ReportFormats parse_formats(std::string_view list) {
  ReportFormats f{false, false};
  for (auto part : split_csv_line(list)) {
    if (part == "csv") {
      f.csv = true;
    } else if (part == "json") {
      f.json = true;
    } else {
      throw ConfigError("unknown report format '" + std::string(part) + "'");
    }
  }
  return f;
}

std::string report_to_json(const BenchmarkReport& report) {
  json doc;
  doc["models"] = report.models;
  doc["datasets"] = json::array();
  for (const auto& d : report.datasets) {
    doc["datasets"].push_back({{"name", d.name},
                               {"k", d.k},
                               {"plan_seed", d.plan_seed},
                               {"plan_checksum", d.plan_checksum},
                               {"images", d.images}});
  }
  doc["iou_threshold"] = report.iou_threshold;
  doc["score_threshold"] = report.score_threshold;
  doc["seed"] = report.seed;
  doc["folds"] = report.folds;
  doc["aggregates"] = report.aggregates;
  doc["gaps"] = json::array();
  for (const auto& g : report.gaps) {
    doc["gaps"].push_back({{"dataset", g.dataset},
                           {"model", g.model},
                           {"fold", g.fold},
                           {"path", g.path},
                           {"reason", g.reason}});
  }
  doc["audits"] = json::array();
  for (const auto& a : report.audits) {
    doc["audits"].push_back({{"dataset", a.dataset},
                             {"model", a.model},
                             {"fold", a.fold},
                             {"detections_in_file", a.detections_in_file},
                             {"detections_evaluated", a.detections_evaluated},
                             {"ground_truths_evaluated", a.ground_truths_evaluated},
                             {"sound", a.sound}});
  }
  doc["loss_curves"] = json::array();
  for (const auto& c : report.loss_curves) {
    doc["loss_curves"].push_back({{"model", c.model},
                                  {"datasets", c.datasets},
                                  {"normalized", c.normalized},
                                  {"strictly_decreasing", c.strictly_decreasing},
                                  {"notes", c.notes}});
  }
  doc["warnings"] = report.warnings;
  return doc.dump(1) + "\n";
}

BenchmarkReport report_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed report: ") + e.what(), e.byte);
  }
  BenchmarkReport r;
  try {
    r.models = doc.at("models").get<std::vector<std::string>>();
    for (const auto& d : doc.at("datasets")) {
      r.datasets.push_back({d.at("name").get<std::string>(), d.at("k").get<int>(),
                            d.at("plan_seed").get<std::uint64_t>(),
                            d.at("plan_checksum").get<std::string>(),
                            d.at("images").get<std::size_t>()});
    }
    r.iou_threshold = doc.at("iou_threshold").get<double>();
    r.score_threshold = doc.at("score_threshold").get<double>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.folds = doc.at("folds").get<std::vector<MetricsReport>>();
    r.aggregates = doc.at("aggregates").get<std::vector<AggregateReport>>();
    for (const auto& g : doc.at("gaps")) {
      r.gaps.push_back({g.at("dataset").get<std::string>(), g.at("model").get<std::string>(),
                        g.at("fold").get<int>(), g.at("path").get<std::string>(),
                        g.at("reason").get<std::string>()});
    }
    for (const auto& a : doc.at("audits")) {
      r.audits.push_back({a.at("dataset").get<std::string>(), a.at("model").get<std::string>(),
                          a.at("fold").get<int>(), a.at("detections_in_file").get<std::size_t>(),
                          a.at("detections_evaluated").get<std::size_t>(),
                          a.at("ground_truths_evaluated").get<std::size_t>(),
                          a.at("sound").get<bool>()});
    }
    for (const auto& c : doc.at("loss_curves")) {
      r.loss_curves.push_back({c.at("model").get<std::string>(),
                               c.at("datasets").get<std::vector<std::string>>(),
                               c.at("normalized").get<std::vector<double>>(),
                               c.at("strictly_decreasing").get<bool>(),
                               c.at("notes").get<std::vector<std::string>>()});
    }
    r.warnings = doc.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("report: ") + e.what(), "<report>");
  }
  return r;
}

std::string table_csv(const BenchmarkReport& report, const std::string& dataset) {
  std::ostringstream os;
  os << "model,folds,training_time_s,precision,precision_std,recall,recall_std,f1,f1_std,"
        "f1_of_means,map50,map50_std,map75,map75_std,map,map_std,gaps\n";
  for (const auto& model : report.models) {
    const auto gaps = std::count_if(report.gaps.begin(), report.gaps.end(), [&](const FoldGap& g) {
      return g.dataset == dataset && g.model == model;
    });
    auto it = std::find_if(report.aggregates.begin(), report.aggregates.end(),
                           [&](const AggregateReport& a) {
                             return a.dataset == dataset && a.model == model;
                           });
    os << csv_field(model) << ',';
    if (it == report.aggregates.end()) {
      os << "0,,,,,,,,,,,,,,," << gaps << '\n';
      continue;
    }
    const AggregateReport& a = *it;
    os << a.folds.size() << ',';
    if (a.training_time_seconds) os << fixed(a.training_time_seconds->mean, 2);
    for (const MetricSummary* s : {&a.precision, &a.recall, &a.f1}) {
      os << ',' << format_percent(s->mean) << ',' << format_percent(s->std);
    }
    os << ',' << format_percent(a.f1_of_means);
    for (const MetricSummary* s : {&a.map50, &a.map75, &a.map}) {
      os << ',' << format_percent(s->mean) << ',' << format_percent(s->std);
    }
    os << ',' << gaps << '\n';
  }
  return os.str();
}

std::string folds_csv(const BenchmarkReport& report) {
  std::string out = std::string(kFoldCsvHeader) + "\n";
  for (const auto& r : report.folds) out += fold_csv_row(r) + "\n";
  return out;
}

std::string loss_curves_csv(const std::vector<LossCurve>& curves) {
  std::string out = "model,epoch,normalized_loss\n";
  for (const auto& c : curves) {
    for (std::size_t e = 0; e < c.normalized.size(); ++e) {
      out += csv_field(c.model) + "," + std::to_string(e + 1) + "," + fixed(c.normalized[e], 6) +
             "\n";
    }
  }
  return out;
}

std::string loss_flags_csv(const std::vector<LossCurve>& curves) {
  std::string out = "model,datasets,epochs,strictly_decreasing,notes\n";
  for (const auto& c : curves) {
    out += csv_field(c.model) + "," + csv_field(join(c.datasets, ';')) + "," +
           std::to_string(c.normalized.size()) + "," + (c.strictly_decreasing ? "1" : "0") + "," +
           csv_field(join(c.notes, ';')) + "\n";
  }
  return out;
}

std::vector<fs::path> emit_report(const BenchmarkReport& report, const fs::path& dir,
                                  const ReportFormats& formats) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
  std::vector<fs::path> written;
  auto put = [&](const fs::path& name, const std::string& text) {
    write_text_file(dir / name, text);
    written.push_back(dir / name);
  };
  if (formats.csv) {
    for (const auto& d : report.datasets) put("table_" + d.name + ".csv", table_csv(report, d.name));
    put("folds.csv", folds_csv(report));
    std::string gaps = "dataset,model,fold,path,reason\n";
    for (const auto& g : report.gaps) {
      gaps += csv_field(g.dataset) + "," + csv_field(g.model) + "," + std::to_string(g.fold) +
              "," + csv_field(g.path) + "," + csv_field(g.reason) + "\n";
    }
    put("gaps.csv", gaps);
    put("loss_curves.csv", loss_curves_csv(report.loss_curves));
    put("loss_flags.csv", loss_flags_csv(report.loss_curves));
  }
  if (formats.json) put("report.json", report_to_json(report));
  return written;
}

}  // namespace detbench
