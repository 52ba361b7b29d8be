#include "detbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace detbench {

using nlohmann::json;

std::array<double, 10> coco_iou_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = (50 + 5 * i) / 100.0;
  return t;
}

double precision(const ConfusionCounts& c) noexcept {
  const auto denom = c.tp + c.fp;
  return denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double recall(const ConfusionCounts& c) noexcept {
  const auto denom = c.tp + c.fn;
  return denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double f1(double p, double r) noexcept {
  const double s = p + r;
  return s > 0.0 ? 2.0 * p * r / s : 0.0;
}

std::optional<APResult> average_precision(const std::vector<Detection>& dets,
                                          const std::vector<Annotation>& gts,
                                          double iou_thr) {
  std::optional<std::int64_t> category;
  auto same = [&](std::int64_t c) {
    if (category && *category != c) {
      throw DomainError("average_precision inputs mix categories");
    }
    category = c;
  };
  for (const auto& d : dets) same(d.category_id);
  for (const auto& g : gts) same(g.category_id);

  std::unordered_map<std::int64_t, std::vector<const Annotation*>> gts_by_image;
  std::int64_t n_gt = 0;
  for (const auto& g : gts) {
    if (g.iscrowd) continue;
    gts_by_image[g.image_id].push_back(&g);
    ++n_gt;
  }
  if (n_gt == 0) return std::nullopt;

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });

  APResult res;
  res.category_id = *category;
  res.iou_threshold = iou_thr;

  std::unordered_map<const Annotation*, bool> taken;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const Detection& d = dets[order[pos]];
    const Annotation* best = nullptr;
    if (!d.bbox.degenerate()) {
      double best_iou = -1.0;
      auto it = gts_by_image.find(d.image_id);
      if (it != gts_by_image.end()) {
        for (const Annotation* g : it->second) {
          if (taken[g] || g->bbox.degenerate()) continue;
          const double v = iou(d.bbox, g->bbox);
          if (v >= iou_thr && v > best_iou) {
            best = g;
            best_iou = v;
          }
        }
      }
    }
    if (best) {
      taken[best] = true;
      ++tp;
    } else {
      ++fp;
    }
    // Tied scores form one operating point.
    const bool last_of_tie =
        pos + 1 == order.size() || dets[order[pos + 1]].score != d.score;
    if (last_of_tie) {
      res.points.push_back({static_cast<double>(tp) / static_cast<double>(n_gt),
                            static_cast<double>(tp) / static_cast<double>(tp + fp), d.score});
    }
  }

  // Monotone envelope from the right, then 101-point sampling.
  std::vector<double> envelope(res.points.size());
  double running = 0.0;
  for (std::size_t i = res.points.size(); i-- > 0;) {
    running = std::max(running, res.points[i].precision);
    envelope[i] = running;
  }
  double sum = 0.0;
  std::size_t j = 0;
  for (int s = 0; s < kRecallSamples; ++s) {
    const double r = s / 100.0;
    while (j < res.points.size() && res.points[j].recall < r) ++j;
    if (j == res.points.size()) break;
    sum += envelope[j];
  }
  res.ap = sum / kRecallSamples;
  return res;
}

double mean_ap(const std::vector<APResult>& aps) {
  if (aps.empty()) throw UndefinedMetricError("mAP undefined: no class has ground truth");
  double sum = 0.0;
  for (const auto& a : aps) sum += a.ap;
  return sum / static_cast<double>(aps.size());
}

MapSuite map_suite(const std::vector<Detection>& dets, const std::vector<Annotation>& gts) {
  std::map<std::int64_t, std::pair<std::vector<Detection>, std::vector<Annotation>>> by_class;
  for (const auto& g : gts) {
    if (!g.iscrowd) by_class[g.category_id].second.push_back(g);
  }
  for (const auto& d : dets) {
    auto it = by_class.find(d.category_id);
    if (it != by_class.end()) it->second.first.push_back(d);
  }
  if (by_class.empty()) throw UndefinedMetricError("mAP undefined: no class has ground truth");

  const auto thresholds = coco_iou_thresholds();
  MapSuite suite;
  std::array<double, 10> per_threshold{};
  for (const auto& [cat, group] : by_class) {
    ClassAP cls;
    cls.category_id = cat;
    double acc = 0.0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const double ap = average_precision(group.first, group.second, thresholds[t])->ap;
      per_threshold[t] += ap;
      acc += ap;
      if (t == 0) cls.ap50 = ap;
      if (t == 5) cls.ap75 = ap;
    }
    cls.ap = acc / static_cast<double>(thresholds.size());
    suite.per_class.push_back(cls);
  }
  const auto n = static_cast<double>(by_class.size());
  suite.map50 = per_threshold[0] / n;
  suite.map75 = per_threshold[5] / n;
  double total = 0.0;
  for (double v : per_threshold) total += v / n;
  suite.map = total / static_cast<double>(thresholds.size());
  return suite;
}

MetricsReport evaluate(const Dataset& ds, const std::vector<Detection>& dets,
                       const std::vector<std::int64_t>& image_ids, const EvalOptions& opts) {
  const std::unordered_set<std::int64_t> scope(image_ids.begin(), image_ids.end());
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    if (scope.count(d.image_id)) kept.push_back(d);
  }
  std::vector<Annotation> gts;
  for (const auto& a : ds.annotations) {
    if (scope.count(a.image_id)) gts.push_back(a);
  }

  MetricsReport r;
  const MatchResult m =
      match_images(kept, ds, image_ids, opts.iou_threshold, opts.score_threshold);
  r.counts = confusion_counts(m);
  r.precision = precision(r.counts);
  r.recall = recall(r.counts);
  r.f1 = f1(r.precision, r.recall);

  const MapSuite suite = map_suite(kept, gts);
  r.map50 = suite.map50;
  r.map75 = suite.map75;
  r.map = suite.map;

  for (const auto& cls : suite.per_class) {
    ClassMetrics cm;
    cm.category_id = cls.category_id;
    if (const Category* c = ds.find_category(cls.category_id)) cm.name = c->name;
    cm.counts = confusion_counts(m, cls.category_id);
    cm.precision = precision(cm.counts);
    cm.recall = recall(cm.counts);
    cm.f1 = f1(cm.precision, cm.recall);
    cm.ap50 = cls.ap50;
    cm.ap75 = cls.ap75;
    cm.ap = cls.ap;
    r.macro_precision += cm.precision;
    r.macro_recall += cm.recall;
    r.macro_f1 += cm.f1;
    r.per_class.push_back(std::move(cm));
  }
  const auto n = static_cast<double>(r.per_class.size());
  r.macro_precision /= n;
  r.macro_recall /= n;
  r.macro_f1 /= n;
  return r;
}

MetricsReport evaluate(const Dataset& ds, const std::vector<Detection>& dets,
                       const EvalOptions& opts) {
  std::vector<std::int64_t> ids;
  ids.reserve(ds.images.size());
  for (const auto& im : ds.images) ids.push_back(im.id);
  return evaluate(ds, dets, ids, opts);
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.values = values;
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return s;
}

AggregateReport aggregate_folds(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw PreconditionError("aggregate_folds needs at least one report");
  AggregateReport a;
  a.model = reports.front().model;
  a.dataset = reports.front().dataset;
  std::vector<double> p, r, f, m50, m75, m, times;
  bool all_timed = true;
  for (const auto& rep : reports) {
    if (rep.model != a.model || rep.dataset != a.dataset) {
      throw DomainError("cannot aggregate reports of different models or datasets ('" +
                        rep.model + "'/'" + rep.dataset + "' vs '" + a.model + "'/'" +
                        a.dataset + "')");
    }
    a.folds.push_back(rep.fold);
    p.push_back(rep.precision);
    r.push_back(rep.recall);
    f.push_back(rep.f1);
    m50.push_back(rep.map50);
    m75.push_back(rep.map75);
    m.push_back(rep.map);
    a.counts += rep.counts;
    if (rep.training_time_seconds) {
      times.push_back(*rep.training_time_seconds);
    } else {
      all_timed = false;
    }
  }
  a.precision = summarize(p);
  a.recall = summarize(r);
  a.f1 = summarize(f);
  a.map50 = summarize(m50);
  a.map75 = summarize(m75);
  a.map = summarize(m);
  a.f1_of_means = f1(a.precision.mean, a.recall.mean);
  if (all_timed) a.training_time_seconds = summarize(times);
  return a;
}

std::string format_percent(double ratio) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * ratio);
  return buf;
}

std::string fold_csv_row(const MetricsReport& r) {
  std::ostringstream os;
  os << r.model << ',' << r.dataset << ',' << r.fold << ',' << format_percent(r.precision)
     << ',' << format_percent(r.recall) << ',' << format_percent(r.f1) << ','
     << format_percent(r.map50) << ',' << format_percent(r.map75) << ','
     << format_percent(r.map) << ',' << r.counts.tp << ',' << r.counts.fp << ','
     << r.counts.fn << ',';
  if (r.training_time_seconds) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *r.training_time_seconds);
    os << buf;
  }
  return os.str();
}

void to_json(json& j, const ConfusionCounts& c) {
  j = json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
}

void from_json(const json& j, ConfusionCounts& c) {
  c.tp = j.at("tp").get<std::int64_t>();
  c.fp = j.at("fp").get<std::int64_t>();
  c.fn = j.at("fn").get<std::int64_t>();
}

void to_json(json& j, const MetricsReport& r) {
  j = json{{"model", r.model},
           {"dataset", r.dataset},
           {"fold", r.fold},
           {"precision", r.precision},
           {"recall", r.recall},
           {"f1", r.f1},
           {"macro_precision", r.macro_precision},
           {"macro_recall", r.macro_recall},
           {"macro_f1", r.macro_f1},
           {"map50", r.map50},
           {"map75", r.map75},
           {"map", r.map},
           {"counts", r.counts}};
  j["training_time_s"] =
      r.training_time_seconds ? json(*r.training_time_seconds) : json(nullptr);
  j["per_class"] = json::array();
  for (const auto& c : r.per_class) {
    j["per_class"].push_back({{"category_id", c.category_id},
                              {"name", c.name},
                              {"counts", c.counts},
                              {"precision", c.precision},
                              {"recall", c.recall},
                              {"f1", c.f1},
                              {"ap50", c.ap50},
                              {"ap75", c.ap75},
                              {"ap", c.ap}});
  }
}

void from_json(const json& j, MetricsReport& r) {
  r.model = j.at("model").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.fold = j.at("fold").get<int>();
  r.precision = j.at("precision").get<double>();
  r.recall = j.at("recall").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.macro_precision = j.at("macro_precision").get<double>();
  r.macro_recall = j.at("macro_recall").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.map50 = j.at("map50").get<double>();
  r.map75 = j.at("map75").get<double>();
  r.map = j.at("map").get<double>();
  r.counts = j.at("counts").get<ConfusionCounts>();
  const json& t = j.at("training_time_s");
  r.training_time_seconds = t.is_null() ? std::nullopt : std::optional<double>(t.get<double>());
  r.per_class.clear();
  for (const auto& c : j.at("per_class")) {
    ClassMetrics cm;
    cm.category_id = c.at("category_id").get<std::int64_t>();
    cm.name = c.at("name").get<std::string>();
    cm.counts = c.at("counts").get<ConfusionCounts>();
    cm.precision = c.at("precision").get<double>();
    cm.recall = c.at("recall").get<double>();
    cm.f1 = c.at("f1").get<double>();
    cm.ap50 = c.at("ap50").get<double>();
    cm.ap75 = c.at("ap75").get<double>();
    cm.ap = c.at("ap").get<double>();
    r.per_class.push_back(std::move(cm));
  }
}

void to_json(json& j, const MetricSummary& s) {
  j = json{{"mean", s.mean}, {"std", s.std}, {"values", s.values}};
}

void from_json(const json& j, MetricSummary& s) {
  s.mean = j.at("mean").get<double>();
  s.std = j.at("std").get<double>();
  s.values = j.at("values").get<std::vector<double>>();
}

void to_json(json& j, const AggregateReport& a) {
  j = json{{"model", a.model},         {"dataset", a.dataset},   {"folds", a.folds},
           {"precision", a.precision}, {"recall", a.recall},     {"f1", a.f1},
           {"map50", a.map50},         {"map75", a.map75},       {"map", a.map},
           {"f1_of_means", a.f1_of_means}, {"counts", a.counts}};
  j["training_time_s"] =
      a.training_time_seconds ? json(*a.training_time_seconds) : json(nullptr);
}

void from_json(const json& j, AggregateReport& a) {
  a.model = j.at("model").get<std::string>();
  a.dataset = j.at("dataset").get<std::string>();
  a.folds = j.at("folds").get<std::vector<int>>();
  a.precision = j.at("precision").get<MetricSummary>();
  a.recall = j.at("recall").get<MetricSummary>();
  a.f1 = j.at("f1").get<MetricSummary>();
  a.map50 = j.at("map50").get<MetricSummary>();
  a.map75 = j.at("map75").get<MetricSummary>();
  a.map = j.at("map").get<MetricSummary>();
  a.f1_of_means = j.at("f1_of_means").get<double>();
  a.counts = j.at("counts").get<ConfusionCounts>();
  const json& t = j.at("training_time_s");
  a.training_time_seconds =
      t.is_null() ? std::nullopt : std::optional<MetricSummary>(t.get<MetricSummary>());
}

}  // namespace detbench
