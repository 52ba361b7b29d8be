#include <doctest.h>

#include <cmath>

#include "ap_oracle.hpp"
#include "detbench/metrics.hpp"

using namespace detbench;

namespace {

Detection det(BoundingBox b, double score, std::int64_t cat = 1, std::int64_t image = 1) {
  return {image, cat, b, score};
}

Annotation gt(std::int64_t id, BoundingBox b, std::int64_t cat = 1, std::int64_t image = 1) {
  return {id, image, cat, b, b.area(), false};
}

}  // namespace

TEST_CASE("precision and recall conventions") {
  CHECK(precision({8, 2, 99}) == 0.8);
  CHECK(precision({0, 0, 5}) == 0.0);
  CHECK(precision({3, 0, 0}) == 1.0);
  CHECK(recall({8, 99, 2}) == 0.8);
  CHECK(recall({0, 4, 0}) == 0.0);
  CHECK(recall({5, 0, 5}) == 0.5);
}

TEST_CASE("f1 against published operating points") {
  CHECK(std::abs(f1(0.9776, 0.9262) - 0.9512) <= 0.0003);
  CHECK(std::abs(f1(0.9626, 0.9288) - 0.9454) <= 0.0003);
  CHECK(std::abs(f1(0.8080, 0.7330) - 0.7687) <= 0.0003);
  CHECK(f1(0.9333, 0.9333) == 0.9333);
  for (double p : {0.0, 0.1, 0.37, 1.0}) CHECK(f1(p, p) == doctest::Approx(p).epsilon(1e-15));
  CHECK(f1(0.0, 0.0) == 0.0);
}

TEST_CASE("average precision examples") {
  SUBCASE("perfect detector") {
    const auto ap = average_precision({det({0, 0, 4, 4}, 0.9), det({10, 0, 4, 4}, 0.8)},
                                      {gt(1, {0, 0, 4, 4}), gt(2, {10, 0, 4, 4})}, 0.5);
    REQUIRE(ap);
    CHECK(ap->ap == 1.0);
  }
  SUBCASE("false positive ranked first") {
    const auto ap = average_precision({det({50, 50, 4, 4}, 0.9), det({0, 0, 10, 9}, 0.8)},
                                      {gt(1, {0, 0, 10, 10})}, 0.5);
    REQUIRE(ap);
    REQUIRE(ap->points.size() == 2);
    CHECK(ap->points[0].recall == 0.0);
    CHECK(ap->points[0].precision == 0.0);
    CHECK(ap->points[1].recall == 1.0);
    CHECK(ap->points[1].precision == 0.5);
    CHECK(ap->ap == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("no detections") {
    const auto ap = average_precision({}, {gt(1, {0, 0, 4, 4})}, 0.5);
    REQUIRE(ap);
    CHECK(ap->ap == 0.0);
  }
  SUBCASE("no ground truth is skipped") {
    CHECK_FALSE(average_precision({det({0, 0, 4, 4}, 0.9)}, {}, 0.5).has_value());
  }
  SUBCASE("crowd-only ground truth is skipped") {
    Annotation crowd = gt(1, {0, 0, 4, 4});
    crowd.iscrowd = true;
    CHECK_FALSE(average_precision({det({0, 0, 4, 4}, 0.9)}, {crowd}, 0.5).has_value());
  }
  SUBCASE("mixed categories") {
    CHECK_THROWS_AS(average_precision({det({0, 0, 4, 4}, 0.9, 2)}, {gt(1, {0, 0, 4, 4}, 1)}, 0.5),
                    DomainError);
  }
}

TEST_CASE("average precision equals the score-cutoff oracle") {
  SplitMix64 rng(2024);
  std::vector<Detection> dets;
  std::vector<Annotation> gts;
  for (int t = 0; t < 300; ++t) {
    oracle::random_scene(rng, dets, gts, t % 3 == 0);
    for (double thr : {0.3, 0.5, 0.75}) {
      const auto ap = average_precision(dets, gts, thr);
      REQUIRE(ap);
      CHECK(std::abs(ap->ap - oracle::average_precision(dets, gts, thr)) <= 1e-9);
    }
  }
}

TEST_CASE("AP is invariant to input order for distinct scores") {
  SplitMix64 rng(77);
  std::vector<Detection> dets;
  std::vector<Annotation> gts;
  for (int t = 0; t < 100; ++t) {
    oracle::random_scene(rng, dets, gts, false);
    const double base = average_precision(dets, gts, 0.5)->ap;
    std::reverse(dets.begin(), dets.end());
    std::reverse(gts.begin(), gts.end());
    CHECK(average_precision(dets, gts, 0.5)->ap == base);
  }
}

TEST_CASE("mean AP") {
  APResult a, b;
  a.ap = 1.0;
  b.ap = 0.5;
  CHECK(mean_ap({a, b}) == 0.75);
  CHECK(mean_ap({b}) == 0.5);
  CHECK_THROWS_AS(mean_ap({}), UndefinedMetricError);
}

TEST_CASE("mAP threshold structure") {
  const auto t = coco_iou_thresholds();
  CHECK(t[0] == 0.5);
  CHECK(t[2] == 0.6);
  CHECK(t[5] == 0.75);
  CHECK(t[9] == 0.95);

  SUBCASE("perfect") {
    const MapSuite s = map_suite({det({0, 0, 4, 4}, 0.9)}, {gt(1, {0, 0, 4, 4})});
    CHECK(s.map50 == 1.0);
    CHECK(s.map75 == 1.0);
    CHECK(s.map == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("every match at IoU 0.6") {
    std::vector<Detection> dets;
    std::vector<Annotation> gts;
    for (int c = 1; c <= 2; ++c) {
      for (int i = 0; i < 3; ++i) {
        gts.push_back(gt(10 * c + i, {30.0 * i, 0, 10, 10}, c));
        dets.push_back(det({30.0 * i, 0, 6, 10}, 0.9 - 0.1 * i, c));
      }
    }
    const MapSuite s = map_suite(dets, gts);
    CHECK(s.map50 == 1.0);
    CHECK(s.map75 == 0.0);
    CHECK(std::abs(s.map - 0.3) <= 1e-9);
  }
  SUBCASE("empty detections") {
    const MapSuite s = map_suite({}, {gt(1, {0, 0, 4, 4})});
    CHECK(s.map50 == 0.0);
    CHECK(s.map == 0.0);
  }
  SUBCASE("classes without ground truth do not dilute the mean") {
    const MapSuite s = map_suite({det({0, 0, 4, 4}, 0.9), det({9, 9, 2, 2}, 0.9, 7)},
                                 {gt(1, {0, 0, 4, 4})});
    CHECK(s.per_class.size() == 1);
    CHECK(s.map50 == 1.0);
  }
  SUBCASE("no ground truth at all") {
    CHECK_THROWS_AS(map_suite({det({0, 0, 4, 4}, 0.9)}, {}), UndefinedMetricError);
  }
}

TEST_CASE("evaluate reports micro and macro operating points") {
  Dataset ds;
  ds.images = {{1, "a", 100, 100}};
  ds.categories = {{1, "A"}, {2, "B"}};
  ds.annotations = {gt(1, {0, 0, 10, 10}, 1), gt(2, {20, 0, 10, 10}, 1), gt(3, {40, 0, 10, 10}, 1),
                    gt(4, {60, 0, 10, 10}, 2)};
  const std::vector<Detection> dets = {det({0, 0, 10, 10}, 0.9, 1), det({20, 0, 10, 10}, 0.9, 1),
                                       det({40, 0, 10, 10}, 0.9, 1), det({80, 80, 5, 5}, 0.9, 2),
                                       det({60, 0, 10, 10}, 0.3, 2)};
  const MetricsReport r = evaluate(ds, dets, EvalOptions{0.5, 0.5});
  CHECK(r.counts == ConfusionCounts{3, 1, 1});
  CHECK(r.precision == 0.75);
  CHECK(r.recall == 0.75);
  CHECK(r.macro_precision == 0.5);  // (1 + 0) / 2
  CHECK(r.macro_recall == 0.5);
  REQUIRE(r.per_class.size() == 2);
  CHECK(r.per_class[1].name == "B");
  // The low-scoring detection still counts towards AP.
  CHECK(r.per_class[1].ap50 == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("fold aggregation") {
  auto report = [](double p, double r, double f) {
    MetricsReport m;
    m.model = "m";
    m.dataset = "d";
    m.precision = p;
    m.recall = r;
    m.f1 = f;
    return m;
  };
  SUBCASE("identical folds") {
    std::vector<MetricsReport> folds(10, report(0.8, 0.7, 0.75));
    for (int i = 0; i < 10; ++i) folds[i].fold = i;
    const AggregateReport a = aggregate_folds(folds);
    CHECK(a.precision.mean == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(a.precision.std == doctest::Approx(0.0));
    CHECK(a.folds.size() == 10);
  }
  SUBCASE("two-point standard deviation") {
    const AggregateReport a = aggregate_folds({report(1, 1, 0.9), report(1, 1, 1.0)});
    CHECK(a.f1.mean == doctest::Approx(0.95).epsilon(1e-15));
    // sqrt(((0.05)^2 + (0.05)^2) / 1) = 0.070710678...
    CHECK(a.f1.std == doctest::Approx(0.0707106781).epsilon(1e-9));
  }
  SUBCASE("mean of F1 differs from F1 of means") {
    const AggregateReport a =
        aggregate_folds({report(1.0, 0.5, f1(1.0, 0.5)), report(0.5, 1.0, f1(0.5, 1.0))});
    CHECK(a.f1.mean == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(a.f1_of_means == doctest::Approx(0.75).epsilon(1e-15));
  }
  SUBCASE("single fold has zero spread") {
    CHECK(aggregate_folds({report(0.4, 0.4, 0.4)}).f1.std == 0.0);
  }
  SUBCASE("labels must agree") {
    MetricsReport other = report(1, 1, 1);
    other.model = "n";
    CHECK_THROWS_AS(aggregate_folds({report(1, 1, 1), other}), DomainError);
    CHECK_THROWS_AS(aggregate_folds({}), PreconditionError);
  }
}

TEST_CASE("formatting and serialization") {
  CHECK(format_percent(0.95124) == "95.12");
  CHECK(format_percent(1.0) == "100.00");
  MetricsReport r;
  r.model = "m";
  r.dataset = "d";
  r.fold = 2;
  r.precision = 0.5;
  r.counts = {1, 1, 0};
  r.per_class.push_back({1, "A", {1, 1, 0}, 0.5, 1.0, 2.0 / 3.0, 1.0, 1.0, 1.0});
  CHECK(fold_csv_row(r) == "m,d,2,50.00,0.00,0.00,0.00,0.00,0.00,1,1,0,");
  nlohmann::json j = r;
  const MetricsReport back = j.get<MetricsReport>();
  CHECK(back.per_class.size() == 1);
  CHECK(back.counts == r.counts);
  CHECK(nlohmann::json(back).dump() == j.dump());
}
