#include <doctest.h>

#include <algorithm>
#include <functional>

#include "detbench/counter_rng.hpp"
#include "detbench/matcheval.hpp"

using namespace detbench;

namespace {

Detection det(BoundingBox b, double score, std::int64_t cat = 1, std::int64_t image = 1) {
  return {image, cat, b, score};
}

Annotation gt(std::int64_t id, BoundingBox b, std::int64_t cat = 1, std::int64_t image = 1) {
  return {id, image, cat, b, b.area(), false};
}

// Largest one-to-one matching with IoU >= thr, by exhaustive enumeration.
std::int64_t max_matching(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                          double thr) {
  std::vector<bool> used(gts.size(), false);
  std::function<std::int64_t(std::size_t)> go = [&](std::size_t d) -> std::int64_t {
    if (d == dets.size()) return 0;
    std::int64_t best = go(d + 1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].category_id != dets[d].category_id) continue;
      if (iou(dets[d].bbox, gts[g].bbox) < thr) continue;
      used[g] = true;
      best = std::max(best, 1 + go(d + 1));
      used[g] = false;
    }
    return best;
  };
  return go(0);
}

BoundingBox jitter(SplitMix64& rng, BoundingBox b, double amount) {
  return {b.x + rng.uniform(-amount, amount), b.y + rng.uniform(-amount, amount),
          b.w * rng.uniform(1 - amount / 10, 1 + amount / 10), b.h};
}

}  // namespace

TEST_CASE("iou") {
  CHECK(iou({3, 4, 5, 6}, {3, 4, 5, 6}) == 1.0);
  CHECK(iou({0, 0, 1, 1}, {5, 5, 1, 1}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 1, 2, 2}) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou({0, 0, 0, 0}, {0, 0, 0, 0}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {2, 0, 2, 2}) == 0.0);  // touching edges
  CHECK(iou({0, 0, 10, 10}, {0, 0, 6, 10}) == 0.6);
}

TEST_CASE("canonical matching cases") {
  SUBCASE("perfect match") {
    const auto m = match_detections({det({0, 0, 4, 4}, 0.9)}, {gt(1, {0, 0, 4, 4})}, 0.5, 0.0);
    CHECK(confusion_counts(m) == ConfusionCounts{1, 0, 0});
  }
  SUBCASE("two detections over one ground truth") {
    const BoundingBox g{0, 0, 10, 10};
    const BoundingBox d{0, 0, 10, 9};  // IoU 0.9
    const auto m = match_detections({det(d, 0.8), det(d, 0.9)}, {gt(1, g)}, 0.5, 0.0);
    CHECK(confusion_counts(m) == ConfusionCounts{1, 1, 0});
    const auto& pairs = m.images[0].categories[0].detections;
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].detection_index == 1);  // higher score first
    CHECK(pairs[0].gt_id == 1);
    CHECK_FALSE(pairs[1].gt_id.has_value());
  }
  SUBCASE("classes never cross-match") {
    const auto m =
        match_detections({det({0, 0, 4, 4}, 0.9, 1)}, {gt(1, {0, 0, 4, 4}, 2)}, 0.5, 0.0);
    CHECK(confusion_counts(m) == ConfusionCounts{0, 1, 1});
  }
}

TEST_CASE("confusion tallies") {
  CHECK(confusion_counts(MatchResult{}) == ConfusionCounts{0, 0, 0});
  std::vector<Annotation> gts;
  std::vector<Detection> dets;
  for (int i = 0; i < 5; ++i) gts.push_back(gt(i + 1, {20.0 * i, 0, 10, 10}));
  for (int i = 0; i < 3; ++i) dets.push_back(det({20.0 * i, 0, 10, 10}, 0.9));
  dets.push_back(det({500, 500, 10, 10}, 0.9));
  CHECK(confusion_counts(match_detections(dets, gts, 0.5, 0.0)) == ConfusionCounts{3, 1, 2});
}

TEST_CASE("thresholds, ties, crowd and degenerate boxes") {
  SUBCASE("IoU exactly at the threshold matches") {
    const auto m = match_detections({det({0, 0, 6, 10}, 0.9)}, {gt(1, {0, 0, 10, 10})}, 0.6, 0.0);
    CHECK(confusion_counts(m).tp == 1);
  }
  SUBCASE("score threshold discards detections entirely") {
    const auto m = match_detections({det({0, 0, 4, 4}, 0.4)}, {gt(1, {0, 0, 4, 4})}, 0.5, 0.5);
    CHECK(confusion_counts(m) == ConfusionCounts{0, 0, 1});
  }
  SUBCASE("tied scores resolve by input order") {
    const auto m = match_detections({det({0, 0, 10, 8}, 0.7), det({0, 0, 10, 10}, 0.7)},
                                    {gt(1, {0, 0, 10, 10})}, 0.5, 0.0);
    const auto& pairs = m.images[0].categories[0].detections;
    CHECK(pairs[0].detection_index == 0);
    CHECK(pairs[0].gt_id == 1);
  }
  SUBCASE("best IoU among free ground truths") {
    const auto m = match_detections({det({0, 0, 10, 10}, 0.9)},
                                    {gt(1, {1, 0, 10, 10}), gt(2, {0, 0, 10, 10})}, 0.5, 0.0);
    CHECK(m.images[0].categories[0].detections[0].gt_id == 2);
  }
  SUBCASE("crowd regions neither match nor count") {
    Annotation crowd = gt(1, {0, 0, 4, 4});
    crowd.iscrowd = true;
    const auto m = match_detections({det({0, 0, 4, 4}, 0.9)}, {crowd}, 0.5, 0.0);
    CHECK(confusion_counts(m) == ConfusionCounts{0, 1, 0});
  }
  SUBCASE("degenerate detection never matches") {
    const auto m = match_detections({det({0, 0, 0, 4}, 0.9)}, {gt(1, {0, 0, 4, 4})}, 0.0, 0.0);
    CHECK(confusion_counts(m) == ConfusionCounts{0, 1, 1});
  }
  SUBCASE("mixed images are rejected") {
    CHECK_THROWS_AS(match_detections({det({0, 0, 1, 1}, 0.9, 1, 1)},
                                     {gt(1, {0, 0, 1, 1}, 1, 2)}, 0.5, 0.0),
                    DomainError);
  }
}

TEST_CASE("per-category counts and dataset-level matching") {
  Dataset ds;
  ds.images = {{1, "a", 100, 100}, {2, "b", 100, 100}};
  ds.categories = {{1, "A"}, {2, "B"}};
  ds.annotations = {gt(1, {0, 0, 10, 10}, 1, 1), gt(2, {50, 50, 10, 10}, 2, 1),
                    gt(3, {0, 0, 10, 10}, 1, 2)};
  const std::vector<Detection> dets = {det({0, 0, 10, 10}, 0.9, 1, 1),
                                       det({0, 0, 10, 10}, 0.9, 1, 2),
                                       det({80, 80, 5, 5}, 0.9, 2, 2)};
  const auto all = match_images(dets, ds, {1, 2}, 0.5, 0.5);
  CHECK(confusion_counts(all) == ConfusionCounts{2, 1, 1});
  CHECK(confusion_counts(all, 1) == ConfusionCounts{2, 0, 0});
  CHECK(confusion_counts(all, 2) == ConfusionCounts{0, 1, 1});
  const auto only2 = match_images(dets, ds, {2}, 0.5, 0.5);
  CHECK(confusion_counts(only2) == ConfusionCounts{1, 1, 0});
}

TEST_CASE("greedy against exhaustive optimal assignment") {
  SplitMix64 rng(99);
  for (int t = 0; t < 300; ++t) {
    std::vector<Annotation> gts;
    std::vector<Detection> dets;
    const int ng = static_cast<int>(rng.range(0, 5));
    const int nd = static_cast<int>(rng.range(0, 5));
    for (int g = 0; g < ng; ++g) {
      gts.push_back(gt(g + 1, {rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(4, 12),
                               rng.uniform(4, 12)}, rng.range(1, 2)));
    }
    for (int d = 0; d < nd; ++d) {
      dets.push_back(det({rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(4, 12),
                          rng.uniform(4, 12)}, rng.uniform(), rng.range(1, 2)));
    }
    const auto c = confusion_counts(match_detections(dets, gts, 0.3, 0.0));
    CHECK(c.tp <= max_matching(dets, gts, 0.3));
    CHECK(c.tp + c.fp == nd);
    CHECK(c.tp + c.fn == ng);
  }
}

TEST_CASE("greedy equals the optimum on well-separated scenes") {
  SplitMix64 rng(7);
  for (int t = 0; t < 200; ++t) {
    std::vector<Annotation> gts;
    std::vector<Detection> dets;
    const int ng = static_cast<int>(rng.range(1, 5));
    for (int g = 0; g < ng; ++g) {
      const BoundingBox b{50.0 * g, 0, 10, 10};
      gts.push_back(gt(g + 1, b));
      const int copies = static_cast<int>(rng.range(0, 2));
      for (int k = 0; k < copies && dets.size() < 5; ++k) {
        dets.push_back(det(jitter(rng, b, 3.0), rng.uniform()));
      }
    }
    const auto c = confusion_counts(match_detections(dets, gts, 0.5, 0.0));
    CHECK(c.tp == max_matching(dets, gts, 0.5));
  }
}
