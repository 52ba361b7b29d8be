#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "detbench/annotations.hpp"
#include "detbench/counter_rng.hpp"

namespace oracle {

using detbench::Annotation;
using detbench::BoundingBox;
using detbench::Detection;

inline double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// True positives among detections scoring >= cutoff, matched greedily in
// descending score order within each image.
inline long true_positives(const std::vector<Detection>& dets, const std::vector<Annotation>& gts,
                           double cutoff, double thr) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets[i].score >= cutoff) kept.push_back(i);
  std::stable_sort(kept.begin(), kept.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> used(gts.size(), false);
  long tp = 0;
  for (std::size_t d : kept) {
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].image_id != dets[d].image_id) continue;
      const double v = box_iou(dets[d].bbox, gts[g].bbox);
      if (v >= thr && v > best_iou) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      ++tp;
    }
  }
  return tp;
}

// Every distinct score is tried as a cutoff; the envelope at recall r is the
// best precision over cutoffs reaching recall >= r, averaged over 101 samples.
inline double average_precision(const std::vector<Detection>& dets,
                                const std::vector<Annotation>& gts, double thr) {
  std::set<double> cutoffs;
  for (const auto& d : dets) cutoffs.insert(d.score);
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  for (double s : cutoffs) {
    long n = 0;
    for (const auto& d : dets) n += d.score >= s;
    const long tp = true_positives(dets, gts, s, thr);
    pr.emplace_back(static_cast<double>(tp) / static_cast<double>(gts.size()),
                    static_cast<double>(tp) / static_cast<double>(n));
  }
  double sum = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double r = i / 100.0;
    double best = 0.0;
    for (const auto& [rc, pc] : pr)
      if (rc >= r) best = std::max(best, pc);
    sum += best;
  }
  return sum / 101.0;
}

// Random single-class scene over two images. Scores are drawn from a small
// grid when `allow_ties` is set.
inline void random_scene(detbench::SplitMix64& rng, std::vector<Detection>& dets,
                         std::vector<Annotation>& gts, bool allow_ties) {
  dets.clear();
  gts.clear();
  const auto ng = rng.range(1, 4), nd = rng.range(0, 6);
  for (std::int64_t g = 0; g < ng; ++g) {
    gts.push_back({g + 1, rng.range(1, 2), 1,
                   {rng.uniform(0, 12), rng.uniform(0, 12), rng.uniform(3, 9), rng.uniform(3, 9)},
                   0.0, false});
  }
  for (std::int64_t d = 0; d < nd; ++d) {
    const double score = allow_ties ? static_cast<double>(rng.range(1, 4)) / 4.0 : rng.uniform();
    if (rng.uniform() < 0.6 && !gts.empty()) {
      const auto& g = gts[static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(gts.size()) - 1))];
      dets.push_back({g.image_id, 1,
                      {g.bbox.x + rng.uniform(-2, 2), g.bbox.y + rng.uniform(-2, 2),
                       g.bbox.w * rng.uniform(0.7, 1.3), g.bbox.h * rng.uniform(0.7, 1.3)},
                      score});
    } else {
      dets.push_back({rng.range(1, 2), 1,
                      {rng.uniform(0, 12), rng.uniform(0, 12), rng.uniform(3, 9), rng.uniform(3, 9)},
                      score});
    }
  }
}

}  // namespace oracle
