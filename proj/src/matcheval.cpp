#include "detbench/matcheval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_map>

namespace detbench {

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (!(uni > 0.0)) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace {

CategoryMatch match_category(std::int64_t category_id, const std::vector<Detection>& dets,
                             const std::vector<std::size_t>& det_idx,
                             const std::vector<const Annotation*>& gts, double iou_thr) {
  CategoryMatch out;
  out.category_id = category_id;
  std::vector<std::size_t> order = det_idx;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t d : order) {
    MatchPair pair{d, std::nullopt, 0.0};
    if (!dets[d].bbox.degenerate()) {
      std::size_t best = gts.size();
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (taken[g] || gts[g]->bbox.degenerate()) continue;
        const double v = iou(dets[d].bbox, gts[g]->bbox);
        if (v >= iou_thr && v > best_iou) {
          best = g;
          best_iou = v;
        }
      }
      if (best < gts.size()) {
        taken[best] = true;
        pair.gt_id = gts[best]->id;
        pair.iou = best_iou;
      }
    }
    out.detections.push_back(pair);
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!taken[g]) out.unmatched_gt_ids.push_back(gts[g]->id);
  }
  return out;
}

ImageMatch match_image(std::int64_t image_id, const std::vector<Detection>& dets,
                       const std::vector<std::size_t>& det_idx,
                       const std::vector<const Annotation*>& gts, double iou_thr,
                       double score_thr) {
  std::map<std::int64_t, std::pair<std::vector<std::size_t>, std::vector<const Annotation*>>>
      by_cat;
  for (std::size_t d : det_idx) {
    if (dets[d].score >= score_thr) by_cat[dets[d].category_id].first.push_back(d);
  }
  for (const Annotation* g : gts) {
    if (!g->iscrowd) by_cat[g->category_id].second.push_back(g);
  }
  ImageMatch out;
  out.image_id = image_id;
  for (const auto& [cat, group] : by_cat) {
    out.categories.push_back(match_category(cat, dets, group.first, group.second, iou_thr));
  }
  return out;
}

}  // namespace

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<Annotation>& gts, double iou_thr,
                             double score_thr) {
  MatchResult result;
  if (dets.empty() && gts.empty()) return result;
  const std::int64_t image_id = !dets.empty() ? dets.front().image_id : gts.front().image_id;
  for (const auto& d : dets) {
    if (d.image_id != image_id) throw DomainError("detections span more than one image");
  }
  for (const auto& g : gts) {
    if (g.image_id != image_id) throw DomainError("ground truths span more than one image");
  }
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<const Annotation*> gp;
  for (const auto& g : gts) gp.push_back(&g);
  result.images.push_back(match_image(image_id, dets, idx, gp, iou_thr, score_thr));
  return result;
}

MatchResult match_images(const std::vector<Detection>& dets, const Dataset& ds,
                         const std::vector<std::int64_t>& image_ids, double iou_thr,
                         double score_thr) {
  std::unordered_map<std::int64_t, std::size_t> slot;
  for (std::size_t i = 0; i < image_ids.size(); ++i) slot.emplace(image_ids[i], i);
  std::vector<std::vector<std::size_t>> det_idx(image_ids.size());
  std::vector<std::vector<const Annotation*>> gts(image_ids.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    auto it = slot.find(dets[d].image_id);
    if (it != slot.end()) det_idx[it->second].push_back(d);
  }
  for (const auto& a : ds.annotations) {
    auto it = slot.find(a.image_id);
    if (it != slot.end()) gts[it->second].push_back(&a);
  }
  MatchResult result;
  result.images.reserve(image_ids.size());
  for (std::size_t i = 0; i < image_ids.size(); ++i) {
    result.images.push_back(
        match_image(image_ids[i], dets, det_idx[i], gts[i], iou_thr, score_thr));
  }
  return result;
}

namespace {

ConfusionCounts tally(const CategoryMatch& cat) {
  ConfusionCounts c;
  for (const auto& p : cat.detections) {
    if (p.gt_id) {
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = static_cast<std::int64_t>(cat.unmatched_gt_ids.size());
  return c;
}

}  // namespace

ConfusionCounts confusion_counts(const MatchResult& m) {
  ConfusionCounts c;
  for (const auto& im : m.images) {
    for (const auto& cat : im.categories) c += tally(cat);
  }
  return c;
}

ConfusionCounts confusion_counts(const MatchResult& m, std::int64_t category_id) {
  ConfusionCounts c;
  for (const auto& im : m.images) {
    for (const auto& cat : im.categories) {
      if (cat.category_id == category_id) c += tally(cat);
    }
  }
  return c;
}

}  // namespace detbench
