#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "detbench/annotations.hpp"

namespace detbench {

// Intersection over union; 0 when the union is empty.
double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

struct MatchPair {
  std::size_t detection_index = 0;         // index into the caller's detection list
  std::optional<std::int64_t> gt_id;       // nullopt: false positive
  double iou = 0.0;                        // IoU with the matched ground truth

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

struct CategoryMatch {
  std::int64_t category_id = 0;
  std::vector<MatchPair> detections;       // kept detections in processing order
  std::vector<std::int64_t> unmatched_gt_ids;

  friend bool operator==(const CategoryMatch&, const CategoryMatch&) = default;
};

struct ImageMatch {
  std::int64_t image_id = 0;
  std::vector<CategoryMatch> categories;   // ascending category id

  friend bool operator==(const ImageMatch&, const ImageMatch&) = default;
};

struct MatchResult {
  std::vector<ImageMatch> images;

  friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Greedy one-to-one matching for a single image. Detections scoring below
// `score_thr` are discarded; the rest are visited by descending score (ties by
// ascending index) and each takes the unmatched same-category ground truth of
// highest IoU >= `iou_thr`. Crowd and zero-area ground truths never match.
// Throws DomainError when the inputs span more than one image.
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<Annotation>& gts, double iou_thr,
                             double score_thr);

// Per-image matching over the given images of a dataset. Detections outside
// `image_ids` are ignored; the result lists images in `image_ids` order.
MatchResult match_images(const std::vector<Detection>& dets, const Dataset& ds,
                         const std::vector<std::int64_t>& image_ids, double iou_thr,
                         double score_thr);

ConfusionCounts confusion_counts(const MatchResult& m);
ConfusionCounts confusion_counts(const MatchResult& m, std::int64_t category_id);

}  // namespace detbench
