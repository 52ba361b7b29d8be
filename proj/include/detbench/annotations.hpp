#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "detbench/errors.hpp"

namespace detbench {

// Axis-aligned box in COCO convention: top-left corner plus extent, continuous
// pixel coordinates.
struct BoundingBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const noexcept { return w * h; }
  double right() const noexcept { return x + w; }
  double bottom() const noexcept { return y + h; }
  bool degenerate() const noexcept { return !(w > 0.0 && h > 0.0); }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  std::int64_t width = 0;
  std::int64_t height = 0;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Category {
  std::int64_t id = 0;
  std::string name;

  friend bool operator==(const Category&, const Category&) = default;
};

struct Annotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BoundingBox bbox;
  double area = 0.0;
  bool iscrowd = false;

  friend bool operator==(const Annotation&, const Annotation&) = default;
};

// A scored, class-labelled model output bound to one image.
struct Detection {
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BoundingBox bbox;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<Category> categories;
  std::vector<Annotation> annotations;

  const ImageRecord* find_image(std::int64_t id) const;
  const Category* find_category(std::int64_t id) const;
  const Category* find_category(std::string_view name) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class FindingKind {
  OutOfBounds,
  DegenerateBox,
  NonFiniteBox,
  DanglingImage,
  DanglingCategory,
  DuplicateImageId,
  DuplicateCategoryId,
  DuplicateAnnotationId,
  InvalidImageSize,
  EmptyCategoryName,
  AreaMismatch,
};

std::string_view to_string(FindingKind kind);

struct Finding {
  FindingKind kind;
  std::string location;  // e.g. "annotations[3] (id 17)"
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;

  bool ok() const noexcept { return findings.empty(); }
  std::size_t count(FindingKind kind) const;
};

struct BoxSizeSummary {
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
};

struct DatasetStats {
  std::size_t image_count = 0;
  std::size_t annotation_count = 0;
  std::map<std::int64_t, std::size_t> per_category;      // category id -> count
  std::map<std::size_t, std::size_t> boxes_per_image;    // boxes -> image count
  std::map<std::int64_t, std::size_t> per_image;         // image id -> box count
  BoxSizeSummary box_size;                               // over w*h
};

// Relative tolerance between an annotation's stored area and w*h.
inline constexpr double kAreaRelativeTolerance = 0.005;

Dataset parse_dataset(const std::filesystem::path& path);
Dataset parse_dataset_text(std::string_view text);
std::string serialize_dataset(const Dataset& ds);

std::vector<Detection> parse_detections(const std::filesystem::path& path);
std::vector<Detection> parse_detections_text(std::string_view text);
std::string serialize_detections(const std::vector<Detection>& dets);

// Throws IntegrityError when a detection names an image or category absent
// from `ds`, or DomainError for a score outside [0, 1].
void check_detections(const std::vector<Detection>& dets, const Dataset& ds);

ValidationReport validate(const Dataset& ds);
DatasetStats stats(const Dataset& ds);

// Reads a whole file; throws IoError when it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace detbench
