#include "detbench/annotations.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace detbench {

using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw SchemaError(where + ": missing required field '" + key + "'", key);
  }
  return *it;
}

std::int64_t require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  // Integral values written as floats (e.g. 640.0) are accepted.
  if (v.is_number_float()) {
    double d = v.get<double>();
    if (std::isfinite(d) && std::floor(d) == d) return static_cast<std::int64_t>(d);
  }
  throw SchemaError(where + ": field '" + key + "' must be an integer", key);
}

double require_number(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) {
    throw SchemaError(where + ": field '" + key + "' must be a number", key);
  }
  return v.get<double>();
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_string()) {
    throw SchemaError(where + ": field '" + key + "' must be a string", key);
  }
  return v.get<std::string>();
}

const json& require_array(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_array()) {
    throw SchemaError(where + ": field '" + key + "' must be an array", key);
  }
  return v;
}

BoundingBox read_bbox(const json& obj, const std::string& where) {
  const json& v = require(obj, "bbox", where);
  if (!v.is_array() || v.size() != 4) {
    throw SchemaError(where + ": field 'bbox' must be a 4-element array [x,y,w,h]", "bbox");
  }
  for (const auto& e : v) {
    if (!e.is_number()) {
      throw SchemaError(where + ": field 'bbox' must contain numbers", "bbox");
    }
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
}

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
  }
}

std::string location(const char* list, std::size_t index, std::int64_t id) {
  std::ostringstream os;
  os << list << '[' << index << "] (id " << id << ')';
  return os.str();
}

json bbox_json(const BoundingBox& b) { return json::array({b.x, b.y, b.w, b.h}); }

}  // namespace

const ImageRecord* Dataset::find_image(std::int64_t id) const {
  auto it = std::find_if(images.begin(), images.end(),
                         [id](const ImageRecord& im) { return im.id == id; });
  return it == images.end() ? nullptr : &*it;
}

const Category* Dataset::find_category(std::int64_t id) const {
  auto it = std::find_if(categories.begin(), categories.end(),
                         [id](const Category& c) { return c.id == id; });
  return it == categories.end() ? nullptr : &*it;
}

const Category* Dataset::find_category(std::string_view name) const {
  auto it = std::find_if(categories.begin(), categories.end(),
                         [name](const Category& c) { return c.name == name; });
  return it == categories.end() ? nullptr : &*it;
}

std::string_view to_string(FindingKind kind) {
  switch (kind) {
    case FindingKind::OutOfBounds: return "out-of-bounds";
    case FindingKind::DegenerateBox: return "degenerate-box";
    case FindingKind::NonFiniteBox: return "non-finite-box";
    case FindingKind::DanglingImage: return "dangling-image-id";
    case FindingKind::DanglingCategory: return "dangling-category-id";
    case FindingKind::DuplicateImageId: return "duplicate-image-id";
    case FindingKind::DuplicateCategoryId: return "duplicate-category-id";
    case FindingKind::DuplicateAnnotationId: return "duplicate-annotation-id";
    case FindingKind::InvalidImageSize: return "invalid-image-size";
    case FindingKind::EmptyCategoryName: return "empty-category-name";
    case FindingKind::AreaMismatch: return "area-mismatch";
  }
  return "unknown";
}

std::size_t ValidationReport::count(FindingKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      findings.begin(), findings.end(), [kind](const Finding& f) { return f.kind == kind; }));
}

Dataset parse_dataset_text(std::string_view text) {
  const json doc = parse_json(text);
  if (!doc.is_object()) {
    throw SchemaError("annotation document must be a JSON object", "<root>");
  }
  Dataset ds;

  const json& images = require_array(doc, "images", "<root>");
  ds.images.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    const json& im = images[i];
    if (!im.is_object()) throw SchemaError(where + " must be an object", "images");
    ds.images.push_back({require_int(im, "id", where), require_string(im, "file_name", where),
                         require_int(im, "width", where), require_int(im, "height", where)});
  }

  const json& cats = require_array(doc, "categories", "<root>");
  ds.categories.reserve(cats.size());
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = "categories[" + std::to_string(i) + "]";
    const json& c = cats[i];
    if (!c.is_object()) throw SchemaError(where + " must be an object", "categories");
    ds.categories.push_back({require_int(c, "id", where), require_string(c, "name", where)});
  }

  const json& anns = require_array(doc, "annotations", "<root>");
  ds.annotations.reserve(anns.size());
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    const json& a = anns[i];
    if (!a.is_object()) throw SchemaError(where + " must be an object", "annotations");
    Annotation ann;
    ann.id = require_int(a, "id", where);
    ann.image_id = require_int(a, "image_id", where);
    ann.category_id = require_int(a, "category_id", where);
    ann.bbox = read_bbox(a, where);
    ann.area = a.contains("area") ? require_number(a, "area", where) : ann.bbox.area();
    if (a.contains("iscrowd")) {
      const std::int64_t crowd = require_int(a, "iscrowd", where);
      if (crowd != 0 && crowd != 1) {
        throw SchemaError(where + ": field 'iscrowd' must be 0 or 1", "iscrowd");
      }
      ann.iscrowd = crowd == 1;
    }
    ds.annotations.push_back(ann);
  }

  std::unordered_set<std::int64_t> image_ids, category_ids;
  for (const auto& im : ds.images) image_ids.insert(im.id);
  for (const auto& c : ds.categories) category_ids.insert(c.id);
  std::vector<std::int64_t> dangling;
  for (const auto& a : ds.annotations) {
    if (!image_ids.count(a.image_id) || !category_ids.count(a.category_id)) {
      dangling.push_back(a.id);
    }
  }
  if (!dangling.empty()) {
    std::ostringstream os;
    os << "annotations reference missing images or categories; annotation ids:";
    for (auto id : dangling) os << ' ' << id;
    throw IntegrityError(os.str(), std::move(dangling));
  }
  return ds;
}

Dataset parse_dataset(const std::filesystem::path& path) {
  return parse_dataset_text(read_text_file(path));
}

std::string serialize_dataset(const Dataset& ds) {
  json doc;
  doc["images"] = json::array();
  for (const auto& im : ds.images) {
    doc["images"].push_back(
        {{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
  }
  doc["categories"] = json::array();
  for (const auto& c : ds.categories) {
    doc["categories"].push_back({{"id", c.id}, {"name", c.name}});
  }
  doc["annotations"] = json::array();
  for (const auto& a : ds.annotations) {
    doc["annotations"].push_back({{"id", a.id},
                                  {"image_id", a.image_id},
                                  {"category_id", a.category_id},
                                  {"bbox", bbox_json(a.bbox)},
                                  {"area", a.area},
                                  {"iscrowd", a.iscrowd ? 1 : 0}});
  }
  return doc.dump(1) + "\n";
}

std::vector<Detection> parse_detections_text(std::string_view text) {
  const json doc = parse_json(text);
  if (!doc.is_array()) {
    throw SchemaError("detections document must be a JSON array", "<root>");
  }
  std::vector<Detection> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string where = "detections[" + std::to_string(i) + "]";
    const json& d = doc[i];
    if (!d.is_object()) throw SchemaError(where + " must be an object", "<root>");
    out.push_back({require_int(d, "image_id", where), require_int(d, "category_id", where),
                   read_bbox(d, where), require_number(d, "score", where)});
  }
  return out;
}

std::vector<Detection> parse_detections(const std::filesystem::path& path) {
  return parse_detections_text(read_text_file(path));
}

std::string serialize_detections(const std::vector<Detection>& dets) {
  json doc = json::array();
  for (const auto& d : dets) {
    doc.push_back({{"image_id", d.image_id},
                   {"category_id", d.category_id},
                   {"bbox", bbox_json(d.bbox)},
                   {"score", d.score}});
  }
  return doc.dump(1) + "\n";
}

void check_detections(const std::vector<Detection>& dets, const Dataset& ds) {
  std::unordered_set<std::int64_t> image_ids, category_ids;
  for (const auto& im : ds.images) image_ids.insert(im.id);
  for (const auto& c : ds.categories) category_ids.insert(c.id);
  std::vector<std::int64_t> bad;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& d = dets[i];
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw DomainError("detection " + std::to_string(i) + " has score outside [0,1]");
    }
    if (!image_ids.count(d.image_id) || !category_ids.count(d.category_id)) {
      bad.push_back(static_cast<std::int64_t>(i));
    }
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "detections reference missing images or categories; detection indices:";
    for (auto i : bad) os << ' ' << i;
    throw IntegrityError(os.str(), std::move(bad));
  }
}

ValidationReport validate(const Dataset& ds) {
  ValidationReport report;
  auto add = [&](FindingKind kind, std::string loc, std::string msg) {
    report.findings.push_back({kind, std::move(loc), std::move(msg)});
  };

  std::unordered_map<std::int64_t, const ImageRecord*> images;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& im = ds.images[i];
    if (!images.emplace(im.id, &im).second) {
      add(FindingKind::DuplicateImageId, location("images", i, im.id), "image id repeated");
    }
    if (im.width <= 0 || im.height <= 0) {
      add(FindingKind::InvalidImageSize, location("images", i, im.id),
          "width and height must be positive");
    }
  }

  std::unordered_set<std::int64_t> categories;
  for (std::size_t i = 0; i < ds.categories.size(); ++i) {
    const auto& c = ds.categories[i];
    if (!categories.insert(c.id).second) {
      add(FindingKind::DuplicateCategoryId, location("categories", i, c.id),
          "category id repeated");
    }
    if (c.name.empty()) {
      add(FindingKind::EmptyCategoryName, location("categories", i, c.id), "empty name");
    }
  }

  std::unordered_set<std::int64_t> annotation_ids;
  for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
    const auto& a = ds.annotations[i];
    const std::string loc = location("annotations", i, a.id);
    if (!annotation_ids.insert(a.id).second) {
      add(FindingKind::DuplicateAnnotationId, loc, "annotation id repeated");
    }
    if (!categories.count(a.category_id)) {
      add(FindingKind::DanglingCategory, loc,
          "category_id " + std::to_string(a.category_id) + " not found");
    }
    const auto& b = a.bbox;
    if (!(std::isfinite(b.x) && std::isfinite(b.y) && std::isfinite(b.w) &&
          std::isfinite(b.h)) ||
        b.w < 0.0 || b.h < 0.0) {
      add(FindingKind::NonFiniteBox, loc, "bbox must be finite with non-negative extent");
      continue;
    }
    if (b.area() == 0.0) {
      add(FindingKind::DegenerateBox, loc, "bbox has zero area");
    } else if (std::abs(a.area - b.area()) > kAreaRelativeTolerance * b.area()) {
      add(FindingKind::AreaMismatch, loc,
          "area " + std::to_string(a.area) + " differs from w*h " + std::to_string(b.area()));
    }
    auto it = images.find(a.image_id);
    if (it == images.end()) {
      add(FindingKind::DanglingImage, loc,
          "image_id " + std::to_string(a.image_id) + " not found");
      continue;
    }
    const ImageRecord& im = *it->second;
    if (b.x < 0.0 || b.y < 0.0 || b.right() > static_cast<double>(im.width) ||
        b.bottom() > static_cast<double>(im.height)) {
      add(FindingKind::OutOfBounds, loc,
          "bbox exceeds image " + std::to_string(im.id) + " (" + std::to_string(im.width) +
              "x" + std::to_string(im.height) + ")");
    }
  }
  return report;
}

DatasetStats stats(const Dataset& ds) {
  DatasetStats s;
  s.image_count = ds.images.size();
  s.annotation_count = ds.annotations.size();
  for (const auto& c : ds.categories) s.per_category.emplace(c.id, 0);
  for (const auto& im : ds.images) s.per_image.emplace(im.id, 0);
  std::vector<double> sizes;
  sizes.reserve(ds.annotations.size());
  for (const auto& a : ds.annotations) {
    ++s.per_category[a.category_id];
    ++s.per_image[a.image_id];
    sizes.push_back(a.bbox.area());
  }
  for (const auto& [id, n] : s.per_image) ++s.boxes_per_image[n];
  if (!sizes.empty()) {
    std::sort(sizes.begin(), sizes.end());
    const std::size_t n = sizes.size();
    s.box_size.min = sizes.front();
    s.box_size.max = sizes.back();
    s.box_size.median = n % 2 ? sizes[n / 2] : 0.5 * (sizes[n / 2 - 1] + sizes[n / 2]);
  }
  return s;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detbench
