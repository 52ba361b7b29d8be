#include "detbench/deformattn_io.hpp"

#include <json.hpp>

#include "detbench/annotations.hpp"

namespace detbench::deformattn {

using nlohmann::json;

namespace {

const json& member(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw SchemaError(std::string("instance: missing required field '") + key + "'", key);
  }
  return obj.at(key);
}

double number(const json& v, const char* field) {
  if (!v.is_number()) throw SchemaError(std::string("instance: ") + field + " must be numeric", field);
  return v.get<double>();
}

const json& array(const json& v, std::size_t expected, const char* field) {
  if (!v.is_array() || (expected != 0 && v.size() != expected)) {
    throw SchemaError(std::string("instance: ") + field + " has the wrong shape", field);
  }
  return v;
}

}  // namespace

std::string serialize_instance(const Instance& inst) {
  check_shapes(inst);
  const Index M = inst.num_levels(), N = inst.num_points();
  json doc;
  doc["levels"] = json::array();
  for (const auto& level : inst.levels) {
    json values = json::array();
    for (Index r = 0; r < level.values.rows(); ++r)
      for (Index c = 0; c < level.values.cols(); ++c) values.push_back(level.values(r, c));
    doc["levels"].push_back({{"height", level.height},
                             {"width", level.width},
                             {"channels", level.channels()},
                             {"values", std::move(values)}});
  }
  doc["query"] = std::vector<double>(inst.query.data(), inst.query.data() + inst.query.size());
  doc["reference_points"] = json::array();
  doc["offsets"] = json::array();
  doc["logits"] = json::array();
  doc["projections"] = json::array();
  for (Index m = 0; m < M; ++m) {
    doc["reference_points"].push_back({inst.reference_points(m, 0), inst.reference_points(m, 1)});
    json offs = json::array(), logits = json::array(), projs = json::array();
    for (Index n = 0; n < N; ++n) {
      offs.push_back({inst.offsets(inst.slot(m, n), 0), inst.offsets(inst.slot(m, n), 1)});
      logits.push_back(inst.logits(m, n));
      const auto& W = inst.projection(m, n);
      json rows = json::array();
      for (Index o = 0; o < W.rows(); ++o) {
        json row = json::array();
        for (Index c = 0; c < W.cols(); ++c) row.push_back(W(o, c));
        rows.push_back(std::move(row));
      }
      projs.push_back(std::move(rows));
    }
    doc["offsets"].push_back(std::move(offs));
    doc["logits"].push_back(std::move(logits));
    doc["projections"].push_back(std::move(projs));
  }
  return doc.dump(1) + "\n";
}

namespace {

Instance instance_from_json(const json& doc) {
  Instance inst;
  const json& levels = array(member(doc, "levels"), 0, "levels");
  const auto M = static_cast<Index>(levels.size());
  for (const auto& lv : levels) {
    const Index h = member(lv, "height").get<Index>();
    const Index w = member(lv, "width").get<Index>();
    const Index c = member(lv, "channels").get<Index>();
    if (h < 1 || w < 1 || c < 1) throw SchemaError("instance: level dims must be positive", "levels");
    const json& values = array(member(lv, "values"), static_cast<std::size_t>(h * w * c), "values");
    FeatureLevel<double> level(h, w, c);
    std::size_t k = 0;
    for (Index r = 0; r < h * w; ++r)
      for (Index ch = 0; ch < c; ++ch) level.values(r, ch) = number(values[k++], "values");
    inst.levels.push_back(std::move(level));
  }
  const json& query = array(member(doc, "query"), 0, "query");
  inst.query.resize(static_cast<Index>(query.size()));
  for (std::size_t i = 0; i < query.size(); ++i) inst.query(static_cast<Index>(i)) = number(query[i], "query");

  const json& refs = array(member(doc, "reference_points"), static_cast<std::size_t>(M), "reference_points");
  const json& offs = array(member(doc, "offsets"), static_cast<std::size_t>(M), "offsets");
  const json& logits = array(member(doc, "logits"), static_cast<std::size_t>(M), "logits");
  const json& projs = array(member(doc, "projections"), static_cast<std::size_t>(M), "projections");
  const Index N = M > 0 ? static_cast<Index>(array(logits[0], 0, "logits").size()) : 0;
  inst.reference_points.resize(M, 2);
  inst.offsets.resize(M * N, 2);
  inst.logits.resize(M, N);
  for (Index m = 0; m < M; ++m) {
    const json& ref = array(refs[m], 2, "reference_points");
    inst.reference_points(m, 0) = number(ref[0], "reference_points");
    inst.reference_points(m, 1) = number(ref[1], "reference_points");
    const json& lo = array(offs[m], static_cast<std::size_t>(N), "offsets");
    const json& lg = array(logits[m], static_cast<std::size_t>(N), "logits");
    const json& pj = array(projs[m], static_cast<std::size_t>(N), "projections");
    for (Index n = 0; n < N; ++n) {
      const json& d = array(lo[n], 2, "offsets");
      inst.offsets(m * N + n, 0) = number(d[0], "offsets");
      inst.offsets(m * N + n, 1) = number(d[1], "offsets");
      inst.logits(m, n) = number(lg[n], "logits");
      const json& rows = array(pj[n], 0, "projections");
      const auto C_out = static_cast<Index>(rows.size());
      const Index C = C_out > 0 ? static_cast<Index>(array(rows[0], 0, "projections").size()) : 0;
      Matrix<double> W(C_out, C);
      for (Index o = 0; o < C_out; ++o) {
        const json& row = array(rows[o], static_cast<std::size_t>(C), "projections");
        for (Index c = 0; c < C; ++c) W(o, c) = number(row[c], "projections");
      }
      inst.projections.push_back(std::move(W));
    }
  }
  check_shapes(inst);
  return inst;
}

}  // namespace

Instance parse_instance_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed instance: ") + e.what(), e.byte);
  }
  try {
    return instance_from_json(doc);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("instance: ") + e.what(), "<instance>");
  }
}

Instance parse_instance(const std::filesystem::path& path) {
  return parse_instance_text(read_text_file(path));
}

bool KernelCheckReport::passed() const {
  if (!(max_oracle_deviation <= kOracleTolerance)) return false;
  for (double e : max_grad_error) {
    if (!(e < kGradientTolerance)) return false;
  }
  return true;
}

KernelCheckReport kernel_check(std::uint64_t seed, int trials, double h) {
  KernelCheckReport report;
  report.trials = trials;
  for (int t = 0; t < trials; ++t) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(t);
    const Instance inst = random_instance<double>(s, random_shape(s));
    const double dev = (deformable_attention(inst) - naive_oracle(inst)).cwiseAbs().maxCoeff();
    report.max_oracle_deviation = std::max(report.max_oracle_deviation, dev);
  }
  const GradTarget targets[4] = {GradTarget::Logits, GradTarget::Offsets, GradTarget::Features,
                                 GradTarget::Projections};
  const int extra = trials / 5;
  for (int t = 0; t <= extra; ++t) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(t);
    const Instance inst = random_instance<double>(s, InstanceShape{});
    for (int k = 0; k < 4; ++k) {
      const double err = gradcheck(inst, targets[k], h).max_relative_error;
      report.max_grad_error[k] = std::max(report.max_grad_error[k], err);
    }
    ++report.gradient_instances;
  }
  return report;
}

}  // namespace detbench::deformattn
