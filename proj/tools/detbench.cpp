// detbench: command-line front end for the detection benchmarking toolkit.
//
// Exit status: 0 success, 1 tolerance or integrity failure, 2 configuration
// or usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "detbench/annotations.hpp"
#include "detbench/augment.hpp"
#include "detbench/deformattn_io.hpp"
#include "detbench/harness.hpp"
#include "detbench/matcheval.hpp"
#include "detbench/metrics.hpp"
#include "detbench/splitcore.hpp"

namespace fs = std::filesystem;
using namespace detbench;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

int cmd_validate(const std::string& ann) {
  const Dataset ds = parse_dataset(ann);
  const ValidationReport report = validate(ds);
  for (const auto& f : report.findings) {
    std::cout << to_string(f.kind) << '\t' << f.location << '\t' << f.message << '\n';
  }
  std::cout << report.findings.size() << " finding(s)\n";
  return report.ok() ? kExitOk : kExitFailure;
}

int cmd_stats(const std::string& ann, bool per_image) {
  const Dataset ds = parse_dataset(ann);
  const DatasetStats s = stats(ds);
  std::cout << "images\t" << s.image_count << '\n';
  std::cout << "annotations\t" << s.annotation_count << '\n';
  for (const auto& [id, n] : s.per_category) {
    const Category* c = ds.find_category(id);
    std::cout << "category\t" << id << '\t' << (c ? c->name : "?") << '\t' << n << '\n';
  }
  for (const auto& [boxes, images] : s.boxes_per_image) {
    std::cout << "boxes_per_image\t" << boxes << '\t' << images << '\n';
  }
  std::cout << "box_area_min\t" << s.box_size.min << '\n';
  std::cout << "box_area_median\t" << s.box_size.median << '\n';
  std::cout << "box_area_max\t" << s.box_size.max << '\n';
  if (per_image) {
    for (const auto& im : ds.images) {
      std::cout << "image\t" << im.id << '\t' << im.file_name << '\t' << s.per_image.at(im.id)
                << '\n';
    }
  }
  return kExitOk;
}

int cmd_split(const std::string& ann, int k, std::uint64_t seed, const std::string& out,
              const std::string& materialize, std::optional<int> fold) {
  if (!materialize.empty()) {
    if (!fold) throw ConfigError("--materialize needs --fold");
    const FoldPlan plan = parse_plan(materialize);
    if (!ann.empty() && dataset_checksum(parse_dataset(ann)) != plan.dataset_checksum) {
      throw IntegrityError("plan checksum does not match " + ann);
    }
    std::cout << serialize_split(materialize_fold(plan, *fold));
    return kExitOk;
  }
  if (ann.empty()) throw ConfigError("split needs an annotation file or --materialize");
  const Dataset ds = parse_dataset(ann);
  const FoldPlan plan = stratified_kfold(ds, k, seed);
  const BalanceAudit audit = audit_balance(ds, plan);
  if (out.empty()) {
    std::cout << serialize_plan(plan);
  } else {
    write_text_file(out, serialize_plan(plan));
  }
  if (!audit.ok) {
    std::cerr << "warning: class " << audit.worst_category << " in fold " << audit.worst_fold
              << " exceeds the balance bound by " << audit.worst_excess << '\n';
  }
  return kExitOk;
}

int cmd_augment(const std::string& ann, const std::string& images, const std::string& spec_path,
                const std::string& out) {
  const Dataset ds = parse_dataset(ann);
  const AugmentSpec spec = parse_augment_spec(spec_path);
  for (const auto& w : check_spec(spec)) std::cerr << "warning: " << w << '\n';
  fs::create_directories(out);

  Dataset remapped = ds;
  nlohmann::json applied = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const ImageRecord& rec = ds.images[i];
    const ImageBuffer img = read_image(fs::path(images) / rec.file_name);
    if (img.width != rec.width || img.height != rec.height) {
      throw IntegrityError(rec.file_name + ": raster size differs from the annotation record",
                           {rec.id});
    }
    std::vector<std::size_t> idx;
    std::vector<BoundingBox> boxes;
    for (std::size_t a = 0; a < ds.annotations.size(); ++a) {
      if (ds.annotations[a].image_id == rec.id) {
        idx.push_back(a);
        boxes.push_back(ds.annotations[a].bbox);
      }
    }
    const Augmented res = apply(spec, img, boxes, i);
    for (std::size_t b = 0; b < idx.size(); ++b) remapped.annotations[idx[b]].bbox = res.boxes[b];
    const fs::path dst = fs::path(out) / rec.file_name;
    fs::create_directories(dst.parent_path());
    write_image(dst, res.image);
    applied.push_back({{"image_id", rec.id},
                       {"draw_index", i},
                       {"flip", res.ops.flipped},
                       {"grayscale", res.ops.grayscaled},
                       {"blur", res.ops.blurred}});
  }
  write_text_file(fs::path(out) / "annotations.json", serialize_dataset(remapped));
  write_text_file(fs::path(out) / "applied.json", applied.dump(1) + "\n");
  std::cout << ds.images.size() << " image(s) written to " << out << '\n';
  return kExitOk;
}

int cmd_evaluate(const std::string& ann, const std::string& dets_path, double iou_thr,
                 double score_thr, bool per_class) {
  const Dataset ds = parse_dataset(ann);
  const std::vector<Detection> dets = parse_detections(dets_path);
  check_detections(dets, ds);
  const MetricsReport r = evaluate(ds, dets, EvalOptions{iou_thr, score_thr});
  std::cout << "precision\t" << format_percent(r.precision) << '\n'
            << "recall\t" << format_percent(r.recall) << '\n'
            << "f1\t" << format_percent(r.f1) << '\n'
            << "macro_precision\t" << format_percent(r.macro_precision) << '\n'
            << "macro_recall\t" << format_percent(r.macro_recall) << '\n'
            << "macro_f1\t" << format_percent(r.macro_f1) << '\n'
            << "map50\t" << format_percent(r.map50) << '\n'
            << "map75\t" << format_percent(r.map75) << '\n'
            << "map\t" << format_percent(r.map) << '\n'
            << "tp\t" << r.counts.tp << "\nfp\t" << r.counts.fp << "\nfn\t" << r.counts.fn
            << '\n';
  if (per_class) {
    std::cout << "category_id,name,precision,recall,f1,ap50,ap75,ap,tp,fp,fn\n";
    for (const auto& c : r.per_class) {
      std::cout << c.category_id << ',' << c.name << ',' << format_percent(c.precision) << ','
                << format_percent(c.recall) << ',' << format_percent(c.f1) << ','
                << format_percent(c.ap50) << ',' << format_percent(c.ap75) << ','
                << format_percent(c.ap) << ',' << c.counts.tp << ',' << c.counts.fp << ','
                << c.counts.fn << '\n';
    }
  }
  return kExitOk;
}

int cmd_kernel_check(std::uint64_t seed, int trials, double h) {
  using namespace detbench::deformattn;
  const KernelCheckReport r = kernel_check(seed, trials, h);
  std::printf("oracle trials          %d\n", r.trials);
  std::printf("max |fused - naive|    %.3e  (tolerance %.0e)\n", r.max_oracle_deviation,
              kOracleTolerance);
  const GradTarget targets[4] = {GradTarget::Logits, GradTarget::Offsets, GradTarget::Features,
                                 GradTarget::Projections};
  std::printf("gradient instances     %d  (h = %.1e)\n", r.gradient_instances, h);
  for (int k = 0; k < 4; ++k) {
    std::printf("max rel error %-10s %.3e  (tolerance %.0e)\n", to_string(targets[k]),
                r.max_grad_error[k], kGradientTolerance);
  }
  std::printf("%s\n", r.passed() ? "PASS" : "FAIL");
  return r.passed() ? kExitOk : kExitFailure;
}

int cmd_run(const std::string& config) {
  const RunConfig cfg = parse_run_config(config);
  const BenchmarkReport report = run_evaluation(cfg);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& g : report.gaps) {
    std::cerr << "gap: " << g.dataset << '/' << g.model << " fold " << g.fold << ": " << g.reason
              << '\n';
  }
  bool sound = true;
  for (const auto& a : report.audits) sound = sound && a.sound;
  std::cout << report.folds.size() << " fold evaluation(s), " << report.gaps.size()
            << " gap(s); report in " << cfg.output_dir.string() << '\n';
  return sound ? kExitOk : kExitFailure;
}

int cmd_losses(const std::string& in, const std::string& out, const std::string& split) {
  std::vector<std::string> warnings;
  const auto records = ingest_loss_log(in, &warnings);
  const auto curves = normalize_and_combine_losses(
      records, &warnings, split.empty() ? std::nullopt : std::optional<std::string>(split));
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  write_text_file(out, loss_curves_csv(curves));
  fs::path flags(out);
  flags.replace_extension(".flags.csv");
  write_text_file(flags, loss_flags_csv(curves));
  std::cout << curves.size() << " curve(s) written to " << out << '\n';
  return kExitOk;
}

int cmd_report(const std::string& in, const std::string& formats, const std::string& out) {
  const ReportFormats f = parse_formats(formats);
  const BenchmarkReport report = report_from_json(read_text_file(fs::path(in) / "report.json"));
  const auto written = emit_report(report, out.empty() ? fs::path(in) : fs::path(out), f);
  for (const auto& p : written) std::cout << p.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detection benchmarking toolkit"};
  app.require_subcommand(1);

  std::string ann, dets, out, images, spec, config, in, formats = "csv,json", materialize,
                                                        split_name;
  bool per_image = false, per_class = false;
  int k = 10, trials = 100;
  std::optional<int> fold;
  std::uint64_t seed = 42;
  double iou_thr = 0.5, score_thr = 0.5, h = 1e-5;

  auto* validate_cmd = app.add_subcommand("validate", "Check a COCO annotation file");
  validate_cmd->add_option("annotations", ann, "COCO annotation file")->required();

  auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics");
  stats_cmd->add_option("annotations", ann, "COCO annotation file")->required();
  stats_cmd->add_flag("--per-image", per_image, "List box counts per image");

  auto* split_cmd = app.add_subcommand("split", "Build or materialize a stratified k-fold plan");
  split_cmd->add_option("annotations", ann, "COCO annotation file");
  split_cmd->add_option("--k", k, "Fold count")->check(CLI::PositiveNumber);
  split_cmd->add_option("--seed", seed, "Tie-breaking seed");
  split_cmd->add_option("--out", out, "Plan output file (stdout when omitted)");
  split_cmd->add_option("--materialize", materialize, "Plan file to materialize");
  split_cmd->add_option("--fold", fold, "Fold index to materialize");

  auto* augment_cmd = app.add_subcommand("augment", "Apply flip/grayscale/blur augmentations");
  augment_cmd->add_option("annotations", ann, "COCO annotation file")->required();
  augment_cmd->add_option("--images", images, "Raster directory")->required();
  augment_cmd->add_option("--spec", spec, "Augmentation spec JSON")->required();
  augment_cmd->add_option("--out", out, "Output directory")->required();

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score detections against ground truth");
  evaluate_cmd->add_option("--ann", ann, "Ground-truth annotation file")->required();
  evaluate_cmd->add_option("--dets", dets, "Detections file")->required();
  evaluate_cmd->add_option("--iou", iou_thr, "IoU threshold for P/R/F1")->check(CLI::Range(0.0, 1.0));
  evaluate_cmd->add_option("--score", score_thr, "Score threshold for P/R/F1")
      ->check(CLI::Range(0.0, 1.0));
  evaluate_cmd->add_flag("--per-class", per_class, "Print per-class metrics");

  auto* kernel_cmd = app.add_subcommand("kernel-check", "Deformable attention verification");
  kernel_cmd->set_help_flag("--help", "Print this help message and exit");
  kernel_cmd->add_option("--seed", seed, "First seed");
  kernel_cmd->add_option("--trials", trials, "Oracle-equivalence trials")->check(CLI::PositiveNumber);
  kernel_cmd->add_option("--h", h, "Central-difference step")->check(CLI::PositiveNumber);

  auto* run_cmd = app.add_subcommand("run", "Evaluate all (model, dataset, fold) runs");
  run_cmd->add_option("--config", config, "Run configuration JSON")->required();

  auto* losses_cmd = app.add_subcommand("losses", "Normalize and combine loss logs");
  losses_cmd->add_option("--in", in, "Loss log CSV")->required();
  losses_cmd->add_option("--out", out, "Curve CSV output")->required();
  losses_cmd->add_option("--split", split_name, "Select one value of the split column");

  auto* report_cmd = app.add_subcommand("report", "Re-emit a run report");
  report_cmd->add_option("--in", in, "Run output directory")->required();
  report_cmd->add_option("--format", formats, "Comma-separated: csv,json");
  report_cmd->add_option("--out", out, "Destination directory (defaults to --in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*validate_cmd) return cmd_validate(ann);
    if (*stats_cmd) return cmd_stats(ann, per_image);
    if (*split_cmd) return cmd_split(ann, k, seed, out, materialize, fold);
    if (*augment_cmd) return cmd_augment(ann, images, spec, out);
    if (*evaluate_cmd) return cmd_evaluate(ann, dets, iou_thr, score_thr, per_class);
    if (*kernel_cmd) return cmd_kernel_check(seed, trials, h);
    if (*run_cmd) return cmd_run(config);
    if (*losses_cmd) return cmd_losses(in, out, split_name);
    if (*report_cmd) return cmd_report(in, formats, out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ProtocolError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error at byte " << e.offset() << ": " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitConfig;
}
