#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "detbench/annotations.hpp"

namespace detbench {

// Deterministic assignment of every image to one of k folds, balanced on
// per-class annotation instances.
struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::string dataset_checksum;
  // (image id, fold) in the dataset's image order.
  std::vector<std::pair<std::int64_t, int>> assignment;

  int fold_of(std::int64_t image_id) const;  // -1 when absent
  std::vector<std::int64_t> images_in(int fold) const;

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

// Train/val/test ids for one rotation: test = fold i, val = fold (i+1) mod k.
struct FoldSplit {
  int fold_index = 0;
  std::vector<std::int64_t> train_ids;
  std::vector<std::int64_t> val_ids;
  std::vector<std::int64_t> test_ids;
};

// Largest allowed |count(class, fold) - total(class)/k|.
std::int64_t balance_bound(std::int64_t class_total);

FoldPlan stratified_kfold(const Dataset& ds, int k, std::uint64_t seed);
FoldSplit materialize_fold(const FoldPlan& plan, int fold);

struct BalanceAudit {
  bool ok = true;
  double worst_excess = 0.0;  // max over (class, fold) of deviation - bound
  std::int64_t worst_category = 0;
  int worst_fold = 0;
};

// Checks the per-class per-fold deviation bound of `plan` against `ds`.
BalanceAudit audit_balance(const Dataset& ds, const FoldPlan& plan);

// FNV-1a over the canonical serialization, as 16 hex digits.
std::string dataset_checksum(const Dataset& ds);

std::string serialize_plan(const FoldPlan& plan);
FoldPlan parse_plan_text(std::string_view text);
FoldPlan parse_plan(const std::filesystem::path& path);

std::string serialize_split(const FoldSplit& split);

}  // namespace detbench
