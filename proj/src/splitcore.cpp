#include "detbench/splitcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

#include "detbench/counter_rng.hpp"

namespace detbench {

using nlohmann::json;

namespace {

// Lexicographic plan cost. All terms are integers scaled by k so that
// comparisons are exact.
struct Cost {
  std::int64_t empty_folds = 0;
  std::int64_t class_excess = 0;  // sum of k*(deviation - bound) over violations
  std::int64_t size_excess = 0;   // images outside [floor(n/k), ceil(n/k)]
  std::int64_t class_sq = 0;      // sum of (k*count - total)^2
  std::int64_t size_sq = 0;       // sum of (k*n_f - n)^2

  auto key() const {
    return std::tie(empty_folds, class_excess, size_excess, class_sq, size_sq);
  }
  Cost& operator+=(const Cost& o) {
    empty_folds += o.empty_folds;
    class_excess += o.class_excess;
    size_excess += o.size_excess;
    class_sq += o.class_sq;
    size_sq += o.size_sq;
    return *this;
  }
  Cost& operator-=(const Cost& o) {
    empty_folds -= o.empty_folds;
    class_excess -= o.class_excess;
    size_excess -= o.size_excess;
    class_sq -= o.class_sq;
    size_sq -= o.size_sq;
    return *this;
  }
  friend bool operator<(const Cost& a, const Cost& b) { return a.key() < b.key(); }
};

class FoldState {
 public:
  FoldState(int k, std::vector<std::int64_t> totals, std::int64_t n_images)
      : k_(k),
        totals_(std::move(totals)),
        n_(n_images),
        counts_(static_cast<std::size_t>(k), std::vector<std::int64_t>(totals_.size(), 0)),
        sizes_(static_cast<std::size_t>(k), 0) {
    for (auto t : totals_) bounds_.push_back(balance_bound(t));
  }

  void add(int f, const std::vector<std::int64_t>& v, int sign) {
    for (std::size_t c = 0; c < v.size(); ++c) counts_[f][c] += sign * v[c];
    sizes_[f] += sign;
  }

  Cost fold_cost(int f) const {
    Cost cost;
    const auto& cnt = counts_[f];
    for (std::size_t c = 0; c < totals_.size(); ++c) {
      const std::int64_t dev = k_ * cnt[c] - totals_[c];
      cost.class_excess += std::max<std::int64_t>(0, std::abs(dev) - k_ * bounds_[c]);
      cost.class_sq += dev * dev;
    }
    const std::int64_t lo = n_ / k_;
    const std::int64_t hi = (n_ + k_ - 1) / k_;
    const std::int64_t sz = sizes_[f];
    cost.size_excess = sz < lo ? lo - sz : (sz > hi ? sz - hi : 0);
    const std::int64_t sdev = k_ * sz - n_;
    cost.size_sq = sdev * sdev;
    cost.empty_folds = sz == 0 ? 1 : 0;
    return cost;
  }

  double deficit(int f, std::size_t c) const {
    return static_cast<double>(totals_[c]) / k_ - static_cast<double>(counts_[f][c]);
  }
  std::int64_t size(int f) const { return sizes_[f]; }

 private:
  int k_;
  std::vector<std::int64_t> totals_;
  std::vector<std::int64_t> bounds_;
  std::int64_t n_;
  std::vector<std::vector<std::int64_t>> counts_;
  std::vector<std::int64_t> sizes_;
};

std::vector<std::vector<std::int64_t>> image_class_counts(
    const Dataset& ds, const std::unordered_map<std::int64_t, std::size_t>& class_index,
    const std::unordered_map<std::int64_t, std::size_t>& image_index) {
  std::vector<std::vector<std::int64_t>> counts(
      ds.images.size(), std::vector<std::int64_t>(class_index.size(), 0));
  for (const auto& a : ds.annotations) {
    if (a.iscrowd) continue;
    auto im = image_index.find(a.image_id);
    auto cl = class_index.find(a.category_id);
    if (im == image_index.end() || cl == class_index.end()) {
      throw IntegrityError("annotation " + std::to_string(a.id) + " has a dangling reference",
                           {a.id});
    }
    ++counts[im->second][cl->second];
  }
  return counts;
}

// Extra randomized attempts when the first plan leaves a class out of bound.
constexpr std::uint64_t kRestarts = 64;

}  // namespace

std::int64_t balance_bound(std::int64_t class_total) {
  return std::max<std::int64_t>(1, (2 * class_total + 99) / 100);
}

int FoldPlan::fold_of(std::int64_t image_id) const {
  for (const auto& [id, f] : assignment) {
    if (id == image_id) return f;
  }
  return -1;
}

std::vector<std::int64_t> FoldPlan::images_in(int fold) const {
  std::vector<std::int64_t> out;
  for (const auto& [id, f] : assignment) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

FoldPlan stratified_kfold(const Dataset& ds, int k, std::uint64_t seed) {
  if (k < 3) {
    throw ProtocolError("k = " + std::to_string(k) +
                        ": the train/val/test rotation needs at least 3 folds");
  }
  if (ds.images.empty()) throw PreconditionError("dataset has no images");
  const auto n = static_cast<std::int64_t>(ds.images.size());
  if (k > n) {
    throw InfeasiblePlanError("k = " + std::to_string(k) + " exceeds the image count " +
                              std::to_string(n));
  }

  std::unordered_map<std::int64_t, std::size_t> class_index, image_index;
  for (std::size_t c = 0; c < ds.categories.size(); ++c) {
    class_index.emplace(ds.categories[c].id, c);
  }
  for (std::size_t i = 0; i < ds.images.size(); ++i) image_index.emplace(ds.images[i].id, i);
  if (image_index.size() != ds.images.size()) {
    throw IntegrityError("dataset has duplicate image ids");
  }

  const auto counts = image_class_counts(ds, class_index, image_index);
  const std::size_t n_classes = ds.categories.size();
  std::vector<std::int64_t> totals(n_classes, 0);
  for (const auto& v : counts) {
    for (std::size_t c = 0; c < n_classes; ++c) totals[c] += v[c];
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (totals[c] == 0) {
      throw PreconditionError("category " + std::to_string(ds.categories[c].id) + " ('" +
                              ds.categories[c].name + "') has no annotations");
    }
  }

  // Rarest class first; ties by category id.
  std::vector<std::size_t> by_rarity(n_classes);
  std::iota(by_rarity.begin(), by_rarity.end(), 0);
  std::sort(by_rarity.begin(), by_rarity.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(totals[a], ds.categories[a].id) < std::tie(totals[b], ds.categories[b].id);
  });
  std::vector<std::size_t> rank(n_classes);
  for (std::size_t r = 0; r < n_classes; ++r) rank[by_rarity[r]] = r;

  struct Order {
    int empty;              // unannotated images go last
    std::size_t rank;       // rank of the rarest class present
    std::int64_t rare_neg;  // -(instances of that class)
    std::int64_t total_neg; // -(instances overall)
    std::uint64_t tie;      // seeded pre-shuffle
    std::int64_t id;
  };
  std::vector<std::size_t> rarest(ds.images.size(), n_classes);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    for (std::size_t c = 0; c < n_classes; ++c) {
      if (counts[i][c] > 0 && (rarest[i] == n_classes || rank[c] < rank[rarest[i]])) rarest[i] = c;
    }
  }
  const std::size_t n_img = ds.images.size();

  // Attempt 0 orders images rarest-class first; later attempts, made only
  // while some class is out of bound, use seeded random orders.
  auto attempt = [&](std::uint64_t salt, std::vector<int>& fold) {
    std::vector<Order> keys(n_img);
    for (std::size_t i = 0; i < n_img; ++i) {
      const auto& v = counts[i];
      const std::int64_t total = std::accumulate(v.begin(), v.end(), std::int64_t{0});
      const auto id = static_cast<std::uint64_t>(ds.images[i].id);
      const auto tie = salt == 0 ? hash_words({seed, id}) : hash_words({seed, salt, id});
      if (total == 0) {
        keys[i] = {1, 0, 0, 0, tie, ds.images[i].id};
      } else if (salt == 0) {
        keys[i] = {0, rank[rarest[i]], -v[rarest[i]], -total, tie, ds.images[i].id};
      } else {
        keys[i] = {0, 0, 0, 0, tie, ds.images[i].id};
      }
    }
    std::vector<std::size_t> order(n_img);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const auto& x = keys[a];
      const auto& y = keys[b];
      return std::tie(x.empty, x.rank, x.rare_neg, x.total_neg, x.tie, x.id) <
             std::tie(y.empty, y.rank, y.rare_neg, y.total_neg, y.tie, y.id);
    });

    // Greedy pass: each image goes to the fold furthest below quota on its
    // rarest class, then on its whole class profile, then the smallest fold.
    FoldState state(k, totals, n);
    fold.assign(n_img, -1);
    for (std::size_t i : order) {
      const auto& v = counts[i];
      int best = -1;
      std::tuple<double, double, std::int64_t> best_key;
      for (int f = 0; f < k; ++f) {
        double rare_deficit = 0.0, profile = 0.0;
        if (rarest[i] != n_classes) {
          rare_deficit = state.deficit(f, rarest[i]);
          for (std::size_t c = 0; c < n_classes; ++c) {
            profile += static_cast<double>(v[c]) * state.deficit(f, c);
          }
        }
        const auto key = std::make_tuple(rare_deficit, profile, -state.size(f));
        if (best < 0 || key > best_key) {
          best = f;
          best_key = key;
        }
      }
      fold[i] = best;
      state.add(best, v, +1);
    }

    // Local repair: single moves and pairwise swaps, accepted only when they
    // strictly lower the plan cost. Terminates because the cost is a
    // non-negative integer tuple.
    auto pair_cost = [&](int a, int b) {
      Cost c = state.fold_cost(a);
      c += state.fold_cost(b);
      return c;
    };
    for (int pass = 0; pass < 1000; ++pass) {
      bool improved = false;
      for (std::size_t i = 0; i < n_img; ++i) {
        const int from = fold[i];
        for (int to = 0; to < k; ++to) {
          if (to == from) continue;
          const Cost before = pair_cost(from, to);
          state.add(from, counts[i], -1);
          state.add(to, counts[i], +1);
          if (pair_cost(from, to) < before) {
            fold[i] = to;
            improved = true;
            break;
          }
          state.add(to, counts[i], -1);
          state.add(from, counts[i], +1);
        }
      }
      for (std::size_t i = 0; i < n_img; ++i) {
        for (std::size_t j = i + 1; j < n_img; ++j) {
          const int a = fold[i], b = fold[j];
          if (a == b || counts[i] == counts[j]) continue;
          const Cost before = pair_cost(a, b);
          state.add(a, counts[i], -1);
          state.add(b, counts[i], +1);
          state.add(b, counts[j], -1);
          state.add(a, counts[j], +1);
          if (pair_cost(a, b) < before) {
            std::swap(fold[i], fold[j]);
            improved = true;
            continue;
          }
          state.add(a, counts[j], -1);
          state.add(b, counts[j], +1);
          state.add(b, counts[i], -1);
          state.add(a, counts[i], +1);
        }
      }
      if (!improved) break;
    }
    Cost total;
    for (int f = 0; f < k; ++f) total += state.fold_cost(f);
    return total;
  };

  std::vector<int> fold, trial;
  Cost best = attempt(0, fold);
  for (std::uint64_t salt = 1; salt <= kRestarts && (best.empty_folds > 0 || best.class_excess > 0);
       ++salt) {
    const Cost c = attempt(salt, trial);
    if (c < best) {
      best = c;
      fold.swap(trial);
    }
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.dataset_checksum = dataset_checksum(ds);
  plan.assignment.reserve(n_img);
  for (std::size_t i = 0; i < n_img; ++i) plan.assignment.emplace_back(ds.images[i].id, fold[i]);
  return plan;
}

FoldSplit materialize_fold(const FoldPlan& plan, int fold) {
  if (fold < 0 || fold >= plan.k) {
    throw IndexError("fold " + std::to_string(fold) + " outside [0, " + std::to_string(plan.k) +
                     ")");
  }
  FoldSplit split;
  split.fold_index = fold;
  const int val = (fold + 1) % plan.k;
  for (const auto& [id, f] : plan.assignment) {
    if (f == fold) {
      split.test_ids.push_back(id);
    } else if (f == val) {
      split.val_ids.push_back(id);
    } else {
      split.train_ids.push_back(id);
    }
  }
  return split;
}

BalanceAudit audit_balance(const Dataset& ds, const FoldPlan& plan) {
  std::unordered_map<std::int64_t, int> fold_of;
  for (const auto& [id, f] : plan.assignment) fold_of.emplace(id, f);
  std::map<std::int64_t, std::vector<std::int64_t>> per_class;
  for (const auto& c : ds.categories) per_class.emplace(c.id, std::vector<std::int64_t>(plan.k, 0));
  for (const auto& a : ds.annotations) {
    if (a.iscrowd) continue;
    auto it = fold_of.find(a.image_id);
    if (it == fold_of.end()) throw IntegrityError("image missing from plan", {a.image_id});
    ++per_class[a.category_id][static_cast<std::size_t>(it->second)];
  }
  BalanceAudit audit;
  audit.worst_excess = -1e300;
  for (const auto& [cat, counts] : per_class) {
    const std::int64_t total = std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
    const double quota = static_cast<double>(total) / plan.k;
    const auto bound = static_cast<double>(balance_bound(total));
    for (int f = 0; f < plan.k; ++f) {
      const double excess = std::abs(static_cast<double>(counts[f]) - quota) - bound;
      if (excess > audit.worst_excess) {
        audit.worst_excess = excess;
        audit.worst_category = cat;
        audit.worst_fold = f;
      }
    }
  }
  if (per_class.empty()) audit.worst_excess = 0.0;
  audit.ok = audit.worst_excess <= 1e-9;
  return audit;
}

std::string dataset_checksum(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize_dataset(ds)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string serialize_plan(const FoldPlan& plan) {
  json doc;
  doc["k"] = plan.k;
  doc["seed"] = plan.seed;
  doc["dataset_checksum"] = plan.dataset_checksum;
  doc["assignment"] = json::array();
  for (const auto& [id, f] : plan.assignment) doc["assignment"].push_back({id, f});
  return doc.dump() + "\n";
}

FoldPlan parse_plan_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed plan: ") + e.what(), e.byte);
  }
  auto need = [&](const char* key) -> const json& {
    if (!doc.is_object() || !doc.contains(key)) {
      throw SchemaError(std::string("plan: missing required field '") + key + "'", key);
    }
    return doc.at(key);
  };
  FoldPlan plan;
  const json& k = need("k");
  const json& seed = need("seed");
  const json& checksum = need("dataset_checksum");
  const json& assignment = need("assignment");
  if (!k.is_number_integer()) throw SchemaError("plan: 'k' must be an integer", "k");
  if (!seed.is_number_integer()) throw SchemaError("plan: 'seed' must be an integer", "seed");
  if (!checksum.is_string()) {
    throw SchemaError("plan: 'dataset_checksum' must be a string", "dataset_checksum");
  }
  if (!assignment.is_array()) {
    throw SchemaError("plan: 'assignment' must be an array", "assignment");
  }
  plan.k = k.get<int>();
  plan.seed = seed.get<std::uint64_t>();
  plan.dataset_checksum = checksum.get<std::string>();
  for (const auto& e : assignment) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() ||
        !e[1].is_number_integer()) {
      throw SchemaError("plan: assignment entries must be [image_id, fold]", "assignment");
    }
    const int f = e[1].get<int>();
    if (f < 0 || f >= plan.k) {
      throw SchemaError("plan: fold index out of range", "assignment");
    }
    plan.assignment.emplace_back(e[0].get<std::int64_t>(), f);
  }
  return plan;
}

FoldPlan parse_plan(const std::filesystem::path& path) {
  return parse_plan_text(read_text_file(path));
}

std::string serialize_split(const FoldSplit& split) {
  json doc;
  doc["fold"] = split.fold_index;
  doc["train"] = split.train_ids;
  doc["val"] = split.val_ids;
  doc["test"] = split.test_ids;
  return doc.dump() + "\n";
}

}  // namespace detbench
