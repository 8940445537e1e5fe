#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cca/corpus.hpp"
#include "cca/rng.hpp"

namespace cca {

/// Deterministic stratified fold assignment for one corpus and task.
struct FoldPlan {
  int k = 10;
  std::uint64_t seed = 0;
  Task stratify_on = Task::Function;
  std::map<std::string, int> assignments; // record id -> fold in [0, k)
  std::vector<std::string> warnings;      // classes with fewer than k members

  std::vector<std::string> fold_ids(const Corpus& corpus, int fold) const {
    std::vector<std::string> out;
    for (const auto& r : corpus.records) {
      auto it = assignments.find(r.id);
      if (it != assignments.end() && it->second == fold) out.push_back(r.id);
    }
    return out;
  }
};

namespace detail {

// Indices of corpus records grouped by class, classes in scheme order,
// members in source order.
inline std::vector<std::vector<std::size_t>> group_by_class(
    const Corpus& corpus, const LabelScheme& scheme) {
  std::vector<std::vector<std::size_t>> groups(scheme.labels.size());
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& lab = corpus.records[i].label(scheme.task);
    if (!lab)
      raise(ErrorCode::UnlabeledCorpus,
            "record without " + to_string(scheme.task) + " label",
            {{"id", corpus.records[i].id}});
    int ci = scheme.index_of(*lab);
    if (ci < 0)
      raise(ErrorCode::UnknownLabel, "label '" + *lab + "' not in scheme",
            {{"id", corpus.records[i].id}});
    groups[static_cast<std::size_t>(ci)].push_back(i);
  }
  return groups;
}

} // namespace detail

/// Stratified k-fold assignment. Each class is shuffled with its own derived
/// seed and dealt round-robin; the dealing position carries across classes so
/// total fold sizes stay within one of each other.
inline FoldPlan stratified_kfold(const Corpus& corpus, Task task, int k,
                                 std::uint64_t seed) {
  if (k < 2) raise(ErrorCode::InvalidConfig, "k must be >= 2");
  if (corpus.records.size() < static_cast<std::size_t>(k))
    raise(ErrorCode::TooFewRecords,
          std::to_string(corpus.records.size()) + " records < k=" +
              std::to_string(k));
  const LabelScheme* scheme = corpus.scheme_for(task);
  LabelScheme derived;
  if (scheme == nullptr) {
    auto d = derive_scheme(corpus, task);
    if (!d) raise(ErrorCode::UnlabeledCorpus, "no labels for task");
    derived = *d;
    scheme = &derived;
  }

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.stratify_on = task;

  auto groups = detail::group_by_class(corpus, *scheme);
  std::size_t cursor = 0; // running deal position across classes
  for (std::size_t ci = 0; ci < groups.size(); ++ci) {
    auto& members = groups[ci];
    if (members.empty()) continue;
    if (members.size() < static_cast<std::size_t>(k))
      plan.warnings.push_back("class '" + scheme->labels[ci] + "' has " +
                              std::to_string(members.size()) +
                              " records (< k); distributed round-robin");
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(ci)}));
    rng.shuffle(members);
    for (std::size_t m = 0; m < members.size(); ++m) {
      int fold = static_cast<int>(cursor % static_cast<std::size_t>(k));
      plan.assignments[corpus.records[members[m]].id] = fold;
      ++cursor;
    }
  }
  return plan;
}

struct Split {
  std::vector<std::string> train_ids;
  std::vector<std::string> valid_ids;
  std::vector<std::string> test_ids;
};

/// Carve the test fold out of the plan, then take a stratified
/// `valid_fraction` of the remaining records as validation data.
inline Split split_train_valid(const Corpus& corpus, const FoldPlan& plan,
                               int test_fold, double valid_fraction,
                               std::uint64_t seed) {
  if (test_fold < 0 || test_fold >= plan.k)
    raise(ErrorCode::BadFoldIndex, "fold " + std::to_string(test_fold) +
                                       " outside [0, " + std::to_string(plan.k) +
                                       ")");
  if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
    raise(ErrorCode::InvalidConfig, "valid_fraction must be in (0, 1)");

  Split split;
  // class label -> remaining (non-test) record indices, source order
  std::map<std::string, std::vector<std::size_t>> rest_by_class;
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& r = corpus.records[i];
    auto it = plan.assignments.find(r.id);
    if (it == plan.assignments.end())
      raise(ErrorCode::BadFoldIndex, "record missing from plan", {{"id", r.id}});
    if (it->second == test_fold) {
      split.test_ids.push_back(r.id);
      continue;
    }
    const auto& lab = r.label(plan.stratify_on);
    rest_by_class[lab ? *lab : std::string()].push_back(i);
  }

  std::set<std::size_t> valid_set;
  std::uint64_t class_idx = 0;
  for (auto& [lab, members] : rest_by_class) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(test_fold), class_idx}));
    rng.shuffle(members);
    auto n_take = static_cast<std::size_t>(
        std::floor(valid_fraction * static_cast<double>(members.size()) + 0.5));
    for (std::size_t m = 0; m < n_take && m < members.size(); ++m)
      valid_set.insert(members[m]);
    ++class_idx;
  }
  for (std::size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& r = corpus.records[i];
    if (plan.assignments.at(r.id) == test_fold) continue;
    if (valid_set.count(i))
      split.valid_ids.push_back(r.id);
    else
      split.train_ids.push_back(r.id);
  }
  return split;
}

} // namespace cca
