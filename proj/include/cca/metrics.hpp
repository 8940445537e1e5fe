#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cca/corpus.hpp"
#include "cca/error.hpp"

namespace cca {

struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::uint64_t>> counts; // rows gold, cols predicted

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }

  nlohmann::json to_json() const {
    return {{"labels", labels}, {"counts", counts}};
  }
};

inline ConfusionMatrix confusion(const std::vector<std::string>& golds,
                                 const std::vector<std::string>& preds,
                                 const LabelScheme& scheme) {
  if (golds.size() != preds.size())
    raise(ErrorCode::LengthMismatch,
          std::to_string(golds.size()) + " golds vs " +
              std::to_string(preds.size()) + " predictions");
  ConfusionMatrix cm;
  cm.labels = scheme.labels;
  cm.counts.assign(scheme.labels.size(),
                   std::vector<std::uint64_t>(scheme.labels.size(), 0));
  for (std::size_t i = 0; i < golds.size(); ++i) {
    int g = scheme.index_of(golds[i]);
    int p = scheme.index_of(preds[i]);
    if (g < 0)
      raise(ErrorCode::UnknownLabel, "gold label '" + golds[i] + "' not in scheme");
    if (p < 0)
      raise(ErrorCode::UnknownLabel, "predicted label '" + preds[i] + "' not in scheme");
    ++cm.counts[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
  }
  return cm;
}

struct MetricSet {
  std::map<std::string, double> precision;
  std::map<std::string, double> recall;
  std::map<std::string, double> f1;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double accuracy = 0.0;
  // classes whose precision/recall/F1 hit the 0/0 convention
  std::vector<std::string> zero_division_labels;

  nlohmann::json to_json() const {
    return {{"precision", precision},
            {"recall", recall},
            {"f1", f1},
            {"macro_f1", macro_f1},
            {"micro_f1", micro_f1},
            {"accuracy", accuracy},
            {"zero_division_labels", zero_division_labels}};
  }
};

/// Per-class precision/recall/F1 with the 0-for-0/0 convention, macro as the
/// unweighted mean over classes, micro from pooled counts. For single-label
/// classification micro-F1 equals accuracy.
inline MetricSet metrics(const ConfusionMatrix& cm) {
  MetricSet m;
  const std::size_t n = cm.labels.size();
  const std::uint64_t total = cm.total();
  std::uint64_t diag = 0;
  double macro_sum = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t tp = cm.counts[c][c];
    std::uint64_t gold = 0, pred = 0;
    for (std::size_t j = 0; j < n; ++j) {
      gold += cm.counts[c][j];
      pred += cm.counts[j][c];
    }
    diag += tp;
    bool zero_div = false;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    if (pred > 0)
      precision = static_cast<double>(tp) / static_cast<double>(pred);
    else
      zero_div = true;
    if (gold > 0)
      recall = static_cast<double>(tp) / static_cast<double>(gold);
    else
      zero_div = true;
    if (precision + recall > 0.0)
      f1 = 2.0 * precision * recall / (precision + recall);
    else
      zero_div = true;
    const auto& label = cm.labels[c];
    m.precision[label] = precision;
    m.recall[label] = recall;
    m.f1[label] = f1;
    if (zero_div) m.zero_division_labels.push_back(label);
    macro_sum += f1;
  }
  m.macro_f1 = n == 0 ? 0.0 : macro_sum / static_cast<double>(n);
  m.accuracy = total == 0 ? 0.0
                          : static_cast<double>(diag) / static_cast<double>(total);
  // micro: pooled TP / (TP + FP) == pooled TP / (TP + FN) == accuracy here,
  // computed from the pooled counts all the same
  if (total == 0) {
    m.micro_f1 = 0.0;
  } else {
    const double tp = static_cast<double>(diag);
    const double fp = static_cast<double>(total - diag);
    const double fn = static_cast<double>(total - diag);
    const double p = tp / (tp + fp);
    const double r = tp / (tp + fn);
    m.micro_f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  return m;
}

} // namespace cca
