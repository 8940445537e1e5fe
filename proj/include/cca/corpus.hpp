#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cca/error.hpp"
#include "cca/text.hpp"

namespace cca {

enum class Dataset { DFKI, UMICH, TKDE };
enum class Task { Function, Sentiment };

inline std::string to_string(Dataset d) {
  switch (d) {
    case Dataset::DFKI: return "DFKI";
    case Dataset::UMICH: return "UMICH";
    case Dataset::TKDE: return "TKDE";
  }
  return "?";
}

inline std::string to_string(Task t) {
  return t == Task::Function ? "function" : "sentiment";
}

inline Dataset parse_dataset(const std::string& s) {
  std::string u = to_lower_ascii(s);
  if (u == "dfki") return Dataset::DFKI;
  if (u == "umich") return Dataset::UMICH;
  if (u == "tkde" || u == "tkde2019") return Dataset::TKDE;
  raise(ErrorCode::UnknownDatasetKey, "unknown dataset '" + s + "'");
}

inline Task parse_task(const std::string& s) {
  std::string u = to_lower_ascii(s);
  if (u == "function") return Task::Function;
  if (u == "sentiment") return Task::Sentiment;
  raise(ErrorCode::UsageError, "unknown task '" + s + "' (function|sentiment)");
}

/// One labeled or unlabeled citation context record.
struct CitationContext {
  std::string id;
  std::string text; // whitespace-normalized, non-empty
  Dataset dataset = Dataset::DFKI;
  std::optional<std::string> function_label;
  std::optional<std::string> sentiment_label;
  std::map<std::string, std::string> meta;

  const std::optional<std::string>& label(Task t) const {
    return t == Task::Function ? function_label : sentiment_label;
  }
};

/// Closed per-dataset label set for one task, with the class distribution
/// the corpus is expected to show.
struct LabelScheme {
  Task task = Task::Function;
  Dataset dataset = Dataset::DFKI;
  std::vector<std::string> labels;
  std::map<std::string, double> expected_fraction;

  void validate() const {
    if (labels.empty())
      raise(ErrorCode::InvalidConfig, "label scheme has no labels");
    std::set<std::string> uniq(labels.begin(), labels.end());
    if (uniq.size() != labels.size())
      raise(ErrorCode::InvalidConfig, "label scheme has duplicate labels");
    if (!expected_fraction.empty()) {
      double sum = 0.0;
      for (const auto& l : labels) {
        auto it = expected_fraction.find(l);
        if (it == expected_fraction.end())
          raise(ErrorCode::InvalidConfig,
                "expected_fraction missing label '" + l + "'");
        sum += it->second;
      }
      if (expected_fraction.size() != labels.size())
        raise(ErrorCode::InvalidConfig,
              "expected_fraction keys do not match labels");
      if (std::abs(sum - 1.0) > 0.005)
        raise(ErrorCode::InvalidConfig,
              "expected fractions sum to " + std::to_string(sum));
    }
  }

  int index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return static_cast<int>(i);
    return -1;
  }

  bool contains(const std::string& label) const { return index_of(label) >= 0; }
};

struct Corpus {
  Dataset dataset = Dataset::DFKI;
  std::vector<CitationContext> records;
  std::vector<LabelScheme> schemes;

  const LabelScheme* scheme_for(Task t) const {
    for (const auto& s : schemes)
      if (s.task == t) return &s;
    return nullptr;
  }

  std::size_t labeled_count(Task t) const {
    std::size_t n = 0;
    for (const auto& r : records)
      if (r.label(t).has_value()) ++n;
    return n;
  }

  void validate() const {
    std::set<std::string> ids;
    for (const auto& r : records) {
      if (!ids.insert(r.id).second)
        raise(ErrorCode::MalformedRecord, "duplicate record id '" + r.id + "'");
      if (r.text.empty())
        raise(ErrorCode::MalformedRecord, "empty text", {{"id", r.id}});
      if (r.dataset == Dataset::TKDE && r.sentiment_label.has_value())
        raise(ErrorCode::MalformedRecord,
              "TKDE records carry no sentiment label", {{"id", r.id}});
      for (Task t : {Task::Function, Task::Sentiment}) {
        const auto& lab = r.label(t);
        if (!lab) continue;
        const LabelScheme* s = scheme_for(t);
        if (s != nullptr && !s->contains(*lab))
          raise(ErrorCode::UnknownLabel, "label '" + *lab + "' not in scheme",
                {{"id", r.id}, {"task", to_string(t)}});
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Published corpus statistics (shipped as built-in schemes).
// ---------------------------------------------------------------------------

inline LabelScheme builtin_scheme(Dataset d, Task t) {
  LabelScheme s;
  s.task = t;
  s.dataset = d;
  if (d == Dataset::DFKI && t == Task::Sentiment) {
    s.labels = {"Positive", "Negative", "Neutral"};
    s.expected_fraction = {
        {"Positive", 0.1075}, {"Negative", 0.0322}, {"Neutral", 0.8603}};
  } else if (d == Dataset::DFKI && t == Task::Function) {
    s.labels = {"Idea", "Basis", "GRelated", "SRelated", "MRelated", "Compare"};
    s.expected_fraction = {{"Idea", 0.0718},     {"Basis", 0.2381},
                           {"GRelated", 0.4248}, {"SRelated", 0.2081},
                           {"MRelated", 0.0175}, {"Compare", 0.0397}};
  } else if (d == Dataset::UMICH && t == Task::Sentiment) {
    s.labels = {"Positive", "Negative", "Neutral"};
    s.expected_fraction = {
        {"Positive", 0.326}, {"Negative", 0.124}, {"Neutral", 0.550}};
  } else if (d == Dataset::UMICH && t == Task::Function) {
    s.labels = {"Criticizing", "Comparison", "Use",
                "Substantiating", "Basis", "Neutral"};
    s.expected_fraction = {{"Criticizing", 0.163}, {"Comparison", 0.081},
                           {"Use", 0.180},         {"Substantiating", 0.080},
                           {"Basis", 0.053},       {"Neutral", 0.443}};
  } else if (d == Dataset::TKDE && t == Task::Function) {
    s.labels = {"Use", "Extend", "Mention", "Notalgo"};
    s.expected_fraction = {{"Use", 0.0855},
                           {"Extend", 0.0430},
                           {"Mention", 0.6537},
                           {"Notalgo", 0.2178}};
  } else {
    raise(ErrorCode::UnknownDatasetKey,
          "no " + to_string(t) + " scheme for " + to_string(d));
  }
  s.validate();
  return s;
}

inline std::vector<LabelScheme> builtin_schemes(Dataset d) {
  if (d == Dataset::TKDE) return {builtin_scheme(d, Task::Function)};
  return {builtin_scheme(d, Task::Function), builtin_scheme(d, Task::Sentiment)};
}

/// Scheme built from the labels actually present in a corpus (sorted order,
/// observed fractions). Used for corpora that do not follow a published
/// label set, e.g. synthetic test data.
inline std::optional<LabelScheme> derive_scheme(const Corpus& corpus, Task t) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : corpus.records)
    if (r.label(t)) ++counts[*r.label(t)];
  if (counts.empty()) return std::nullopt;
  LabelScheme s;
  s.task = t;
  s.dataset = corpus.dataset;
  std::size_t total = 0;
  for (const auto& [lab, n] : counts) total += n;
  for (const auto& [lab, n] : counts) {
    s.labels.push_back(lab);
    s.expected_fraction[lab] = static_cast<double>(n) / static_cast<double>(total);
  }
  return s;
}

/// Attach schemes to a corpus: the built-in scheme when every observed label
/// belongs to it, otherwise a scheme derived from the data.
inline void attach_schemes(Corpus& corpus) {
  corpus.schemes.clear();
  for (Task t : {Task::Function, Task::Sentiment}) {
    auto derived = derive_scheme(corpus, t);
    if (!derived) continue;
    bool builtin_ok = true;
    LabelScheme builtin;
    try {
      builtin = builtin_scheme(corpus.dataset, t);
    } catch (const Error&) {
      builtin_ok = false;
    }
    if (builtin_ok) {
      for (const auto& lab : derived->labels)
        if (!builtin.contains(lab)) builtin_ok = false;
    }
    corpus.schemes.push_back(builtin_ok ? builtin : *derived);
  }
}

// ---------------------------------------------------------------------------
// Canonical JSON Lines format.
// ---------------------------------------------------------------------------

inline nlohmann::json record_to_json(const CitationContext& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["text"] = r.text;
  j["dataset"] = to_string(r.dataset);
  j["function_label"] =
      r.function_label ? nlohmann::json(*r.function_label) : nlohmann::json();
  j["sentiment_label"] =
      r.sentiment_label ? nlohmann::json(*r.sentiment_label) : nlohmann::json();
  j["meta"] = r.meta;
  return j;
}

inline CitationContext record_from_json(const nlohmann::json& j,
                                        std::size_t line_no) {
  auto fail = [&](const std::string& why) -> void {
    raise(ErrorCode::MalformedRecord, why, {{"line", std::to_string(line_no)}});
  };
  if (!j.is_object()) fail("not a JSON object");
  for (const char* key : {"id", "text", "dataset"})
    if (!j.contains(key)) fail(std::string("missing key '") + key + "'");
  CitationContext r;
  if (!j["id"].is_string()) fail("'id' must be a string");
  r.id = j["id"].get<std::string>();
  if (!j["text"].is_string()) fail("'text' must be a string");
  r.text = normalize_whitespace(j["text"].get<std::string>());
  if (r.text.empty()) fail("text empty after whitespace normalization");
  r.dataset = parse_dataset(j["dataset"].get<std::string>());
  if (j.contains("function_label") && !j["function_label"].is_null())
    r.function_label = j["function_label"].get<std::string>();
  if (j.contains("sentiment_label") && !j["sentiment_label"].is_null())
    r.sentiment_label = j["sentiment_label"].get<std::string>();
  if (j.contains("meta") && j["meta"].is_object())
    for (const auto& [k, v] : j["meta"].items())
      r.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
  return r;
}

inline void save_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::IoFailure, "cannot write " + path.string());
  for (const auto& r : corpus.records) out << record_to_json(r).dump() << "\n";
  if (!out) raise(ErrorCode::IoFailure, "write failed for " + path.string());
}

inline Corpus load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool dataset_set = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      raise(ErrorCode::MalformedRecord, "invalid JSON",
            {{"line", std::to_string(line_no)}});
    CitationContext r = record_from_json(j, line_no);
    if (!dataset_set) {
      corpus.dataset = r.dataset;
      dataset_set = true;
    } else if (r.dataset != corpus.dataset) {
      raise(ErrorCode::MalformedRecord, "mixed datasets in one file",
            {{"line", std::to_string(line_no)}});
    }
    corpus.records.push_back(std::move(r));
  }
  if (corpus.records.empty())
    raise(ErrorCode::MalformedRecord, "no records in " + path.string());
  attach_schemes(corpus);
  corpus.validate();
  return corpus;
}

// ---------------------------------------------------------------------------
// LabelScheme JSON (fixture expectation files, reports).
// ---------------------------------------------------------------------------

inline nlohmann::json scheme_to_json(const LabelScheme& s) {
  nlohmann::json j;
  j["task"] = to_string(s.task);
  j["dataset"] = to_string(s.dataset);
  j["labels"] = s.labels;
  j["expected_fraction"] = s.expected_fraction;
  return j;
}

inline LabelScheme scheme_from_json(const nlohmann::json& j) {
  LabelScheme s;
  s.task = parse_task(j.at("task").get<std::string>());
  s.dataset = parse_dataset(j.at("dataset").get<std::string>());
  s.labels = j.at("labels").get<std::vector<std::string>>();
  if (j.contains("expected_fraction"))
    s.expected_fraction =
        j.at("expected_fraction").get<std::map<std::string, double>>();
  s.validate();
  return s;
}

inline LabelScheme load_scheme(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  return scheme_from_json(j);
}

// ---------------------------------------------------------------------------
// Statistics validation against an expected distribution.
// ---------------------------------------------------------------------------

struct StatsRow {
  std::string label;
  double expected = 0.0;
  double observed = 0.0;
  std::size_t count = 0;
  bool pass = false;
};

struct StatsReport {
  Dataset dataset = Dataset::DFKI;
  Task task = Task::Function;
  double tolerance = 0.005;
  std::size_t total_records = 0;
  std::size_t labeled_records = 0;
  std::vector<StatsRow> rows;
  bool pass = false;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dataset"] = to_string(dataset);
    j["task"] = to_string(task);
    j["tolerance"] = tolerance;
    j["total_records"] = total_records;
    j["labeled_records"] = labeled_records;
    j["pass"] = pass;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      j["rows"].push_back({{"label", r.label},
                           {"expected", r.expected},
                           {"observed", r.observed},
                           {"count", r.count},
                           {"pass", r.pass}});
    }
    return j;
  }

  std::string to_table() const {
    std::ostringstream os;
    os << "dataset=" << to_string(dataset) << " task=" << to_string(task)
       << " labeled=" << labeled_records << "/" << total_records
       << " tolerance=" << tolerance << "\n";
    os << "label            expected  observed  count  pass\n";
    for (const auto& r : rows) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%-16s %8.4f  %8.4f  %5zu  %s\n",
                    r.label.c_str(), r.expected, r.observed, r.count,
                    r.pass ? "ok" : "FAIL");
      os << buf;
    }
    os << (pass ? "PASS" : "FAIL") << "\n";
    return os.str();
  }
};

/// Compare observed label fractions against scheme.expected_fraction.
/// Fractions are over records carrying a label for the scheme's task.
inline StatsReport validate_stats(const Corpus& corpus, const LabelScheme& scheme,
                                  double tolerance) {
  scheme.validate();
  std::size_t labeled = corpus.labeled_count(scheme.task);
  if (labeled == 0)
    raise(ErrorCode::UnlabeledCorpus,
          "corpus has no " + to_string(scheme.task) + " labels");
  std::map<std::string, std::size_t> counts;
  for (const auto& r : corpus.records) {
    const auto& lab = r.label(scheme.task);
    if (!lab) continue;
    if (!scheme.contains(*lab))
      raise(ErrorCode::UnknownLabel, "label '" + *lab + "' not in scheme",
            {{"id", r.id}});
    ++counts[*lab];
  }
  StatsReport rep;
  rep.dataset = corpus.dataset;
  rep.task = scheme.task;
  rep.tolerance = tolerance;
  rep.total_records = corpus.records.size();
  rep.labeled_records = labeled;
  rep.pass = true;
  for (const auto& lab : scheme.labels) {
    StatsRow row;
    row.label = lab;
    row.count = counts.count(lab) ? counts[lab] : 0;
    row.observed = static_cast<double>(row.count) / static_cast<double>(labeled);
    auto it = scheme.expected_fraction.find(lab);
    row.expected = it == scheme.expected_fraction.end() ? 0.0 : it->second;
    row.pass = std::abs(row.observed - row.expected) <= tolerance;
    rep.pass = rep.pass && row.pass;
    rep.rows.push_back(row);
  }
  return rep;
}

} // namespace cca
