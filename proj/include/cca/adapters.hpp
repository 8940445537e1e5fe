#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "cca/corpus.hpp"

// Source-layout adapters for the three corpus distributions. Each adapter
// reads its native layout, maps raw label strings onto the canonical scheme
// names, normalizes whitespace and emits records in source order. Layouts
// are documented in docs/data_formats.md; the bundled fixtures under
// data/fixtures/ follow the same layouts.

namespace cca {

namespace detail {

inline std::string map_label(const std::map<std::string, std::string>& table,
                             const std::string& raw, const std::string& id) {
  auto it = table.find(to_lower_ascii(normalize_whitespace(raw)));
  if (it == table.end())
    raise(ErrorCode::UnknownLabel, "unmappable label '" + raw + "'",
          {{"id", id}});
  return it->second;
}

// DFKI function codes as they appear in the distributed annotations.
inline const std::map<std::string, std::string>& dfki_function_map() {
  static const std::map<std::string, std::string> m = {
      {"idea", "Idea"},     {"basis", "Basis"}, {"grel", "GRelated"},
      {"srel", "SRelated"}, {"mrel", "MRelated"}, {"comp", "Compare"},
  };
  return m;
}

inline const std::map<std::string, std::string>& dfki_sentiment_map() {
  static const std::map<std::string, std::string> m = {
      {"pos", "Positive"}, {"neg", "Negative"}, {"neu", "Neutral"}};
  return m;
}

inline const std::map<std::string, std::string>& umich_function_map() {
  static const std::map<std::string, std::string> m = {
      {"criticizing", "Criticizing"},       {"comparison", "Comparison"},
      {"use", "Use"},                       {"substantiating", "Substantiating"},
      {"basis", "Basis"},                   {"neutral", "Neutral"},
  };
  return m;
}

// UMICH polarity column uses single-letter codes (p / n / o for "other").
inline const std::map<std::string, std::string>& umich_sentiment_map() {
  static const std::map<std::string, std::string> m = {
      {"p", "Positive"}, {"n", "Negative"}, {"o", "Neutral"}};
  return m;
}

inline const std::map<std::string, std::string>& tkde_function_map() {
  static const std::map<std::string, std::string> m = {
      {"used", "Use"},
      {"extended", "Extend"},
      {"mentioned", "Mention"},
      {"not_algorithm", "Notalgo"}};
  return m;
}

// Minimal RFC4180-style CSV: quoted fields, doubled quotes, embedded
// commas and newlines inside quotes.
inline std::vector<std::vector<std::string>> read_csv(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(field);
      field.clear();
    } else if (c == '\n') {
      row.push_back(field);
      field.clear();
      rows.push_back(row);
      row.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (quoted)
    raise(ErrorCode::MalformedRecord, "unterminated quote in " + path.string());
  if (!field.empty() || !row.empty()) {
    row.push_back(field);
    rows.push_back(row);
  }
  if (!any)
    raise(ErrorCode::MalformedRecord, "empty file " + path.string());
  return rows;
}

} // namespace detail

/// DFKI layout: one XML document, <corpus><citation id="..."><context> text
/// </context><function>CODE</function><sentiment>CODE</sentiment></citation>.
inline Corpus ingest_dfki(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    raise(ErrorCode::MissingFile, "cannot open " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_xml(
        path.string(), tree,
        boost::property_tree::xml_parser::trim_whitespace);
  } catch (const std::exception& e) {
    raise(ErrorCode::MalformedRecord, std::string("XML parse: ") + e.what(),
          {{"file", path.string()}});
  }
  auto corpus_node = tree.get_child_optional("corpus");
  if (!corpus_node)
    raise(ErrorCode::MalformedRecord, "missing <corpus> root element",
          {{"file", path.string()}});
  Corpus corpus;
  corpus.dataset = Dataset::DFKI;
  std::size_t n = 0;
  for (const auto& [name, node] : *corpus_node) {
    if (name != "citation") continue;
    ++n;
    CitationContext r;
    r.dataset = Dataset::DFKI;
    r.id = node.get<std::string>("<xmlattr>.id", "");
    if (r.id.empty())
      raise(ErrorCode::MalformedRecord, "citation without id attribute",
            {{"index", std::to_string(n)}});
    r.text = normalize_whitespace(node.get<std::string>("context", ""));
    if (r.text.empty())
      raise(ErrorCode::MalformedRecord, "empty <context>", {{"id", r.id}});
    auto fn = node.get_optional<std::string>("function");
    if (fn) r.function_label = detail::map_label(detail::dfki_function_map(), *fn, r.id);
    auto sn = node.get_optional<std::string>("sentiment");
    if (sn) r.sentiment_label = detail::map_label(detail::dfki_sentiment_map(), *sn, r.id);
    r.meta["source_file"] = path.filename().string();
    r.meta["source_index"] = std::to_string(n);
    corpus.records.push_back(std::move(r));
  }
  if (corpus.records.empty())
    raise(ErrorCode::MalformedRecord, "no <citation> records in " + path.string());
  attach_schemes(corpus);
  corpus.validate();
  return corpus;
}

/// UMICH layout: tab-separated, header line "id<TAB>function<TAB>polarity<TAB>text".
inline Corpus ingest_umich(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
  Corpus corpus;
  corpus.dataset = Dataset::UMICH;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
      if (i == line.size() || line[i] == '\t') {
        cols.push_back(line.substr(start, i - start));
        start = i + 1;
      }
    }
    if (line_no == 1) {
      if (cols.size() != 4 || cols[0] != "id")
        raise(ErrorCode::MalformedRecord, "expected header 'id\\tfunction\\tpolarity\\ttext'",
              {{"line", "1"}});
      continue;
    }
    if (cols.size() != 4)
      raise(ErrorCode::MalformedRecord,
            "expected 4 tab-separated columns, got " + std::to_string(cols.size()),
            {{"line", std::to_string(line_no)}});
    CitationContext r;
    r.dataset = Dataset::UMICH;
    r.id = normalize_whitespace(cols[0]);
    if (r.id.empty())
      raise(ErrorCode::MalformedRecord, "empty id",
            {{"line", std::to_string(line_no)}});
    r.text = normalize_whitespace(cols[3]);
    if (r.text.empty())
      raise(ErrorCode::MalformedRecord, "empty text",
            {{"line", std::to_string(line_no)}});
    if (!normalize_whitespace(cols[1]).empty())
      r.function_label = detail::map_label(detail::umich_function_map(), cols[1], r.id);
    if (!normalize_whitespace(cols[2]).empty())
      r.sentiment_label = detail::map_label(detail::umich_sentiment_map(), cols[2], r.id);
    r.meta["source_file"] = path.filename().string();
    r.meta["source_line"] = std::to_string(line_no);
    corpus.records.push_back(std::move(r));
  }
  if (corpus.records.empty())
    raise(ErrorCode::MalformedRecord, "no records in " + path.string());
  attach_schemes(corpus);
  corpus.validate();
  return corpus;
}

/// TKDE layout: CSV with header "id,label,citation_context". Function labels
/// only; the distribution has no sentiment column.
inline Corpus ingest_tkde(const std::filesystem::path& path) {
  auto rows = detail::read_csv(path);
  if (rows.empty() || rows[0].size() != 3 || rows[0][0] != "id")
    raise(ErrorCode::MalformedRecord,
          "expected header 'id,label,citation_context'", {{"line", "1"}});
  Corpus corpus;
  corpus.dataset = Dataset::TKDE;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& cols = rows[i];
    if (cols.size() == 1 && cols[0].empty()) continue;
    if (cols.size() != 3)
      raise(ErrorCode::MalformedRecord,
            "expected 3 columns, got " + std::to_string(cols.size()),
            {{"line", std::to_string(i + 1)}});
    CitationContext r;
    r.dataset = Dataset::TKDE;
    r.id = normalize_whitespace(cols[0]);
    if (r.id.empty())
      raise(ErrorCode::MalformedRecord, "empty id",
            {{"line", std::to_string(i + 1)}});
    r.function_label = detail::map_label(detail::tkde_function_map(), cols[1], r.id);
    r.text = normalize_whitespace(cols[2]);
    if (r.text.empty())
      raise(ErrorCode::MalformedRecord, "empty text",
            {{"line", std::to_string(i + 1)}});
    r.meta["source_file"] = path.filename().string();
    r.meta["source_line"] = std::to_string(i + 1);
    corpus.records.push_back(std::move(r));
  }
  if (corpus.records.empty())
    raise(ErrorCode::MalformedRecord, "no records in " + path.string());
  attach_schemes(corpus);
  corpus.validate();
  return corpus;
}

/// Dispatch on dataset. Ingestion is a pure function of the file bytes.
inline Corpus ingest(Dataset dataset, const std::filesystem::path& path) {
  switch (dataset) {
    case Dataset::DFKI: return ingest_dfki(path);
    case Dataset::UMICH: return ingest_umich(path);
    case Dataset::TKDE: return ingest_tkde(path);
  }
  raise(ErrorCode::UsageError, "bad dataset enum");
}

} // namespace cca
