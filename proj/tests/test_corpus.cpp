#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cca/adapters.hpp"
#include "cca/corpus.hpp"

using namespace cca;

namespace {
const std::filesystem::path kFixtures = CCA_FIXTURE_DIR;

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::binary);
  out << body;
  return path;
}
} // namespace

TEST_CASE("dfki fixture ingests with mapped labels and provenance") {
  Corpus c = ingest(Dataset::DFKI, kFixtures / "dfki_mini.xml");
  REQUIRE(c.records.size() == 30);
  CHECK(c.dataset == Dataset::DFKI);
  CHECK(c.records[0].id == "dfki-0001");
  CHECK(c.records[0].function_label == "Basis");
  CHECK(c.records[0].sentiment_label == "Neutral");
  CHECK(c.records[0].meta.at("source_file") == "dfki_mini.xml");
  // raw codes must be gone
  for (const auto& r : c.records) {
    REQUIRE(r.function_label.has_value());
    CHECK(r.function_label != "GRel");
    CHECK(r.sentiment_label != "neu");
  }
  // whitespace noise in the fixture collapses to single spaces
  for (const auto& r : c.records) CHECK(r.text.find("  ") == std::string::npos);
}

TEST_CASE("umich and tkde fixtures ingest") {
  Corpus u = ingest(Dataset::UMICH, kFixtures / "umich_mini.tsv");
  REQUIRE(u.records.size() == 30);
  CHECK(u.records[0].function_label == "Basis");
  CHECK(u.records[0].sentiment_label == "Positive");

  Corpus t = ingest(Dataset::TKDE, kFixtures / "tkde_mini.csv");
  REQUIRE(t.records.size() == 30);
  for (const auto& r : t.records) {
    CHECK_FALSE(r.sentiment_label.has_value());
    REQUIRE(r.function_label.has_value());
  }
  // quoted CSV fields with embedded commas survive
  CHECK(t.records[0].text.find(',') != std::string::npos);
}

TEST_CASE("ingest error paths") {
  CHECK_THROWS_MATCHES(ingest(Dataset::DFKI, kFixtures / "nope.xml"), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::MissingFile;
                       }));
  auto empty = write_temp("cca_empty.xml", "");
  CHECK_THROWS_MATCHES(ingest(Dataset::DFKI, empty), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::MalformedRecord;
                       }));
  auto bad_label = write_temp(
      "cca_badlabel.xml",
      "<corpus><citation id=\"x1\"><context>some text</context>"
      "<function>Bogus</function></citation></corpus>");
  try {
    ingest(Dataset::DFKI, bad_label);
    FAIL("expected UnknownLabel");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownLabel);
    CHECK(e.context().at("id") == "x1");
  }
  auto bad_cols = write_temp("cca_badcols.tsv",
                             "id\tfunction\tpolarity\ttext\nu1\tuse\tp\n");
  try {
    ingest(Dataset::UMICH, bad_cols);
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedRecord);
    CHECK(e.context().at("line") == "2");
  }
}

TEST_CASE("ingestion is a pure function of file bytes") {
  Corpus a = ingest(Dataset::UMICH, kFixtures / "umich_mini.tsv");
  Corpus b = ingest(Dataset::UMICH, kFixtures / "umich_mini.tsv");
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].id == b.records[i].id);
    CHECK(a.records[i].text == b.records[i].text);
    CHECK(a.records[i].function_label == b.records[i].function_label);
    CHECK(a.records[i].sentiment_label == b.records[i].sentiment_label);
  }
}

TEST_CASE("canonical jsonl roundtrips") {
  Corpus c = ingest(Dataset::DFKI, kFixtures / "dfki_mini.xml");
  auto path = std::filesystem::temp_directory_path() / "cca_roundtrip.jsonl";
  save_jsonl(c, path);
  Corpus back = load_jsonl(path);
  REQUIRE(back.records.size() == c.records.size());
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    CHECK(back.records[i].id == c.records[i].id);
    CHECK(back.records[i].text == c.records[i].text);
    CHECK(back.records[i].function_label == c.records[i].function_label);
    CHECK(back.records[i].sentiment_label == c.records[i].sentiment_label);
    CHECK(back.records[i].meta == c.records[i].meta);
  }
  // bad JSON line reports its location
  auto bad = write_temp("cca_bad.jsonl", "not json\n");
  try {
    load_jsonl(bad);
    FAIL("expected MalformedRecord");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedRecord);
    CHECK(e.context().at("line") == "1");
  }
}

TEST_CASE("whitespace normalization") {
  CHECK(normalize_whitespace("  a\t\tb \r\n c  ") == "a b c");
  CHECK(normalize_whitespace("\n\t ") == "");
  CHECK(normalize_whitespace("plain") == "plain");
}

TEST_CASE("published schemes validate and carry the published fractions") {
  for (auto [d, t] : {std::pair{Dataset::DFKI, Task::Function},
                      {Dataset::DFKI, Task::Sentiment},
                      {Dataset::UMICH, Task::Function},
                      {Dataset::UMICH, Task::Sentiment},
                      {Dataset::TKDE, Task::Function}}) {
    LabelScheme s = builtin_scheme(d, t);
    double sum = 0.0;
    for (const auto& [lab, f] : s.expected_fraction) sum += f;
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 0.005));
  }
  CHECK(builtin_scheme(Dataset::DFKI, Task::Sentiment).expected_fraction.at("Neutral") ==
        Catch::Approx(0.8603));
  CHECK(builtin_scheme(Dataset::TKDE, Task::Function).expected_fraction.at("Mention") ==
        Catch::Approx(0.6537));
  CHECK(builtin_scheme(Dataset::DFKI, Task::Function).labels.size() == 6);
  CHECK_THROWS_AS(builtin_scheme(Dataset::TKDE, Task::Sentiment), Error);
}

TEST_CASE("validate_stats passes fixtures at tolerance 0.005") {
  struct Row {
    const char* file;
    Dataset dataset;
    const char* expected;
  };
  const Row rows[] = {
      {"dfki_mini.xml", Dataset::DFKI, "dfki_mini.function.expected.json"},
      {"dfki_mini.xml", Dataset::DFKI, "dfki_mini.sentiment.expected.json"},
      {"umich_mini.tsv", Dataset::UMICH, "umich_mini.function.expected.json"},
      {"umich_mini.tsv", Dataset::UMICH, "umich_mini.sentiment.expected.json"},
      {"tkde_mini.csv", Dataset::TKDE, "tkde_mini.function.expected.json"},
  };
  for (const auto& row : rows) {
    Corpus c = ingest(row.dataset, kFixtures / row.file);
    LabelScheme scheme = load_scheme(kFixtures / row.expected);
    StatsReport rep = validate_stats(c, scheme, 0.005);
    INFO(row.expected);
    CHECK(rep.pass);
    CHECK(rep.labeled_records == 30);
  }
}

TEST_CASE("validate_stats fails a single-class corpus") {
  Corpus c;
  c.dataset = Dataset::DFKI;
  for (int i = 0; i < 10; ++i) {
    CitationContext r;
    r.id = "r" + std::to_string(i);
    r.text = "text " + std::to_string(i);
    r.dataset = Dataset::DFKI;
    r.function_label = "Basis";
    c.records.push_back(r);
  }
  StatsReport rep =
      validate_stats(c, builtin_scheme(Dataset::DFKI, Task::Function), 0.005);
  CHECK_FALSE(rep.pass);
  for (const auto& r : rep.rows)
    if (r.label == "Basis") CHECK(r.observed == 1.0);
}

TEST_CASE("validate_stats rejects a corpus without labels for the task") {
  Corpus t = ingest(Dataset::TKDE, kFixtures / "tkde_mini.csv");
  LabelScheme s = builtin_scheme(Dataset::DFKI, Task::Sentiment);
  CHECK_THROWS_MATCHES(validate_stats(t, s, 0.005), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::UnlabeledCorpus;
                       }));
}

TEST_CASE("corpus invariants are enforced") {
  Corpus c;
  c.dataset = Dataset::TKDE;
  CitationContext r;
  r.id = "t1";
  r.text = "text";
  r.dataset = Dataset::TKDE;
  r.sentiment_label = "Positive"; // TKDE carries no sentiment column
  c.records.push_back(r);
  CHECK_THROWS_AS(c.validate(), Error);

  Corpus d;
  d.dataset = Dataset::DFKI;
  CitationContext a;
  a.id = "same";
  a.text = "x";
  a.dataset = Dataset::DFKI;
  d.records.push_back(a);
  d.records.push_back(a);
  CHECK_THROWS_AS(d.validate(), Error);
}
