#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "cca/evaluate.hpp"
#include "cca/synthetic.hpp"

using namespace cca;

namespace {
const std::filesystem::path kData = CCA_DATA_DIR;

ModelSpec baseline_spec() {
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::NgramBaseline;
  return spec;
}
} // namespace

TEST_CASE("cross-validation runs k folds whose test sets partition the corpus") {
  Corpus corpus = make_separable_corpus(100, 2, 5);
  CVReport report = cross_validate(corpus, Task::Function, baseline_spec(), 10, 7);
  REQUIRE(report.folds.size() == 10);
  std::size_t total_test = 0;
  for (const auto& f : report.folds) {
    CHECK(f.ok);
    CHECK(f.test_size == 10);
    total_test += f.test_size;
    CHECK(f.confusion_matrix.total() == f.test_size);
  }
  CHECK(total_test == corpus.records.size());
}

TEST_CASE("cross-validation reports are byte-identical across runs and jobs") {
  Corpus corpus = make_separable_corpus(60, 3, 9);
  CVReport a = cross_validate(corpus, Task::Function, baseline_spec(), 5, 3, 1);
  CVReport b = cross_validate(corpus, Task::Function, baseline_spec(), 5, 3, 1);
  CVReport c = cross_validate(corpus, Task::Function, baseline_spec(), 5, 3, 4);
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(a.to_json().dump() == c.to_json().dump());
}

TEST_CASE("baseline on the separable corpus clears 0.95 macro-F1") {
  Corpus corpus = make_separable_corpus(300, 3, 4242);
  CVReport report = cross_validate(corpus, Task::Function, baseline_spec(), 10, 42);
  CHECK(report.macro_f1.mean >= 0.95);
}

TEST_CASE("aggregates are recomputable from the fold entries") {
  Corpus corpus = make_separable_corpus(80, 2, 21);
  CVReport report = cross_validate(corpus, Task::Function, baseline_spec(), 8, 13);
  std::vector<double> macro;
  for (const auto& f : report.folds)
    if (f.ok) macro.push_back(f.metric_set.macro_f1);
  double mean = 0;
  for (double x : macro) mean += x;
  mean /= static_cast<double>(macro.size());
  double var = 0;
  for (double x : macro) var += (x - mean) * (x - mean);
  const double stddev = std::sqrt(var / static_cast<double>(macro.size()));
  CHECK(report.macro_f1.mean == mean);
  CHECK(report.macro_f1.stddev == stddev);
}

TEST_CASE("a broken model spec marks folds as failed instead of aborting") {
  Corpus corpus = make_separable_corpus(40, 2, 3);
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Checkpoint;
  spec.checkpoint_path = "/nonexistent/model.ccae";
  spec.vocab_path = "/nonexistent/vocab.txt";
  CVReport report = cross_validate(corpus, Task::Function, spec, 4, 1);
  REQUIRE(report.folds.size() == 4);
  for (const auto& f : report.folds) {
    CHECK_FALSE(f.ok);
    CHECK_FALSE(f.error.empty());
  }
  CHECK(report.macro_f1.mean == 0.0); // nothing to aggregate
}

TEST_CASE("a small preset model cross-validates end to end") {
  Corpus corpus = make_separable_corpus(40, 2, 77);
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Preset;
  spec.preset = "bert-mini";
  spec.vocab_size = 256;
  spec.train.learning_rate = 1e-3;
  spec.train.max_epochs = 2;
  spec.train.batch_size = 16;
  CVReport report = cross_validate(corpus, Task::Function, spec, 2, 5);
  for (const auto& f : report.folds) {
    INFO(f.error);
    CHECK(f.ok);
    CHECK(f.best_epoch >= 1);
    CHECK(f.steps_run > 0);
  }
}

TEST_CASE("per-fold further pre-training is exercised when enabled") {
  Corpus corpus = make_separable_corpus(30, 2, 88);
  ModelSpec spec;
  spec.kind = ModelSpec::Kind::Preset;
  spec.preset = "bert-mini";
  spec.vocab_size = 256;
  spec.further_pretraining = true;
  spec.pretrain.objective = Objective::Masked;
  spec.pretrain.steps = 3;
  spec.pretrain.batch_size = 8;
  spec.pretrain.learning_rate = 1e-3;
  spec.train.learning_rate = 1e-3;
  spec.train.max_epochs = 1;
  CVReport report = cross_validate(corpus, Task::Function, spec, 2, 6);
  for (const auto& f : report.folds) {
    INFO(f.error);
    CHECK(f.ok);
  }
}

TEST_CASE("reference table lookups return the published values") {
  nlohmann::json ref = load_reference(kData / "reference_results.json");
  CHECK(reference_value(ref, "xlnet_finetune", Dataset::DFKI, Task::Function) ==
        Catch::Approx(87.2));
  CHECK(reference_value(ref, "xlnet_finetune", Dataset::UMICH, Task::Sentiment) ==
        Catch::Approx(91.56));
  CHECK(reference_value(ref, "8700263", Dataset::TKDE, Task::Function) ==
        Catch::Approx(74.90));
  CHECK(reference_value(ref, "xlnet_finetune", Dataset::DFKI, Task::Sentiment) ==
        Catch::Approx(91.72));
  CHECK(reference_value(ref, "yousif2019multi", Dataset::UMICH, Task::Function) ==
        Catch::Approx(83.08));
  // absent cells and unknown rows
  CHECK_THROWS_MATCHES(
      reference_value(ref, "8700263", Dataset::DFKI, Task::Function), Error,
      Catch::Matchers::Predicate<Error>([](const Error& e) {
        return e.code() == ErrorCode::UnknownDatasetKey;
      }));
  CHECK_THROWS_AS(reference_value(ref, "nobody2020", Dataset::DFKI, Task::Function),
                  Error);
}

TEST_CASE("compare_report carries the desk-scale banner and both tables") {
  Corpus corpus = make_separable_corpus(40, 2, 11);
  CVReport report = cross_validate(corpus, Task::Function, baseline_spec(), 4, 2);
  nlohmann::json ref = load_reference(kData / "reference_results.json");
  std::string doc = compare_report(report, ref);
  CHECK(doc.find("NOT expected to match") != std::string::npos);
  CHECK(doc.find("XLNet fine-tuning") != std::string::npos);
  CHECK(doc.find("87.20") != std::string::npos);
  CHECK(doc.find("macro-F1") != std::string::npos);

  // sentiment on TKDE has no reference table entry
  Corpus tkde_like = make_separable_corpus(40, 2, 12);
  CVReport r2 = cross_validate(tkde_like, Task::Function, baseline_spec(), 4, 2);
  r2.config["dataset"] = "TKDE";
  r2.config["task"] = "sentiment";
  CHECK_THROWS_MATCHES(compare_report(r2, ref), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::UnknownDatasetKey;
                       }));
}
