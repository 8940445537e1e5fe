#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "cca/metrics.hpp"
#include "cca/rng.hpp"

using namespace cca;

namespace {

LabelScheme scheme_of(std::vector<std::string> labels) {
  LabelScheme s;
  s.task = Task::Function;
  s.labels = std::move(labels);
  return s;
}

// brute-force oracle: expand the matrix into (gold, pred) pairs and compute
// every metric by counting pairs, straight from the definitions
struct OracleMetrics {
  std::map<std::string, double> precision, recall, f1;
  double macro_f1 = 0, micro_f1 = 0, accuracy = 0;
};

OracleMetrics oracle(const ConfusionMatrix& cm) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t g = 0; g < cm.labels.size(); ++g)
    for (std::size_t p = 0; p < cm.labels.size(); ++p)
      for (std::uint64_t n = 0; n < cm.counts[g][p]; ++n) pairs.push_back({g, p});

  OracleMetrics m;
  double macro_sum = 0;
  std::size_t correct = 0;
  for (const auto& [g, p] : pairs)
    if (g == p) ++correct;
  for (std::size_t c = 0; c < cm.labels.size(); ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [g, p] : pairs) {
      if (g == c && p == c) ++tp;
      if (g != c && p == c) ++fp;
      if (g == c && p != c) ++fn;
    }
    double prec = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double rec = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    double f = (prec + rec > 0) ? 2 * prec * rec / (prec + rec) : 0.0;
    m.precision[cm.labels[c]] = prec;
    m.recall[cm.labels[c]] = rec;
    m.f1[cm.labels[c]] = f;
    macro_sum += f;
  }
  m.macro_f1 = cm.labels.empty() ? 0 : macro_sum / cm.labels.size();
  m.accuracy = pairs.empty() ? 0 : static_cast<double>(correct) / pairs.size();
  // pooled micro over all classes: TP = correct, FP = FN = incorrect
  if (!pairs.empty()) {
    double tp = static_cast<double>(correct);
    double fp = static_cast<double>(pairs.size() - correct);
    double prec = tp / (tp + fp);
    m.micro_f1 = prec > 0 ? 2 * prec * prec / (prec + prec) : 0.0;
  }
  return m;
}

} // namespace

TEST_CASE("confusion counts gold/pred pairs") {
  auto s = scheme_of({"A", "B"});
  ConfusionMatrix cm = confusion({"A", "A", "B"}, {"A", "B", "B"}, s);
  CHECK(cm.counts[0][0] == 1);
  CHECK(cm.counts[0][1] == 1);
  CHECK(cm.counts[1][1] == 1);
  CHECK(cm.counts[1][0] == 0);
  CHECK(cm.total() == 3);

  ConfusionMatrix diag = confusion({"A", "B", "A", "B", "A", "A", "A", "A", "B", "B"},
                                   {"A", "B", "A", "B", "A", "A", "A", "A", "B", "B"}, s);
  std::uint64_t trace = 0;
  for (std::size_t i = 0; i < 2; ++i) trace += diag.counts[i][i];
  CHECK(trace == 10);

  ConfusionMatrix empty = confusion({}, {}, s);
  CHECK(empty.total() == 0);

  CHECK_THROWS_MATCHES(confusion({"A"}, {}, s), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::LengthMismatch;
                       }));
  CHECK_THROWS_MATCHES(confusion({"Z"}, {"A"}, s), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::UnknownLabel;
                       }));
}

TEST_CASE("perfect predictions give macro-F1 of one") {
  ConfusionMatrix cm;
  cm.labels = {"A", "B"};
  cm.counts = {{5, 0}, {0, 5}};
  MetricSet m = metrics(cm);
  CHECK(m.macro_f1 == 1.0);
  CHECK(m.micro_f1 == 1.0);
  CHECK(m.accuracy == 1.0);
  CHECK(m.zero_division_labels.empty());
}

TEST_CASE("symmetric 2x2 example has per-class F1 of two thirds") {
  // per class: P = R = 2/3, so F1 = 2/3 as well
  ConfusionMatrix cm;
  cm.labels = {"A", "B"};
  cm.counts = {{2, 1}, {1, 2}};
  MetricSet m = metrics(cm);
  CHECK_THAT(m.f1.at("A"), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(m.f1.at("B"), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
  CHECK_THAT(m.macro_f1, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
}

TEST_CASE("a class never predicted nor gold gets F1 zero and a flag") {
  ConfusionMatrix cm;
  cm.labels = {"A", "B", "Ghost"};
  cm.counts = {{3, 0, 0}, {0, 3, 0}, {0, 0, 0}};
  MetricSet m = metrics(cm);
  CHECK(m.f1.at("Ghost") == 0.0);
  REQUIRE(m.zero_division_labels.size() == 1);
  CHECK(m.zero_division_labels[0] == "Ghost");
  CHECK_THAT(m.macro_f1, Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
}

TEST_CASE("empty matrix yields all zeros") {
  ConfusionMatrix cm;
  cm.labels = {"A", "B"};
  cm.counts = {{0, 0}, {0, 0}};
  MetricSet m = metrics(cm);
  CHECK(m.macro_f1 == 0.0);
  CHECK(m.micro_f1 == 0.0);
  CHECK(m.accuracy == 0.0);
}

TEST_CASE("metrics agree with the brute-force oracle on random matrices") {
  Rng rng(424242);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.next_below(5); // up to 6 classes
    ConfusionMatrix cm;
    for (std::size_t c = 0; c < n; ++c) cm.labels.push_back("c" + std::to_string(c));
    cm.counts.assign(n, std::vector<std::uint64_t>(n, 0));
    for (std::size_t g = 0; g < n; ++g)
      for (std::size_t p = 0; p < n; ++p)
        cm.counts[g][p] = rng.next_below(9); // zero cells are common
    MetricSet got = metrics(cm);
    OracleMetrics want = oracle(cm);
    INFO("trial " << trial << " classes " << n);
    CHECK_THAT(got.macro_f1, Catch::Matchers::WithinAbs(want.macro_f1, 1e-12));
    CHECK_THAT(got.micro_f1, Catch::Matchers::WithinAbs(want.micro_f1, 1e-12));
    CHECK_THAT(got.accuracy, Catch::Matchers::WithinAbs(want.accuracy, 1e-12));
    for (const auto& lab : cm.labels) {
      CHECK_THAT(got.precision.at(lab),
                 Catch::Matchers::WithinAbs(want.precision.at(lab), 1e-12));
      CHECK_THAT(got.recall.at(lab),
                 Catch::Matchers::WithinAbs(want.recall.at(lab), 1e-12));
      CHECK_THAT(got.f1.at(lab), Catch::Matchers::WithinAbs(want.f1.at(lab), 1e-12));
    }
    // single-label identity
    CHECK_THAT(got.micro_f1, Catch::Matchers::WithinAbs(got.accuracy, 1e-12));
  }
}
