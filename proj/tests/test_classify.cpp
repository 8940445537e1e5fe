#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "cca/classify.hpp"
#include "cca/synthetic.hpp"
#include "support/test_helpers.hpp"

using namespace cca;

namespace {

EncoderConfig small_transformer(int vocab, int hidden = 32) {
  EncoderConfig c;
  c.family = EncoderFamily::Transformer;
  c.num_layers = 2;
  c.hidden_size = hidden;
  c.num_heads = 2;
  c.embed_size = hidden;
  c.vocab_size = vocab;
  c.max_len = 64;
  c.dropout = 0.1;
  return c;
}

struct LabeledSetup {
  Corpus corpus;
  Vocab vocab;
  LabelScheme scheme;
  std::vector<std::string> ids;
};

LabeledSetup make_setup(std::size_t n, std::size_t classes, std::uint64_t seed) {
  LabeledSetup s;
  s.corpus = make_separable_corpus(n, classes, seed);
  std::vector<std::string> texts;
  for (const auto& r : s.corpus.records) {
    texts.push_back(r.text);
    s.ids.push_back(r.id);
  }
  s.vocab = train_vocab(texts, 512, 0);
  s.scheme = *s.corpus.scheme_for(Task::Function);
  return s;
}

} // namespace

TEST_CASE("attach_head sizes the head from the scheme") {
  Vocab vocab = train_vocab({"alpha beta"}, 32, 0);
  EncoderConfig cfg = small_transformer(static_cast<int>(vocab.size()));
  auto enc = build_encoder<float>(cfg, 1);
  auto before = enc.params.values;

  LabelScheme function_scheme = builtin_scheme(Dataset::DFKI, Task::Function);
  auto clf = attach_head(std::move(enc), function_scheme, 2);
  CHECK(clf.n_classes() == 6);
  CHECK(clf.head_w().size() == 6 * static_cast<std::size_t>(cfg.output_dim()));
  CHECK(clf.encoder.params.values == before); // encoder untouched

  auto enc2 = build_encoder<float>(cfg, 1);
  auto clf2 = attach_head(std::move(enc2),
                          builtin_scheme(Dataset::DFKI, Task::Sentiment), 2);
  CHECK(clf2.n_classes() == 3);

  // same seed, same init
  auto enc3 = build_encoder<float>(cfg, 1);
  auto clf3 = attach_head(std::move(enc3), function_scheme, 2);
  CHECK(clf3.head_w() == clf.head_w());
  CHECK(clf3.head_b() == clf.head_b());
}

TEST_CASE("best-epoch selection is argmax with earliest-epoch ties") {
  CHECK(select_best_epoch({0.5, 0.7, 0.6}) == 1); // epoch 2, 1-based
  CHECK(select_best_epoch({0.7, 0.7, 0.7}) == 0);
  CHECK(select_best_epoch({0.1}) == 0);
  CHECK(select_best_epoch({0.3, 0.9, 0.9, 0.2}) == 1);
}

TEST_CASE("finetune reports the best epoch against the returned series") {
  auto s = make_setup(60, 3, 17);
  EncoderConfig cfg = small_transformer(static_cast<int>(s.vocab.size()), 16);
  auto clf = attach_head(build_encoder<float>(cfg, 3), s.scheme, 4);
  std::vector<std::string> train(s.ids.begin(), s.ids.begin() + 45);
  std::vector<std::string> valid(s.ids.begin() + 45, s.ids.end());
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.max_epochs = 6;
  tc.batch_size = 16;
  tc.seed = 5;
  FitResult fit = finetune(clf, train, valid, s.corpus, s.vocab, tc);
  REQUIRE(fit.valid_metric.size() == 6);
  CHECK(fit.best_epoch ==
        static_cast<int>(select_best_epoch(fit.valid_metric)) + 1);
  CHECK(fit.best_metric == Catch::Approx(fit.valid_metric[static_cast<std::size_t>(
                               fit.best_epoch - 1)]));
  // the classifier was left at the best epoch's weights
  std::vector<std::string> vt, vg;
  for (const auto& id : valid)
    for (const auto& r : s.corpus.records)
      if (r.id == id) {
        vt.push_back(r.text);
        vg.push_back(*r.function_label);
      }
  auto preds = predict(clf, vt, s.vocab);
  std::vector<std::string> pl;
  for (auto& p : preds) pl.push_back(p.label);
  MetricSet m = metrics(confusion(vg, pl, s.scheme));
  CHECK(m.macro_f1 == Catch::Approx(fit.best_metric));
}

TEST_CASE("a tiny classifier memorizes 32 distinct examples") {
  auto s = make_setup(32, 4, 909);
  EncoderConfig cfg = small_transformer(static_cast<int>(s.vocab.size()), 32);
  auto clf = attach_head(build_encoder<float>(cfg, 5), s.scheme, 6);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 32;
  tc.max_epochs = 60; // one step per epoch at this batch size
  tc.track_train_accuracy = true;
  tc.seed = 7;
  FitResult fit = finetune(clf, s.ids, {}, s.corpus, s.vocab, tc);
  double best = 0;
  for (double a : fit.train_accuracy) best = std::max(best, a);
  CHECK(best == 1.0);
}

TEST_CASE("freeze_encoder leaves every encoder parameter bitwise unchanged") {
  auto s = make_setup(40, 2, 33);
  EncoderConfig cfg = small_transformer(static_cast<int>(s.vocab.size()), 16);
  auto clf = attach_head(build_encoder<float>(cfg, 5), s.scheme, 6);
  auto before = clf.encoder.params.values;
  auto head_before = clf.head.values;
  std::vector<std::string> train(s.ids.begin(), s.ids.begin() + 30);
  std::vector<std::string> valid(s.ids.begin() + 30, s.ids.end());
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.max_epochs = 4;
  tc.batch_size = 8;
  tc.freeze_encoder = true;
  tc.seed = 9;
  finetune(clf, train, valid, s.corpus, s.vocab, tc);
  CHECK(clf.encoder.params.values == before);
  CHECK(clf.head.values != head_before);
}

TEST_CASE("finetune input validation") {
  auto s = make_setup(20, 2, 1);
  EncoderConfig cfg = small_transformer(static_cast<int>(s.vocab.size()), 16);
  auto clf = attach_head(build_encoder<float>(cfg, 3), s.scheme, 4);
  TrainConfig tc;
  CHECK_THROWS_MATCHES(finetune(clf, {}, {}, s.corpus, s.vocab, tc), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::EmptyTrainSet;
                       }));
  // overlap between train and valid
  CHECK_THROWS_AS(
      finetune(clf, {s.ids[0], s.ids[1]}, {s.ids[1]}, s.corpus, s.vocab, tc),
      Error);
  // unknown id
  CHECK_THROWS_MATCHES(finetune(clf, {"ghost"}, {}, s.corpus, s.vocab, tc),
                       Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::LabelMismatch;
                       }));
}

TEST_CASE("predictions are proper distributions") {
  auto s = make_setup(12, 3, 2);
  EncoderConfig cfg = small_transformer(static_cast<int>(s.vocab.size()), 16);
  auto clf = attach_head(build_encoder<float>(cfg, 3), s.scheme, 4);
  std::vector<std::string> texts;
  for (const auto& r : s.corpus.records) texts.push_back(r.text);
  auto preds = predict(clf, texts, s.vocab);
  REQUIRE(preds.size() == texts.size());
  for (const auto& p : preds) {
    double sum = 0;
    for (double v : p.probs) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-6));
  }
  CHECK_THROWS_MATCHES(predict(clf, {}, s.vocab), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::EmptyInput;
                       }));
}

TEST_CASE("a zeroed head yields uniform probabilities") {
  auto s = make_setup(6, 3, 4);
  EncoderConfig cfg = small_transformer(static_cast<int>(s.vocab.size()), 16);
  auto clf = attach_head(build_encoder<float>(cfg, 3), s.scheme, 4);
  for (auto& v : clf.head.values)
    std::fill(v.begin(), v.end(), 0.0f);
  auto preds = predict(clf, {s.corpus.records[0].text}, s.vocab);
  for (double p : preds[0].probs)
    CHECK_THAT(p, Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-6));
  // argmax ties break toward the lowest label index
  CHECK(preds[0].label == clf.labels[0]);
}

TEST_CASE("a rigged head reproduces a hand-computed softmax") {
  auto s = make_setup(6, 3, 4);
  EncoderConfig cfg = small_transformer(static_cast<int>(s.vocab.size()), 16);
  auto clf = attach_head(build_encoder<float>(cfg, 3), s.scheme, 4);
  // zero weights, bias = (2, 1, 0) => logits are exactly the bias
  std::fill(clf.head.values[0].begin(), clf.head.values[0].end(), 0.0f);
  clf.head.values[1] = {2.0f, 1.0f, 0.0f};
  auto preds = predict(clf, {s.corpus.records[0].text}, s.vocab);
  const double z = std::exp(2.0) + std::exp(1.0) + 1.0;
  CHECK_THAT(preds[0].probs[0], Catch::Matchers::WithinAbs(std::exp(2.0) / z, 1e-6));
  CHECK_THAT(preds[0].probs[1], Catch::Matchers::WithinAbs(std::exp(1.0) / z, 1e-6));
  CHECK_THAT(preds[0].probs[2], Catch::Matchers::WithinAbs(1.0 / z, 1e-6));
  CHECK(preds[0].label == clf.labels[0]);
}

TEST_CASE("classifier checkpoints roundtrip") {
  auto s = make_setup(10, 2, 8);
  EncoderConfig cfg = small_transformer(static_cast<int>(s.vocab.size()), 16);
  auto clf = attach_head(build_encoder<float>(cfg, 3), s.scheme, 4);
  auto path = std::filesystem::temp_directory_path() / "cca_clf.ccae";
  save_classifier(clf, path, {{"note", "test"}});
  Classifier<float> back = load_classifier(path);
  CHECK(back.labels == clf.labels);
  CHECK(back.task == clf.task);
  CHECK(back.encoder.params.values == clf.encoder.params.values);
  CHECK(back.head.values == clf.head.values);
  auto p1 = predict(clf, {s.corpus.records[0].text}, s.vocab);
  auto p2 = predict(back, {s.corpus.records[0].text}, s.vocab);
  CHECK(p1[0].probs == p2[0].probs);
  // an encoder checkpoint is not a classifier
  auto enc_path = std::filesystem::temp_directory_path() / "cca_enc_only.ccae";
  save_checkpoint(clf.encoder, enc_path);
  CHECK_THROWS_AS(load_classifier(enc_path), Error);
}

TEST_CASE("ngram baseline separates a keyword corpus") {
  Corpus c;
  c.dataset = Dataset::DFKI;
  for (int i = 0; i < 60; ++i) {
    CitationContext r;
    r.id = "b" + std::to_string(i);
    r.dataset = Dataset::DFKI;
    const bool good = i % 2 == 0;
    r.text = std::string("the result is ") + (good ? "good" : "bad") +
             " in run " + std::to_string(i);
    r.function_label = good ? "Praise" : "Criticism";
    c.records.push_back(r);
  }
  attach_schemes(c);
  std::vector<std::string> ids;
  for (const auto& r : c.records) ids.push_back(r.id);
  BaselineModel model = train_ngram_baseline(ids, c, Task::Function);
  std::vector<std::string> texts;
  for (const auto& r : c.records) texts.push_back(r.text);
  auto preds = predict_baseline(model, texts);
  int correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == *c.records[i].function_label) ++correct;
  CHECK(static_cast<double>(correct) / static_cast<double>(preds.size()) >= 0.99);

  // determinism
  BaselineModel again = train_ngram_baseline(ids, c, Task::Function);
  CHECK(again.weights == model.weights);
  CHECK(predict_baseline(again, texts) == preds);
}

TEST_CASE("single-class baseline always predicts that class") {
  Corpus c;
  c.dataset = Dataset::DFKI;
  for (int i = 0; i < 8; ++i) {
    CitationContext r;
    r.id = "s" + std::to_string(i);
    r.dataset = Dataset::DFKI;
    r.text = "text number " + std::to_string(i);
    r.function_label = "Only";
    c.records.push_back(r);
  }
  attach_schemes(c);
  std::vector<std::string> ids;
  for (const auto& r : c.records) ids.push_back(r.id);
  BaselineModel model = train_ngram_baseline(ids, c, Task::Function);
  auto preds = predict_baseline(model, {"anything at all", "else entirely"});
  for (const auto& p : preds) CHECK(p == "Only");
  CHECK_THROWS_MATCHES(predict_baseline(model, {}), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return e.code() == ErrorCode::EmptyInput;
                       }));
  CHECK_THROWS_AS(train_ngram_baseline({}, c, Task::Function), Error);
}
