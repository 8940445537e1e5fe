#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cca/classify.hpp"
#include "cca/corpus.hpp"
#include "cca/folds.hpp"
#include "cca/metrics.hpp"
#include "cca/presets.hpp"
#include "cca/pretrain.hpp"

namespace cca {

/// What to train and evaluate in each fold.
struct ModelSpec {
  enum class Kind { Preset, Checkpoint, NgramBaseline };
  Kind kind = Kind::Preset;
  std::string preset = "bert-mini";    // Kind::Preset
  std::string checkpoint_path;         // Kind::Checkpoint
  std::string vocab_path;              // required with Kind::Checkpoint
  std::size_t vocab_size = 512;        // per-fold vocabulary budget
  bool further_pretraining = false;    // optional per-fold pre-training stage
  PretrainConfig pretrain;
  TrainConfig train;
  BaselineConfig baseline;

  nlohmann::json to_json() const {
    nlohmann::json j;
    switch (kind) {
      case Kind::Preset: j["kind"] = "preset"; j["preset"] = preset; break;
      case Kind::Checkpoint:
        j["kind"] = "checkpoint";
        j["checkpoint_path"] = checkpoint_path;
        j["vocab_path"] = vocab_path;
        break;
      case Kind::NgramBaseline: j["kind"] = "ngram-baseline"; break;
    }
    if (kind != Kind::NgramBaseline) {
      j["vocab_size"] = vocab_size;
      j["further_pretraining"] = further_pretraining;
      if (further_pretraining)
        j["pretrain"] = {{"objective", to_string(pretrain.objective)},
                         {"mask_rate", pretrain.mask_rate},
                         {"steps", pretrain.steps},
                         {"batch_size", pretrain.batch_size},
                         {"learning_rate", pretrain.learning_rate}};
      j["train"] = train.to_json();
    } else {
      j["baseline"] = {{"max_iterations", baseline.max_iterations},
                       {"learning_rate", baseline.learning_rate},
                       {"l2", baseline.l2}};
    }
    return j;
  }
};

struct FoldResult {
  int fold = 0;
  bool ok = false;
  std::string error; // failure marker when !ok
  MetricSet metric_set;
  ConfusionMatrix confusion_matrix;
  int best_epoch = 0;
  int steps_run = 0;
  std::size_t test_size = 0;
};

struct AggregateStat {
  double mean = 0.0;
  double stddev = 0.0;
};

struct CVReport {
  nlohmann::json config; // full run configuration snapshot
  int k = 10;
  std::uint64_t seed = 0;
  std::vector<FoldResult> folds;
  AggregateStat macro_f1, micro_f1, accuracy;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config;
    j["k"] = k;
    j["seed"] = seed;
    j["warnings"] = warnings;
    j["folds"] = nlohmann::json::array();
    for (const auto& f : folds) {
      nlohmann::json fj;
      fj["fold"] = f.fold;
      fj["ok"] = f.ok;
      if (!f.ok) fj["error"] = f.error;
      fj["test_size"] = f.test_size;
      if (f.ok) {
        fj["metrics"] = f.metric_set.to_json();
        fj["confusion"] = f.confusion_matrix.to_json();
        fj["best_epoch"] = f.best_epoch;
        fj["steps_run"] = f.steps_run;
      }
      j["folds"].push_back(fj);
    }
    auto stat = [](const AggregateStat& s) {
      return nlohmann::json{{"mean", s.mean}, {"stddev", s.stddev}};
    };
    j["aggregate"] = {{"macro_f1", stat(macro_f1)},
                      {"micro_f1", stat(micro_f1)},
                      {"accuracy", stat(accuracy)}};
    j["note"] =
        "macro_f1 is the headline metric; micro_f1 equals accuracy for "
        "single-label classification";
    return j;
  }
};

namespace detail {

inline AggregateStat aggregate(const std::vector<double>& xs) {
  AggregateStat s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

inline std::vector<std::string> texts_of(
    const Corpus& corpus, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const CitationContext*> by_id;
  for (const auto& r : corpus.records) by_id[r.id] = &r;
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(by_id.at(id)->text);
  return out;
}

inline std::vector<std::string> golds_of(const Corpus& corpus,
                                         const std::vector<std::string>& ids,
                                         Task task) {
  std::unordered_map<std::string, const CitationContext*> by_id;
  for (const auto& r : corpus.records) by_id[r.id] = &r;
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto& lab = by_id.at(id)->label(task);
    if (!lab) raise(ErrorCode::UnlabeledCorpus, "record lacks a label", {{"id", id}});
    out.push_back(*lab);
  }
  return out;
}

inline FoldResult run_fold(const Corpus& corpus, Task task,
                           const LabelScheme& scheme, const ModelSpec& spec,
                           const FoldPlan& plan, int fold, std::uint64_t seed) {
  FoldResult result;
  result.fold = fold;
  const std::uint64_t fold_seed = derive_seed(seed, {static_cast<std::uint64_t>(fold)});
  Split split = split_train_valid(corpus, plan, fold, 1.0 / 9.0,
                                  derive_seed(fold_seed, {1}));
  result.test_size = split.test_ids.size();
  auto test_texts = texts_of(corpus, split.test_ids);
  auto test_golds = golds_of(corpus, split.test_ids, task);

  std::vector<std::string> pred_labels;
  if (spec.kind == ModelSpec::Kind::NgramBaseline) {
    // the baseline has no model-selection stage, so it trains on train+valid
    std::vector<std::string> tv = split.train_ids;
    tv.insert(tv.end(), split.valid_ids.begin(), split.valid_ids.end());
    BaselineConfig bc = spec.baseline;
    bc.seed = derive_seed(fold_seed, {2});
    BaselineModel model = train_ngram_baseline(tv, corpus, task, bc);
    pred_labels = predict_baseline(model, test_texts);
  } else {
    Vocab vocab;
    Encoder<float> encoder;
    if (spec.kind == ModelSpec::Kind::Checkpoint) {
      vocab = load_vocab(spec.vocab_path);
      encoder = load_checkpoint(spec.checkpoint_path).encoder;
    } else {
      auto tv_texts = texts_of(corpus, split.train_ids);
      auto valid_texts = texts_of(corpus, split.valid_ids);
      tv_texts.insert(tv_texts.end(), valid_texts.begin(), valid_texts.end());
      // respect the floor of specials + alphabet
      std::size_t want = spec.vocab_size;
      try {
        vocab = train_vocab(tv_texts, want, derive_seed(fold_seed, {3}));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::VocabTooSmall) throw;
        vocab = train_vocab(tv_texts, 1 << 16, derive_seed(fold_seed, {3}));
      }
      const Preset& preset = find_preset(spec.preset);
      EncoderConfig config = preset.config;
      config.vocab_size = static_cast<int>(vocab.size());
      config.dropout = spec.train.dropout;
      encoder = build_encoder<float>(config, derive_seed(fold_seed, {4}));
      if (spec.further_pretraining) {
        PretrainConfig pc = spec.pretrain;
        pc.seed = derive_seed(fold_seed, {5});
        // unlabeled text = label-stripped training-fold texts (no leakage)
        auto train_texts = texts_of(corpus, split.train_ids);
        further_pretrain(encoder, train_texts, vocab, pc);
      }
    }
    Classifier<float> clf =
        attach_head(std::move(encoder), scheme, derive_seed(fold_seed, {6}));
    TrainConfig tc = spec.train;
    tc.seed = derive_seed(fold_seed, {7});
    FitResult fit = finetune(clf, split.train_ids, split.valid_ids, corpus, vocab, tc);
    result.best_epoch = fit.best_epoch;
    result.steps_run = fit.steps_run;
    auto preds = predict(clf, test_texts, vocab);
    for (auto& p : preds) pred_labels.push_back(p.label);
  }

  result.confusion_matrix = confusion(test_golds, pred_labels, scheme);
  result.metric_set = metrics(result.confusion_matrix);
  result.ok = true;
  return result;
}

} // namespace detail

/// Stratified k-fold cross-validation of one model spec. Per fold: an 8:1:1
/// train/valid/test split, optional further pre-training on the train-fold
/// text, fine-tuning with best-on-validation selection, evaluation on the
/// held-out fold. Each fold derives its own seed from (seed, fold), so
/// parallel execution (jobs > 1) produces the identical report.
inline CVReport cross_validate(const Corpus& corpus, Task task,
                               const ModelSpec& spec, int k = 10,
                               std::uint64_t seed = 0, int jobs = 1) {
  const LabelScheme* scheme = corpus.scheme_for(task);
  if (scheme == nullptr)
    raise(ErrorCode::UnlabeledCorpus,
          "corpus has no " + to_string(task) + " scheme");
  FoldPlan plan = stratified_kfold(corpus, task, k, seed);

  CVReport report;
  report.k = k;
  report.seed = seed;
  report.warnings = plan.warnings;
  report.config = {{"dataset", to_string(corpus.dataset)},
                   {"task", to_string(task)},
                   {"k", k},
                   {"seed", seed},
                   {"model", spec.to_json()}};
  report.folds.resize(static_cast<std::size_t>(k));

  auto work = [&](int fold) {
    try {
      report.folds[static_cast<std::size_t>(fold)] =
          detail::run_fold(corpus, task, *scheme, spec, plan, fold, seed);
    } catch (const Error& e) {
      FoldResult fr;
      fr.fold = fold;
      fr.ok = false;
      fr.error = e.what();
      report.folds[static_cast<std::size_t>(fold)] = fr;
    }
  };

  if (jobs <= 1) {
    for (int fold = 0; fold < k; ++fold) work(fold);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int n_threads = std::min(jobs, k);
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&]() {
        for (int fold = next.fetch_add(1); fold < k; fold = next.fetch_add(1))
          work(fold);
      });
    for (auto& th : pool) th.join();
  }

  std::vector<double> macro, micro, acc;
  for (const auto& f : report.folds) {
    if (!f.ok) continue;
    macro.push_back(f.metric_set.macro_f1);
    micro.push_back(f.metric_set.micro_f1);
    acc.push_back(f.metric_set.accuracy);
  }
  report.macro_f1 = detail::aggregate(macro);
  report.micro_f1 = detail::aggregate(micro);
  report.accuracy = detail::aggregate(acc);
  return report;
}

// ---------------------------------------------------------------------------
// Published reference results (shipped as data/reference_results.json)
// ---------------------------------------------------------------------------

inline nlohmann::json load_reference(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  return j;
}

/// Table key for a dataset as the reference file spells it.
inline std::string reference_dataset_key(Dataset d) {
  return d == Dataset::TKDE ? "TKDE2019" : to_string(d);
}

/// Published F1 (percent) for one system row, dataset and task.
inline double reference_value(const nlohmann::json& reference,
                              const std::string& row_key, Dataset dataset,
                              Task task) {
  const std::string dkey = reference_dataset_key(dataset);
  const auto& tasks = reference.at("tasks");
  if (!tasks.contains(to_string(task)))
    raise(ErrorCode::UnknownDatasetKey, "no reference table for task " + to_string(task));
  for (const auto& row : tasks.at(to_string(task)).at("rows")) {
    if (row.at("key").get<std::string>() != row_key) continue;
    const auto& values = row.at("values");
    if (!values.contains(dkey) || values.at(dkey).is_null())
      raise(ErrorCode::UnknownDatasetKey,
            "no published value for " + row_key + " on " + dkey);
    return values.at(dkey).get<double>();
  }
  raise(ErrorCode::UnknownDatasetKey, "unknown reference row '" + row_key + "'");
}

inline const char* kScaleBanner =
    "NOTE: desk-scale models trained from scratch by this toolkit are NOT "
    "expected to match the published full-scale results; the reference "
    "numbers come from fine-tuning large pre-trained encoders.";

/// Side-by-side Markdown report: our cross-validated scores next to the
/// published table for the same dataset and task.
inline std::string compare_report(const CVReport& report,
                                  const nlohmann::json& reference) {
  const std::string task_name = report.config.at("task").get<std::string>();
  const Dataset dataset =
      parse_dataset(report.config.at("dataset").get<std::string>());
  const std::string dkey = reference_dataset_key(dataset);
  const auto& tasks = reference.at("tasks");
  if (!tasks.contains(task_name))
    raise(ErrorCode::UnknownDatasetKey, "no reference table for task " + task_name);
  const auto& table = tasks.at(task_name);
  bool dataset_known = false;
  for (const auto& d : table.at("datasets"))
    if (d.get<std::string>() == dkey) dataset_known = true;
  if (!dataset_known)
    raise(ErrorCode::UnknownDatasetKey,
          "reference table for " + task_name + " has no dataset " + dkey);

  std::ostringstream os;
  os << "# Citation " << task_name << " identification on " << dkey << "\n\n";
  os << "> " << kScaleBanner << "\n\n";
  os << "## This run (" << report.k << "-fold cross-validation, seed "
     << report.seed << ")\n\n";
  os << "| metric | mean | stddev |\n|---|---|---|\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "| macro-F1 | %.4f | %.4f |\n",
                report.macro_f1.mean, report.macro_f1.stddev);
  os << buf;
  std::snprintf(buf, sizeof(buf), "| micro-F1 | %.4f | %.4f |\n",
                report.micro_f1.mean, report.micro_f1.stddev);
  os << buf;
  std::snprintf(buf, sizeof(buf), "| accuracy | %.4f | %.4f |\n",
                report.accuracy.mean, report.accuracy.stddev);
  os << buf;
  os << "\nmacro-F1 is the headline number; the published table reports "
        "\"F1\" without specifying the averaging convention.\n";
  os << "\n## Published results (" << dkey << ", F1 %)\n\n";
  os << "| system | F1 |\n|---|---|\n";
  for (const auto& row : table.at("rows")) {
    const auto& values = row.at("values");
    if (!values.contains(dkey) || values.at(dkey).is_null()) continue;
    std::snprintf(buf, sizeof(buf), "| %s | %.2f |\n",
                  row.at("system").get<std::string>().c_str(),
                  values.at(dkey).get<double>());
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "| this run (desk scale, macro-F1) | %.2f |\n",
                report.macro_f1.mean * 100.0);
  os << buf;
  return os.str();
}

} // namespace cca
