#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cca/checkpoint.hpp"
#include "cca/corpus.hpp"
#include "cca/encoder.hpp"
#include "cca/error.hpp"
#include "cca/metrics.hpp"
#include "cca/optimizer.hpp"
#include "cca/rng.hpp"
#include "cca/tokenizer.hpp"

namespace cca {

enum class SelectionMetric { MacroF1, Accuracy };

inline std::string to_string(SelectionMetric m) {
  return m == SelectionMetric::MacroF1 ? "macro_f1" : "accuracy";
}

inline SelectionMetric parse_selection_metric(const std::string& s) {
  if (s == "macro_f1") return SelectionMetric::MacroF1;
  if (s == "accuracy") return SelectionMetric::Accuracy;
  raise(ErrorCode::InvalidConfig, "unknown selection metric '" + s + "'");
}

/// Fine-tuning recipe. Defaults are the published ones: Adam(0.9, 0.999),
/// lr 2e-5, batch 32, at most 16 epochs, dropout 0.1, best-on-validation
/// model selection.
struct TrainConfig {
  double learning_rate = 2e-5;
  int batch_size = 32;
  int max_epochs = 16;
  double dropout = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool freeze_encoder = false;
  bool class_weighted_loss = false; // off by default
  SelectionMetric selection_metric = SelectionMetric::MacroF1;
  bool track_train_accuracy = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate <= 0.0 || batch_size < 1 || max_epochs < 1)
      raise(ErrorCode::InvalidConfig, "learning_rate/batch_size/max_epochs must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0))
      raise(ErrorCode::InvalidConfig, "dropout must lie in [0, 1)");
  }

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"max_epochs", max_epochs},
            {"dropout", dropout},
            {"adam_beta1", adam_beta1},
            {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},
            {"freeze_encoder", freeze_encoder},
            {"class_weighted_loss", class_weighted_loss},
            {"selection_metric", to_string(selection_metric)},
            {"seed", seed}};
  }
};

/// Encoder plus one linear layer over the pooled state.
template <class T>
struct Classifier {
  Encoder<T> encoder;
  ParamStore<T> head; // head.weight [classes, dim], head.bias [classes]
  std::vector<std::string> labels;
  Task task = Task::Function;

  std::size_t n_classes() const { return labels.size(); }
  const std::vector<T>& head_w() const { return head.values[0]; }
  const std::vector<T>& head_b() const { return head.values[1]; }
};

template <class T>
Classifier<T> attach_head(Encoder<T> encoder, const LabelScheme& scheme,
                          std::uint64_t seed) {
  scheme.validate();
  Classifier<T> clf;
  clf.task = scheme.task;
  clf.labels = scheme.labels;
  const auto dim = static_cast<std::size_t>(encoder.config.output_dim());
  const std::size_t classes = scheme.labels.size();
  clf.encoder = std::move(encoder);
  clf.head.add("head.weight", {classes, dim});
  clf.head.add("head.bias", {classes});
  Rng rng(derive_seed(seed, {0x11ead}));
  const double limit = std::sqrt(6.0 / static_cast<double>(dim + classes));
  for (auto& v : clf.head.values[0]) v = static_cast<T>(rng.next_uniform(limit));
  return clf;
}

struct Prediction {
  std::string label;
  std::vector<double> probs; // aligned with classifier.labels
};

namespace detail {

template <class T>
void head_logits(const Classifier<T>& clf, const std::vector<T>& pooled,
                 std::size_t batch, std::vector<T>& logits) {
  const std::size_t dim = static_cast<std::size_t>(clf.encoder.config.output_dim());
  const std::size_t classes = clf.n_classes();
  logits.assign(batch * classes, T(0));
  const auto& w = clf.head_w();
  const auto& bias = clf.head_b();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < classes; ++c)
      logits[b * classes + c] =
          bias[c] + detail::dot(w.data() + c * dim, pooled.data() + b * dim, dim);
}

template <class T>
std::vector<double> softmax_row(const T* logits, std::size_t n) {
  T max_l = logits[0];
  for (std::size_t i = 1; i < n; ++i) max_l = std::max(max_l, logits[i]);
  std::vector<double> p(n);
  double denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(static_cast<double>(logits[i] - max_l));
    denom += p[i];
  }
  for (auto& v : p) v /= denom;
  return p;
}

} // namespace detail

/// Mean cross-entropy of the head over a batch, with gradients into the head
/// store and (unless frozen) the encoder. Dropout is applied to the pooled
/// vector in train mode.
template <class T>
T classification_loss(Classifier<T>& clf, const std::vector<TokenSeq>& seqs,
                      const std::vector<int>& label_idx, Mode mode,
                      std::uint64_t seed, double dropout_rate,
                      GradSet<T>* enc_grads, GradSet<T>* head_grads,
                      const std::vector<T>* class_weights = nullptr) {
  Forward<T> fwd = forward(clf.encoder, seqs, mode, seed);
  const std::size_t B = fwd.batch;
  const std::size_t dim = fwd.dim;
  const std::size_t classes = clf.n_classes();

  std::vector<T> pooled = fwd.pooled;
  std::vector<std::uint8_t> keep;
  detail::apply_dropout(pooled, keep,
                        mode == Mode::Train ? dropout_rate : 0.0,
                        derive_seed(seed, {0xd0d0}));

  std::vector<T> logits;
  detail::head_logits(clf, pooled, B, logits);

  double total = 0.0;
  double weight_total = 0.0;
  std::vector<T> dlogits(B * classes, T(0));
  std::vector<double> batch_weight(B, 1.0);
  for (std::size_t b = 0; b < B; ++b) {
    if (class_weights != nullptr)
      batch_weight[b] =
          static_cast<double>((*class_weights)[static_cast<std::size_t>(label_idx[b])]);
    weight_total += batch_weight[b];
  }
  for (std::size_t b = 0; b < B; ++b) {
    const T* row = logits.data() + b * classes;
    T max_l = row[0];
    for (std::size_t c = 1; c < classes; ++c) max_l = std::max(max_l, row[c]);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c)
      denom += std::exp(static_cast<double>(row[c] - max_l));
    const auto tv = static_cast<std::size_t>(label_idx[b]);
    const double log_p =
        static_cast<double>(row[tv] - max_l) - std::log(denom);
    total -= batch_weight[b] * log_p;
    if (enc_grads != nullptr || head_grads != nullptr) {
      const double scale = batch_weight[b] / weight_total;
      for (std::size_t c = 0; c < classes; ++c) {
        double p = std::exp(static_cast<double>(row[c] - max_l)) / denom;
        if (c == tv) p -= 1.0;
        dlogits[b * classes + c] = static_cast<T>(p * scale);
      }
    }
  }
  const T loss = static_cast<T>(total / weight_total);
  if (enc_grads == nullptr && head_grads == nullptr) return loss;

  // head backward
  std::vector<T> d_pooled(B * dim, T(0));
  const auto& w = clf.head_w();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < classes; ++c) {
      const T g = dlogits[b * classes + c];
      if (g == T(0)) continue;
      if (head_grads != nullptr) {
        T* dwrow = (*head_grads)[0].data() + c * dim;
        const T* x = pooled.data() + b * dim;
        for (std::size_t d = 0; d < dim; ++d) dwrow[d] += g * x[d];
        (*head_grads)[1][c] += g;
      }
      const T* wrow = w.data() + c * dim;
      T* dp = d_pooled.data() + b * dim;
      for (std::size_t d = 0; d < dim; ++d) dp[d] += g * wrow[d];
    }

  if (enc_grads != nullptr) {
    detail::dropout_backward(d_pooled, keep,
                             mode == Mode::Train ? dropout_rate : 0.0);
    std::vector<T> d_states(fwd.states.size(), T(0));
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t pos = fwd.pooled_position(b);
      for (std::size_t d = 0; d < dim; ++d)
        d_states[(b * fwd.seq + pos) * dim + d] = d_pooled[b * dim + d];
    }
    backward(clf.encoder, fwd, d_states, *enc_grads);
  }
  return loss;
}

/// Eval-mode predictions: softmax over head logits, argmax label with
/// lowest-index tie breaking.
template <class T>
std::vector<Prediction> predict(const Classifier<T>& clf,
                                const std::vector<std::string>& texts,
                                const Vocab& vocab, int batch_size = 32) {
  if (texts.empty()) raise(ErrorCode::EmptyInput, "no texts to classify");
  std::vector<Prediction> out;
  out.reserve(texts.size());
  const std::size_t classes = clf.n_classes();
  for (std::size_t start = 0; start < texts.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop =
        std::min(texts.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<TokenSeq> seqs;
    for (std::size_t i = start; i < stop; ++i)
      seqs.push_back(encode(vocab, texts[i], clf.encoder.config.max_len));
    Forward<T> fwd = forward(clf.encoder, seqs, Mode::Eval, 0);
    std::vector<T> logits;
    detail::head_logits(clf, fwd.pooled, fwd.batch, logits);
    for (std::size_t b = 0; b < fwd.batch; ++b) {
      Prediction p;
      p.probs = detail::softmax_row(logits.data() + b * classes, classes);
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (p.probs[c] > p.probs[best]) best = c;
      p.label = clf.labels[best];
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fine-tuning with best-on-validation selection
// ---------------------------------------------------------------------------

/// Index of the best epoch (0-based) under max-with-earliest-tie selection.
inline std::size_t select_best_epoch(const std::vector<double>& metric_series) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < metric_series.size(); ++i)
    if (metric_series[i] > metric_series[best]) best = i;
  return best;
}

struct FitResult {
  int best_epoch = 0; // 1-based, matching the epoch curves below
  double best_metric = 0.0;
  std::vector<double> train_loss;     // per epoch
  std::vector<double> valid_metric;   // per epoch (empty if no validation set)
  std::vector<double> train_accuracy; // per epoch, only when tracked
  int steps_run = 0;
};

namespace detail {

template <class T>
double eval_metric(Classifier<T>& clf, const std::vector<const CitationContext*>& recs,
                   const Vocab& vocab, SelectionMetric metric) {
  std::vector<std::string> texts, golds;
  for (const auto* r : recs) {
    texts.push_back(r->text);
    golds.push_back(*r->label(clf.task));
  }
  auto preds = predict(clf, texts, vocab);
  std::vector<std::string> pred_labels;
  for (auto& p : preds) pred_labels.push_back(p.label);
  LabelScheme scheme;
  scheme.task = clf.task;
  scheme.labels = clf.labels;
  MetricSet m = metrics(confusion(golds, pred_labels, scheme));
  return metric == SelectionMetric::MacroF1 ? m.macro_f1 : m.accuracy;
}

} // namespace detail

/// Mini-batch Adam fine-tuning. Runs up to max_epochs full passes in a
/// seed-shuffled order, evaluates the selection metric on the validation ids
/// after each epoch and leaves the classifier at the best epoch's weights
/// (earliest epoch wins ties). freeze_encoder restricts updates to the head.
template <class T>
FitResult finetune(Classifier<T>& clf, const std::vector<std::string>& train_ids,
                   const std::vector<std::string>& valid_ids, const Corpus& corpus,
                   const Vocab& vocab, const TrainConfig& config) {
  config.validate();
  if (train_ids.empty()) raise(ErrorCode::EmptyTrainSet, "no training records");
  {
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    for (const auto& id : valid_ids)
      if (train_set.count(id))
        raise(ErrorCode::InvalidConfig, "train and valid sets overlap",
              {{"id", id}});
  }

  std::unordered_map<std::string, const CitationContext*> by_id;
  for (const auto& r : corpus.records) by_id[r.id] = &r;
  auto resolve = [&](const std::vector<std::string>& ids) {
    std::vector<const CitationContext*> recs;
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end())
        raise(ErrorCode::LabelMismatch, "unknown record id '" + id + "'");
      const auto& lab = it->second->label(clf.task);
      if (!lab)
        raise(ErrorCode::LabelMismatch, "record lacks a " + to_string(clf.task) +
                                            " label", {{"id", id}});
      if (std::find(clf.labels.begin(), clf.labels.end(), *lab) == clf.labels.end())
        raise(ErrorCode::LabelMismatch, "label '" + *lab + "' unknown to classifier",
              {{"id", id}});
      recs.push_back(it->second);
    }
    return recs;
  };
  auto train_recs = resolve(train_ids);
  auto valid_recs = resolve(valid_ids);

  // pre-encode and pre-index everything once
  std::vector<TokenSeq> train_seqs;
  std::vector<int> train_labels;
  for (const auto* r : train_recs) {
    train_seqs.push_back(encode(vocab, r->text, clf.encoder.config.max_len));
    train_labels.push_back(static_cast<int>(
        std::find(clf.labels.begin(), clf.labels.end(), *r->label(clf.task)) -
        clf.labels.begin()));
  }

  std::optional<std::vector<T>> class_weights;
  if (config.class_weighted_loss) {
    std::vector<std::size_t> counts(clf.n_classes(), 0);
    for (int li : train_labels) ++counts[static_cast<std::size_t>(li)];
    std::vector<T> w(clf.n_classes(), T(1));
    for (std::size_t c = 0; c < w.size(); ++c)
      w[c] = counts[c] == 0
                 ? T(0)
                 : static_cast<T>(static_cast<double>(train_labels.size()) /
                                  (static_cast<double>(clf.n_classes()) *
                                   static_cast<double>(counts[c])));
    class_weights = std::move(w);
  }

  AdamConfig adam_cfg{config.learning_rate, config.adam_beta1, config.adam_beta2,
                      config.adam_eps};
  Adam<T> enc_adam(clf.encoder.params, adam_cfg);
  Adam<T> head_adam(clf.head, adam_cfg);

  FitResult result;
  ParamStore<T> best_enc = clf.encoder.params;
  ParamStore<T> best_head = clf.head;
  double best_metric = -1.0;
  int best_epoch = 0;

  std::vector<std::size_t> schedule(train_seqs.size());
  std::iota(schedule.begin(), schedule.end(), 0);
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, {10, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(schedule);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < schedule.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(
          schedule.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<TokenSeq> seqs;
      std::vector<int> labels;
      for (std::size_t i = start; i < stop; ++i) {
        seqs.push_back(train_seqs[schedule[i]]);
        labels.push_back(train_labels[schedule[i]]);
      }
      GradSet<T> enc_grads = zero_grads(clf.encoder.params);
      GradSet<T> head_grads = zero_grads(clf.head);
      const std::uint64_t step_seed = derive_seed(
          config.seed, {11, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(start)});
      T loss = classification_loss(
          clf, seqs, labels, Mode::Train, step_seed, config.dropout,
          config.freeze_encoder ? nullptr : &enc_grads, &head_grads,
          class_weights ? &*class_weights : nullptr);
      if (!std::isfinite(static_cast<double>(loss)))
        raise(ErrorCode::DivergedLoss, "non-finite loss",
              {{"epoch", std::to_string(epoch)},
               {"step", std::to_string(result.steps_run)}});
      if (!config.freeze_encoder) enc_adam.step(clf.encoder.params, enc_grads);
      head_adam.step(clf.head, head_grads);
      epoch_loss += static_cast<double>(loss);
      ++batches;
      ++result.steps_run;
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(batches));

    if (config.track_train_accuracy) {
      double acc = detail::eval_metric(clf, train_recs, vocab,
                                       SelectionMetric::Accuracy);
      result.train_accuracy.push_back(acc);
    }

    if (!valid_recs.empty()) {
      double metric =
          detail::eval_metric(clf, valid_recs, vocab, config.selection_metric);
      result.valid_metric.push_back(metric);
      if (metric > best_metric) {
        best_metric = metric;
        best_epoch = epoch;
        best_enc = clf.encoder.params;
        best_head = clf.head;
      }
    } else {
      // no validation data: keep the final epoch
      best_epoch = epoch;
      best_enc = clf.encoder.params;
      best_head = clf.head;
    }
  }

  clf.encoder.params = std::move(best_enc);
  clf.head = std::move(best_head);
  result.best_epoch = best_epoch;
  result.best_metric = best_metric < 0.0 ? 0.0 : best_metric;
  return result;
}

// ---------------------------------------------------------------------------
// Classifier persistence: encoder blobs plus the head in one container.
// ---------------------------------------------------------------------------

inline void save_classifier(const Classifier<float>& clf,
                            const std::filesystem::path& path,
                            const nlohmann::json& provenance = {}) {
  ParamStore<float> all = clf.encoder.params;
  for (std::size_t i = 0; i < clf.head.names.size(); ++i) {
    all.names.push_back(clf.head.names[i]);
    all.shapes.push_back(clf.head.shapes[i]);
    all.values.push_back(clf.head.values[i]);
  }
  nlohmann::json extra = {{"labels", clf.labels}, {"task", to_string(clf.task)}};
  save_checkpoint_store(all, clf.encoder.config, "classifier", provenance, extra,
                        path);
}

inline Classifier<float> load_classifier(const std::filesystem::path& path) {
  LoadedStore raw = load_checkpoint_store(path);
  if (raw.header.value("kind", "") != "classifier")
    raise(ErrorCode::CorruptBlob, "checkpoint kind is not 'classifier'");
  EncoderConfig config = config_from_json(raw.header.at("config"));
  auto labels = raw.header.at("labels").get<std::vector<std::string>>();
  if (labels.empty()) raise(ErrorCode::CorruptBlob, "classifier without labels");
  auto table = shape_table(config);
  const auto dim = static_cast<std::size_t>(config.output_dim());
  table.push_back({"head.weight", {labels.size(), dim}, InitKind::Linear});
  table.push_back({"head.bias", {labels.size()}, InitKind::Zero});
  detail::check_against_table(raw.store, table);

  Classifier<float> clf;
  clf.encoder = build_encoder<float>(config, 0);
  clf.labels = labels;
  clf.task = parse_task(raw.header.at("task").get<std::string>());
  for (std::size_t i = 0; i < clf.encoder.params.names.size(); ++i) {
    int j = raw.store.find(clf.encoder.params.names[i]);
    clf.encoder.params.values[i] = raw.store.values[static_cast<std::size_t>(j)];
  }
  clf.head.add("head.weight", {labels.size(), dim});
  clf.head.add("head.bias", {labels.size()});
  clf.head.values[0] = raw.store.values[static_cast<std::size_t>(raw.store.find("head.weight"))];
  clf.head.values[1] = raw.store.values[static_cast<std::size_t>(raw.store.find("head.bias"))];
  return clf;
}

// ---------------------------------------------------------------------------
// Bag-of-ngram linear baseline
// ---------------------------------------------------------------------------

struct BaselineConfig {
  int max_iterations = 200;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

/// Multinomial logistic regression over L2-normalized 1-2 gram counts,
/// trained full-batch. A deterministic comparison anchor for the encoders.
struct BaselineModel {
  std::vector<std::string> labels;
  std::unordered_map<std::string, std::size_t> feature_index;
  std::vector<double> weights; // classes x features
  std::vector<double> bias;

  static std::vector<std::string> ngrams(const std::string& text) {
    auto words = split_words(to_lower_ascii(normalize_whitespace(text)));
    std::vector<std::string> feats = words;
    for (std::size_t i = 0; i + 1 < words.size(); ++i)
      feats.push_back(words[i] + "\x1f" + words[i + 1]);
    return feats;
  }

  std::vector<std::pair<std::size_t, double>> featurize(const std::string& text) const {
    std::map<std::size_t, double> counts;
    for (const auto& g : ngrams(text)) {
      auto it = feature_index.find(g);
      if (it != feature_index.end()) counts[it->second] += 1.0;
    }
    double norm = 0.0;
    for (const auto& [i, v] : counts) norm += v * v;
    norm = norm > 0.0 ? std::sqrt(norm) : 1.0;
    std::vector<std::pair<std::size_t, double>> out;
    out.reserve(counts.size());
    for (const auto& [i, v] : counts) out.push_back({i, v / norm});
    return out;
  }

  std::size_t predict_index(const std::string& text) const {
    auto feats = featurize(text);
    std::size_t best = 0;
    double best_score = -1e300;
    const std::size_t n_feat = feature_index.size();
    for (std::size_t c = 0; c < labels.size(); ++c) {
      double score = bias[c];
      for (const auto& [i, v] : feats) score += weights[c * n_feat + i] * v;
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    return best;
  }
};

inline BaselineModel train_ngram_baseline(const std::vector<std::string>& train_ids,
                                          const Corpus& corpus, Task task,
                                          const BaselineConfig& config = {}) {
  if (train_ids.empty()) raise(ErrorCode::EmptyTrainSet, "no training records");
  std::unordered_map<std::string, const CitationContext*> by_id;
  for (const auto& r : corpus.records) by_id[r.id] = &r;

  BaselineModel model;
  std::map<std::string, std::size_t> label_index;
  std::vector<std::string> texts;
  std::vector<std::string> golds;
  for (const auto& id : train_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      raise(ErrorCode::LabelMismatch, "unknown record id '" + id + "'");
    const auto& lab = it->second->label(task);
    if (!lab)
      raise(ErrorCode::LabelMismatch, "record lacks a label", {{"id", id}});
    texts.push_back(it->second->text);
    golds.push_back(*lab);
    label_index.emplace(*lab, 0);
  }
  for (auto& [lab, idx] : label_index) {
    idx = model.labels.size();
    model.labels.push_back(lab);
  }

  // feature vocabulary in first-seen order
  for (const auto& text : texts)
    for (const auto& g : BaselineModel::ngrams(text))
      model.feature_index.emplace(g, model.feature_index.size());

  const std::size_t n_feat = model.feature_index.size();
  const std::size_t n_class = model.labels.size();
  const std::size_t n = texts.size();
  model.weights.assign(n_class * n_feat, 0.0);
  model.bias.assign(n_class, 0.0);

  std::vector<std::vector<std::pair<std::size_t, double>>> feats(n);
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    feats[i] = model.featurize(texts[i]);
    y[i] = label_index[golds[i]];
  }

  std::vector<double> gw(n_class * n_feat), gb(n_class), logits(n_class);
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < n_class; ++c) {
        double s = model.bias[c];
        for (const auto& [fi, v] : feats[i]) s += model.weights[c * n_feat + fi] * v;
        logits[c] = s;
      }
      double max_l = *std::max_element(logits.begin(), logits.end());
      double denom = 0.0;
      for (std::size_t c = 0; c < n_class; ++c) {
        logits[c] = std::exp(logits[c] - max_l);
        denom += logits[c];
      }
      for (std::size_t c = 0; c < n_class; ++c) {
        double p = logits[c] / denom - (c == y[i] ? 1.0 : 0.0);
        gb[c] += p;
        for (const auto& [fi, v] : feats[i]) gw[c * n_feat + fi] += p * v;
      }
    }
    const double scale = config.learning_rate / static_cast<double>(n);
    for (std::size_t j = 0; j < gw.size(); ++j)
      model.weights[j] -= scale * (gw[j] + config.l2 * model.weights[j]);
    for (std::size_t c = 0; c < n_class; ++c) model.bias[c] -= scale * gb[c];
  }
  return model;
}

inline std::vector<std::string> predict_baseline(const BaselineModel& model,
                                                 const std::vector<std::string>& texts) {
  if (texts.empty()) raise(ErrorCode::EmptyInput, "no texts to classify");
  std::vector<std::string> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(model.labels[model.predict_index(t)]);
  return out;
}

} // namespace cca
