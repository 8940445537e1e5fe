#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cca/checkpoint.hpp"
#include "cca/encoder.hpp"
#include "cca/error.hpp"
#include "cca/optimizer.hpp"
#include "cca/rng.hpp"
#include "cca/tokenizer.hpp"

namespace cca {

enum class Objective { Causal, Masked, Permutation };

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::Causal: return "causal";
    case Objective::Masked: return "masked";
    case Objective::Permutation: return "permutation";
  }
  return "?";
}

inline Objective parse_objective(const std::string& s) {
  if (s == "causal") return Objective::Causal;
  if (s == "masked") return Objective::Masked;
  if (s == "permutation") return Objective::Permutation;
  raise(ErrorCode::InvalidConfig, "unknown objective '" + s + "'");
}

struct PretrainConfig {
  Objective objective = Objective::Masked;
  double mask_rate = 0.15; // masked objective only
  int steps = 1;
  int batch_size = 32;
  double learning_rate = 2e-5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(mask_rate > 0.0 && mask_rate < 1.0))
      raise(ErrorCode::InvalidConfig, "mask_rate must lie in (0, 1)");
    if (steps < 0) raise(ErrorCode::InvalidConfig, "steps must be >= 0");
    if (batch_size < 1) raise(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Token corruption for the masked objective
// ---------------------------------------------------------------------------

enum class Replacement { Mask, RandomToken, Keep };

struct MaskingPlan {
  std::vector<std::size_t> positions;       // indices into the sequence
  std::vector<Replacement> replacement;     // per position
  std::vector<std::int32_t> targets;        // original ids at positions
};

/// Select ~mask_rate of the real (non-special) tokens and corrupt them with
/// the 80/10/10 MASK/random/keep recipe. Pure function of (seq, rate, seed).
inline std::pair<TokenSeq, MaskingPlan> mask_tokens(const TokenSeq& seq,
                                                    double mask_rate,
                                                    std::uint64_t seed,
                                                    std::int32_t vocab_size) {
  if (!(mask_rate >= 0.0 && mask_rate < 1.0))
    raise(ErrorCode::InvalidConfig, "mask_rate must lie in [0, 1)");
  bool any_real = false;
  for (std::size_t t = 0; t < seq.ids.size(); ++t)
    if (seq.attention_mask[t] && !is_special_id(seq.ids[t])) any_real = true;
  if (!any_real) raise(ErrorCode::NothingToMask, "sequence has no maskable token");
  if (vocab_size <= kNumSpecials)
    raise(ErrorCode::InvalidConfig, "vocabulary has no non-special tokens");

  TokenSeq corrupted = seq;
  MaskingPlan plan;
  Rng rng(seed);
  for (std::size_t t = 0; t < seq.ids.size(); ++t) {
    if (!seq.attention_mask[t] || is_special_id(seq.ids[t])) continue;
    if (rng.next_real() >= mask_rate) continue;
    plan.positions.push_back(t);
    plan.targets.push_back(seq.ids[t]);
    const double u = rng.next_real();
    if (u < 0.8) {
      plan.replacement.push_back(Replacement::Mask);
      corrupted.ids[t] = kMaskId;
    } else if (u < 0.9) {
      plan.replacement.push_back(Replacement::RandomToken);
      corrupted.ids[t] = kNumSpecials + static_cast<std::int32_t>(rng.next_below(
                             static_cast<std::uint64_t>(vocab_size - kNumSpecials)));
    } else {
      plan.replacement.push_back(Replacement::Keep);
    }
  }
  return {std::move(corrupted), std::move(plan)};
}

// ---------------------------------------------------------------------------
// Factorization orders for the permutation objective
// ---------------------------------------------------------------------------

struct PermutationOrder {
  std::vector<std::size_t> order; // permutation of the real-token positions
};

inline std::vector<std::size_t> real_positions(const TokenSeq& seq) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < seq.ids.size(); ++t)
    if (seq.attention_mask[t] && !is_special_id(seq.ids[t])) out.push_back(t);
  return out;
}

inline PermutationOrder identity_order(const TokenSeq& seq) {
  return {real_positions(seq)};
}

inline PermutationOrder sample_order(const TokenSeq& seq, std::uint64_t seed) {
  PermutationOrder o{real_positions(seq)};
  Rng rng(seed);
  rng.shuffle(o.order);
  return o;
}

inline void validate_order(const PermutationOrder& o, const TokenSeq& seq) {
  auto real = real_positions(seq);
  if (o.order.size() != real.size())
    raise(ErrorCode::InvalidPermutation,
          "order covers " + std::to_string(o.order.size()) + " positions, expected " +
              std::to_string(real.size()));
  std::set<std::size_t> want(real.begin(), real.end());
  std::set<std::size_t> got(o.order.begin(), o.order.end());
  if (got.size() != o.order.size())
    raise(ErrorCode::InvalidPermutation, "order contains a repeated index");
  if (got != want)
    raise(ErrorCode::InvalidPermutation, "order is not over the real-token positions");
}

// ---------------------------------------------------------------------------
// LM losses. Logits are tied to the token embedding: logit_v = E_v . h + b_v,
// which is why the recurrent stack narrows its last layer to embed_size.
// ---------------------------------------------------------------------------

namespace detail {

// One prediction slot: read the state at `state_pos`, optionally add the
// query-position embedding of `target_pos`, score against the target id.
struct PredictionSlot {
  std::size_t batch_index;
  std::size_t state_pos;
  std::size_t target_pos; // used for the qpos signal (transformer AR losses)
  std::int32_t target;
  bool use_qpos;
};

/// Mean cross-entropy over slots plus (optionally) parameter gradients via
/// the tied LM head and the encoder backward pass.
template <class T>
T lm_loss_from_slots(const Encoder<T>& enc, const Forward<T>& fwd,
                     const std::vector<PredictionSlot>& slots,
                     GradSet<T>* grads) {
  if (slots.empty()) raise(ErrorCode::EmptyPlan, "no prediction targets");
  const std::size_t D = fwd.dim;
  const std::size_t S = fwd.seq;
  const auto V = static_cast<std::size_t>(enc.config.vocab_size);
  const auto& emb = enc.p(enc.tok_emb);
  const auto& lmb = enc.p(enc.lm_bias);
  const bool has_qpos = enc.config.family == EncoderFamily::Transformer;
  const T* qpos = has_qpos ? enc.p(enc.qpos_emb).data() : nullptr;

  std::vector<T> d_states;
  if (grads != nullptr) d_states.assign(fwd.states.size(), T(0));

  const T inv_n = T(1) / T(slots.size());
  std::vector<T> logits(V), probs(V), h(D);
  double total = 0.0;
  for (const auto& slot : slots) {
    const T* state = fwd.states.data() + (slot.batch_index * S + slot.state_pos) * D;
    for (std::size_t d = 0; d < D; ++d) h[d] = state[d];
    if (slot.use_qpos && has_qpos) {
      const T* qp = qpos + slot.target_pos * D;
      for (std::size_t d = 0; d < D; ++d) h[d] += qp[d];
    }
    T max_l = -std::numeric_limits<T>::infinity();
    for (std::size_t v = 0; v < V; ++v) {
      const T acc = lmb[v] + detail::dot(emb.data() + v * D, h.data(), D);
      logits[v] = acc;
      max_l = std::max(max_l, acc);
    }
    T denom = T(0);
    for (std::size_t v = 0; v < V; ++v) {
      probs[v] = std::exp(logits[v] - max_l);
      denom += probs[v];
    }
    const auto tv = static_cast<std::size_t>(slot.target);
    const T log_p = logits[tv] - max_l - std::log(denom);
    total -= static_cast<double>(log_p);

    if (grads != nullptr) {
      auto& d_emb = (*grads)[enc.tok_emb];
      auto& d_lmb = (*grads)[enc.lm_bias];
      T* dh_out = d_states.data() + (slot.batch_index * S + slot.state_pos) * D;
      T* d_qp = nullptr;
      if (slot.use_qpos && has_qpos)
        d_qp = (*grads)[enc.qpos_emb].data() + slot.target_pos * D;
      for (std::size_t v = 0; v < V; ++v) {
        T dl = probs[v] / denom;
        if (v == tv) dl -= T(1);
        dl *= inv_n;
        if (dl == T(0)) continue;
        d_lmb[v] += dl;
        const T* ev = emb.data() + v * D;
        T* dev = d_emb.data() + v * D;
        // h = state (+ qpos), so state and qpos both receive dl * E_v
        axpy(dl, h.data(), dev, D);
        axpy(dl, ev, dh_out, D);
        if (d_qp != nullptr) axpy(dl, ev, d_qp, D);
      }
    }
  }
  if (grads != nullptr) backward(enc, fwd, d_states, *grads);
  return static_cast<T>(total / static_cast<double>(slots.size()));
}

} // namespace detail

/// Mean cross-entropy over the corrupted positions of a masked batch.
template <class T>
T masked_lm_loss(const Encoder<T>& enc, const std::vector<TokenSeq>& corrupted,
                 const std::vector<MaskingPlan>& plans, Mode mode = Mode::Train,
                 std::uint64_t seed = 0, GradSet<T>* grads = nullptr) {
  if (corrupted.size() != plans.size())
    raise(ErrorCode::ShapeMismatch, "plans do not align with batch");
  Forward<T> fwd = forward(enc, corrupted, mode, seed);
  std::vector<detail::PredictionSlot> slots;
  for (std::size_t b = 0; b < corrupted.size(); ++b)
    for (std::size_t i = 0; i < plans[b].positions.size(); ++i) {
      const std::size_t p = plans[b].positions[i];
      if (p >= fwd.seq)
        raise(ErrorCode::ShapeMismatch, "plan position beyond sequence");
      slots.push_back({b, p, p, plans[b].targets[i], false});
    }
  if (slots.empty()) raise(ErrorCode::EmptyPlan, "no masked positions in batch");
  return detail::lm_loss_from_slots(enc, fwd, slots, grads);
}

namespace detail {

template <class T>
T autoregressive_loss(const Encoder<T>& enc, const std::vector<TokenSeq>& seqs,
                      const std::vector<PermutationOrder>& orders, Mode mode,
                      std::uint64_t seed, GradSet<T>* grads) {
  // Visibility: CLS first, then the order prefix; the state at the previous
  // element of the order (CLS for the first) predicts each token, with the
  // target position's query embedding added on the transformer path.
  const auto ml = static_cast<std::size_t>(enc.config.max_len);
  std::vector<std::uint8_t> vis(seqs.size() * ml * ml, 0);
  std::vector<PredictionSlot> slots;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const auto& order = orders[b].order;
    std::uint8_t* block = vis.data() + b * ml * ml;
    // CLS sees itself
    block[0 * ml + 0] = 1;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t pos = order[i];
      std::uint8_t* row = block + pos * ml;
      row[0] = 1;
      for (std::size_t j = 0; j <= i; ++j) row[order[j]] = 1;
      const std::size_t state_pos = i == 0 ? 0 : order[i - 1];
      slots.push_back({b, state_pos, pos, seqs[b].ids[pos], true});
    }
    // rows for SEP/PAD positions stay empty; effective_visibility gives
    // them a CLS fallback and nothing ever attends to them.
  }
  Forward<T> fwd = forward_with_attention_mask(enc, seqs, vis, mode, seed);
  return lm_loss_from_slots(enc, fwd, slots, grads);
}

} // namespace detail

/// Next-token prediction: token t is scored from the state at t-1 (left
/// context only; lower-triangular visibility on the transformer path).
template <class T>
T causal_lm_loss(const Encoder<T>& enc, const std::vector<TokenSeq>& seqs,
                 Mode mode = Mode::Train, std::uint64_t seed = 0,
                 GradSet<T>* grads = nullptr) {
  for (const auto& s : seqs)
    if (real_positions(s).size() < 2)
      raise(ErrorCode::SequenceTooShort,
            "causal objective needs >= 2 real tokens per sequence");
  if (enc.config.family == EncoderFamily::Transformer) {
    std::vector<PermutationOrder> orders;
    orders.reserve(seqs.size());
    for (const auto& s : seqs) orders.push_back(identity_order(s));
    return detail::autoregressive_loss(enc, seqs, orders, mode, seed, grads);
  }
  // recurrent path: plain left-to-right states
  Forward<T> fwd = forward(enc, seqs, mode, seed);
  std::vector<detail::PredictionSlot> slots;
  for (std::size_t b = 0; b < seqs.size(); ++b)
    for (std::size_t p : real_positions(seqs[b]))
      slots.push_back({b, p - 1, p, seqs[b].ids[p], false});
  return detail::lm_loss_from_slots(enc, fwd, slots, grads);
}

/// Autoregressive prediction under sampled factorization orders. With
/// identity orders this equals causal_lm_loss on the same batch.
template <class T>
T permutation_lm_loss(const Encoder<T>& enc, const std::vector<TokenSeq>& seqs,
                      const std::vector<PermutationOrder>& orders,
                      Mode mode = Mode::Train, std::uint64_t seed = 0,
                      GradSet<T>* grads = nullptr) {
  if (enc.config.family != EncoderFamily::Transformer)
    raise(ErrorCode::UnsupportedFamily,
          "permutation objective requires the transformer family");
  if (orders.size() != seqs.size())
    raise(ErrorCode::ShapeMismatch, "orders do not align with batch");
  for (std::size_t b = 0; b < seqs.size(); ++b) validate_order(orders[b], seqs[b]);
  return detail::autoregressive_loss(enc, seqs, orders, mode, seed, grads);
}

// ---------------------------------------------------------------------------
// Further pre-training on unlabeled text
// ---------------------------------------------------------------------------

struct PretrainResult {
  std::vector<double> loss_curve; // one entry per optimizer step
};

/// Run `config.steps` optimizer steps of the chosen objective over the given
/// texts (shuffled epoch-style with derived seeds). Deterministic given the
/// config seed. Optionally writes a provenance-carrying checkpoint.
template <class T>
PretrainResult further_pretrain(
    Encoder<T>& enc, const std::vector<std::string>& unlabeled, const Vocab& vocab,
    const PretrainConfig& config,
    const std::optional<std::filesystem::path>& checkpoint_path = std::nullopt) {
  config.validate();
  if (static_cast<std::size_t>(vocab.size()) !=
      static_cast<std::size_t>(enc.config.vocab_size))
    raise(ErrorCode::ShapeMismatch, "vocab size does not match encoder config");

  std::vector<TokenSeq> seqs;
  for (const auto& text : unlabeled) {
    if (normalize_whitespace(text).empty()) continue;
    TokenSeq s = encode(vocab, text, enc.config.max_len);
    if (config.objective != Objective::Masked && real_positions(s).size() < 2)
      continue; // autoregressive objectives need at least one transition
    seqs.push_back(std::move(s));
  }
  if (seqs.empty())
    raise(ErrorCode::EmptyCorpus, "no usable unlabeled sequences");

  PretrainResult result;
  if (config.steps > 0) {
    Adam<T> adam(enc.params, {config.learning_rate, 0.9, 0.999, 1e-8});
    std::vector<std::size_t> schedule(seqs.size());
    std::iota(schedule.begin(), schedule.end(), 0);
    std::size_t cursor = 0;
    std::uint64_t epoch = 0;
    Rng shuffle_rng(derive_seed(config.seed, {1, epoch}));
    shuffle_rng.shuffle(schedule);

    for (int step = 0; step < config.steps; ++step) {
      std::vector<TokenSeq> batch;
      std::vector<MaskingPlan> plans;
      for (int i = 0; i < config.batch_size; ++i) {
        if (cursor >= schedule.size()) {
          cursor = 0;
          ++epoch;
          Rng r(derive_seed(config.seed, {1, epoch}));
          r.shuffle(schedule);
        }
        batch.push_back(seqs[schedule[cursor++]]);
      }
      const std::uint64_t step_seed =
          derive_seed(config.seed, {2, static_cast<std::uint64_t>(step)});
      GradSet<T> grads = zero_grads(enc.params);
      T loss = T(0);
      switch (config.objective) {
        case Objective::Masked: {
          // redraw (deterministically) in the rare case no position gets
          // sampled anywhere in the batch
          std::vector<TokenSeq> corrupted;
          for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
            corrupted.clear();
            plans.clear();
            bool any = false;
            for (std::size_t b = 0; b < batch.size(); ++b) {
              auto [cseq, plan] = mask_tokens(
                  batch[b], config.mask_rate,
                  derive_seed(step_seed, {attempt, static_cast<std::uint64_t>(b)}),
                  enc.config.vocab_size);
              any = any || !plan.positions.empty();
              corrupted.push_back(std::move(cseq));
              plans.push_back(std::move(plan));
            }
            if (any) break;
            if (attempt == 99)
              raise(ErrorCode::EmptyPlan, "masking never selected a position",
                    {{"step", std::to_string(step)}});
          }
          loss = masked_lm_loss(enc, corrupted, plans, Mode::Train, step_seed,
                                &grads);
          break;
        }
        case Objective::Causal:
          loss = causal_lm_loss(enc, batch, Mode::Train, step_seed, &grads);
          break;
        case Objective::Permutation: {
          std::vector<PermutationOrder> orders;
          for (std::size_t b = 0; b < batch.size(); ++b)
            orders.push_back(sample_order(
                batch[b], derive_seed(step_seed, {7, static_cast<std::uint64_t>(b)})));
          loss = permutation_lm_loss(enc, batch, orders, Mode::Train, step_seed,
                                     &grads);
          break;
        }
      }
      if (!std::isfinite(static_cast<double>(loss)))
        raise(ErrorCode::DivergedLoss, "non-finite loss",
              {{"step", std::to_string(step)}});
      adam.step(enc.params, grads);
      result.loss_curve.push_back(static_cast<double>(loss));
    }
  }

  if (checkpoint_path) {
    if constexpr (std::is_same_v<T, float>) {
      nlohmann::json prov = {{"objective", to_string(config.objective)},
                             {"steps", config.steps},
                             {"seed", config.seed},
                             {"learning_rate", config.learning_rate},
                             {"batch_size", config.batch_size}};
      save_checkpoint(enc, *checkpoint_path, prov);
    } else {
      raise(ErrorCode::InvalidConfig,
            "checkpoints are float32; pretrain in float to save one");
    }
  }
  return result;
}

} // namespace cca
