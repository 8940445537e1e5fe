#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "cca/error.hpp"
#include "cca/rng.hpp"
#include "cca/tokenizer.hpp"

namespace cca {

enum class EncoderFamily { Transformer, Recurrent };
enum class Mode { Train, Eval };

inline std::string to_string(EncoderFamily f) {
  return f == EncoderFamily::Transformer ? "transformer" : "recurrent";
}

inline EncoderFamily parse_family(const std::string& s) {
  if (s == "transformer") return EncoderFamily::Transformer;
  if (s == "recurrent") return EncoderFamily::Recurrent;
  raise(ErrorCode::InvalidConfig, "unknown encoder family '" + s + "'");
}

struct EncoderConfig {
  EncoderFamily family = EncoderFamily::Transformer;
  int num_layers = 2;
  int hidden_size = 64;
  int num_heads = 2; // transformer only
  int embed_size = 64;
  int vocab_size = 0;
  int max_len = 128;
  double dropout = 0.1;

  int ff_size() const { return 4 * hidden_size; }

  /// Width of per-token states and of the pooled vector. The recurrent
  /// stack narrows its last layer to embed_size so the LM head can tie to
  /// the token embedding, so its output width is embed_size.
  int output_dim() const {
    return family == EncoderFamily::Transformer ? hidden_size : embed_size;
  }

  // Recurrent layer widths: embed -> hidden -> ... -> hidden -> embed.
  int lstm_out(int layer) const {
    if (layer == num_layers - 1) return embed_size;
    return hidden_size;
  }
  int lstm_in(int layer) const {
    return layer == 0 ? embed_size : lstm_out(layer - 1);
  }

  void validate() const {
    if (num_layers < 1 || hidden_size < 1 || embed_size < 1 || vocab_size < 1 ||
        max_len < 3)
      raise(ErrorCode::InvalidConfig, "all sizes must be >= 1 and max_len >= 3");
    if (!(dropout >= 0.0 && dropout < 1.0))
      raise(ErrorCode::InvalidConfig, "dropout must lie in [0, 1)");
    if (vocab_size <= kMaskId)
      raise(ErrorCode::InvalidConfig, "vocab_size must cover the special tokens");
    if (family == EncoderFamily::Transformer) {
      if (num_heads < 1)
        raise(ErrorCode::InvalidConfig, "num_heads must be >= 1");
      if (hidden_size % num_heads != 0)
        raise(ErrorCode::InvalidConfig,
              "hidden_size " + std::to_string(hidden_size) +
                  " not divisible by num_heads " + std::to_string(num_heads));
      if (embed_size != hidden_size)
        raise(ErrorCode::InvalidConfig,
              "transformer requires embed_size == hidden_size");
    }
  }
};

// ---------------------------------------------------------------------------
// Parameter storage
// ---------------------------------------------------------------------------

enum class InitKind { Embedding, Linear, LstmInput, LstmHidden, Zero, One };

struct ShapeEntry {
  std::string name;
  std::vector<std::size_t> shape;
  InitKind init = InitKind::Zero;
};

/// Parameter names and shapes are a pure function of the config; checkpoints
/// are validated against this table.
inline std::vector<ShapeEntry> shape_table(const EncoderConfig& c) {
  c.validate();
  std::vector<ShapeEntry> t;
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto E = static_cast<std::size_t>(c.embed_size);
  const auto H = static_cast<std::size_t>(c.hidden_size);
  const auto F = static_cast<std::size_t>(c.ff_size());
  const auto L = static_cast<std::size_t>(c.max_len);
  t.push_back({"embed.token", {V, E}, InitKind::Embedding});
  if (c.family == EncoderFamily::Transformer) {
    t.push_back({"embed.pos", {L, H}, InitKind::Embedding});
    t.push_back({"embed.qpos", {L, H}, InitKind::Embedding});
    for (int l = 0; l < c.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      t.push_back({p + "attn.wq", {H, H}, InitKind::Linear});
      t.push_back({p + "attn.bq", {H}, InitKind::Zero});
      t.push_back({p + "attn.wk", {H, H}, InitKind::Linear});
      t.push_back({p + "attn.bk", {H}, InitKind::Zero});
      t.push_back({p + "attn.wv", {H, H}, InitKind::Linear});
      t.push_back({p + "attn.bv", {H}, InitKind::Zero});
      t.push_back({p + "attn.wo", {H, H}, InitKind::Linear});
      t.push_back({p + "attn.bo", {H}, InitKind::Zero});
      t.push_back({p + "ln1.gain", {H}, InitKind::One});
      t.push_back({p + "ln1.bias", {H}, InitKind::Zero});
      t.push_back({p + "ffn.w1", {F, H}, InitKind::Linear});
      t.push_back({p + "ffn.b1", {F}, InitKind::Zero});
      t.push_back({p + "ffn.w2", {H, F}, InitKind::Linear});
      t.push_back({p + "ffn.b2", {H}, InitKind::Zero});
      t.push_back({p + "ln2.gain", {H}, InitKind::One});
      t.push_back({p + "ln2.bias", {H}, InitKind::Zero});
    }
  } else {
    for (int l = 0; l < c.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      const auto I = static_cast<std::size_t>(c.lstm_in(l));
      const auto O = static_cast<std::size_t>(c.lstm_out(l));
      t.push_back({p + "lstm.w_ih", {4 * O, I}, InitKind::LstmInput});
      t.push_back({p + "lstm.w_hh", {4 * O, O}, InitKind::LstmHidden});
      t.push_back({p + "lstm.bias", {4 * O}, InitKind::Zero});
    }
  }
  t.push_back({"lm.bias", {V}, InitKind::Zero});
  return t;
}

template <class T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::vector<T>> values;

  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    names.push_back(std::move(name));
    shapes.push_back(std::move(shape));
    values.emplace_back(n, T(0));
    return names.size() - 1;
  }

  int find(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }

  std::size_t total_params() const {
    std::size_t n = 0;
    for (const auto& v : values) n += v.size();
    return n;
  }
};

template <class T>
using GradSet = std::vector<std::vector<T>>;

template <class T>
GradSet<T> zero_grads(const ParamStore<T>& p) {
  GradSet<T> g;
  g.reserve(p.values.size());
  for (const auto& v : p.values) g.emplace_back(v.size(), T(0));
  return g;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

template <class T>
struct Encoder {
  EncoderConfig config;
  ParamStore<T> params;

  // layout indices into params
  std::size_t tok_emb = 0, pos_emb = 0, qpos_emb = 0, lm_bias = 0;
  struct AttnLayer {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln1g, ln1b, w1, b1, w2, b2, ln2g, ln2b;
  };
  struct LstmLayer {
    std::size_t w_ih, w_hh, bias;
  };
  std::vector<AttnLayer> attn_layers;
  std::vector<LstmLayer> lstm_layers;

  const std::vector<T>& p(std::size_t i) const { return params.values[i]; }
  std::vector<T>& p(std::size_t i) { return params.values[i]; }
};

template <class T>
Encoder<T> build_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Encoder<T> e;
  e.config = config;
  auto table = shape_table(config);
  for (std::size_t i = 0; i < table.size(); ++i) {
    auto& entry = table[i];
    std::size_t idx = e.params.add(entry.name, entry.shape);
    auto& vals = e.params.values[idx];
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    switch (entry.init) {
      case InitKind::Embedding: {
        double limit = std::sqrt(3.0 / static_cast<double>(entry.shape.back()));
        for (auto& v : vals) v = static_cast<T>(rng.next_uniform(limit));
        break;
      }
      case InitKind::Linear: {
        double fan_out = static_cast<double>(entry.shape[0]);
        double fan_in = static_cast<double>(entry.shape[1]);
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : vals) v = static_cast<T>(rng.next_uniform(limit));
        break;
      }
      case InitKind::LstmInput:
      case InitKind::LstmHidden: {
        double fan_out = static_cast<double>(entry.shape[0]) / 4.0;
        double fan_in = static_cast<double>(entry.shape[1]);
        double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : vals) v = static_cast<T>(rng.next_uniform(limit));
        break;
      }
      case InitKind::Zero:
        break;
      case InitKind::One:
        for (auto& v : vals) v = T(1);
        break;
    }
  }
  // cache layout
  auto need = [&](const char* n) -> std::size_t {
    int i = e.params.find(n);
    if (i < 0) raise(ErrorCode::InvalidConfig, std::string("missing param ") + n);
    return static_cast<std::size_t>(i);
  };
  e.tok_emb = need("embed.token");
  e.lm_bias = need("lm.bias");
  if (config.family == EncoderFamily::Transformer) {
    e.pos_emb = need("embed.pos");
    e.qpos_emb = need("embed.qpos");
    for (int l = 0; l < config.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      typename Encoder<T>::AttnLayer a;
      a.wq = need((p + "attn.wq").c_str());
      a.bq = need((p + "attn.bq").c_str());
      a.wk = need((p + "attn.wk").c_str());
      a.bk = need((p + "attn.bk").c_str());
      a.wv = need((p + "attn.wv").c_str());
      a.bv = need((p + "attn.bv").c_str());
      a.wo = need((p + "attn.wo").c_str());
      a.bo = need((p + "attn.bo").c_str());
      a.ln1g = need((p + "ln1.gain").c_str());
      a.ln1b = need((p + "ln1.bias").c_str());
      a.w1 = need((p + "ffn.w1").c_str());
      a.b1 = need((p + "ffn.b1").c_str());
      a.w2 = need((p + "ffn.w2").c_str());
      a.b2 = need((p + "ffn.b2").c_str());
      a.ln2g = need((p + "ln2.gain").c_str());
      a.ln2b = need((p + "ln2.bias").c_str());
      e.attn_layers.push_back(a);
    }
  } else {
    for (int l = 0; l < config.num_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      typename Encoder<T>::LstmLayer a;
      a.w_ih = need((p + "lstm.w_ih").c_str());
      a.w_hh = need((p + "lstm.w_hh").c_str());
      a.bias = need((p + "lstm.bias").c_str());
      e.lstm_layers.push_back(a);
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Batch packing. Batches are trimmed to the longest true length so padded
// tails cost nothing; outputs at real positions do not depend on the trim.
// ---------------------------------------------------------------------------

struct PackedBatch {
  std::size_t batch = 0;
  std::size_t seq = 0; // trimmed length
  std::vector<std::int32_t> ids;      // batch*seq
  std::vector<std::uint8_t> mask;     // batch*seq, 1 = non-PAD
  std::vector<std::int32_t> lengths;  // per sequence true_length
};

inline PackedBatch pack_batch(const std::vector<TokenSeq>& seqs,
                              const EncoderConfig& config) {
  if (seqs.empty()) raise(ErrorCode::ShapeMismatch, "empty batch");
  PackedBatch pb;
  pb.batch = seqs.size();
  std::size_t max_true = 1;
  for (const auto& s : seqs) {
    if (s.max_len() != config.max_len)
      raise(ErrorCode::ShapeMismatch,
            "sequence length " + std::to_string(s.max_len()) +
                " != max_len " + std::to_string(config.max_len));
    max_true = std::max(max_true, static_cast<std::size_t>(s.true_length));
  }
  pb.seq = max_true;
  pb.ids.assign(pb.batch * pb.seq, kPadId);
  pb.mask.assign(pb.batch * pb.seq, 0);
  pb.lengths.reserve(pb.batch);
  for (std::size_t b = 0; b < pb.batch; ++b) {
    const auto& s = seqs[b];
    pb.lengths.push_back(s.true_length);
    for (std::size_t t = 0; t < pb.seq; ++t) {
      std::int32_t id = s.ids[t];
      if (id < 0 || id >= config.vocab_size)
        raise(ErrorCode::IdOutOfRange,
              "token id " + std::to_string(id) + " >= vocab_size " +
                  std::to_string(config.vocab_size));
      pb.ids[b * pb.seq + t] = id;
      pb.mask[b * pb.seq + t] = s.attention_mask[t];
    }
  }
  return pb;
}

// ---------------------------------------------------------------------------
// Activation traces (kept for the backward pass)
// ---------------------------------------------------------------------------

namespace detail {

// Four-accumulator dot product. The summation order is fixed, so results
// stay bit-reproducible run to run; the independent accumulators let the
// compiler keep the FP pipeline full without -ffast-math.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  T s = (s0 + s1) + (s2 + s3);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// y[i] += g * w[i]
template <class T>
inline void axpy(T g, const T* w, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += g * w[i];
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 * 0.5)));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 * 0.5)));
  const T pdf = std::exp(T(-0.5) * x * x) *
                T(1.0 / std::sqrt(2.0 * std::numbers::pi));
  return cdf + x * pdf;
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) {
    T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  T z = std::exp(x);
  return z / (T(1) + z);
}

// Inverted dropout: keep mask drawn per element, survivors scaled by 1/(1-p).
template <class T>
void apply_dropout(std::vector<T>& x, std::vector<std::uint8_t>& keep,
                   double rate, std::uint64_t seed) {
  keep.assign(x.size(), 1);
  if (rate <= 0.0) return;
  Rng rng(seed);
  const T scale = T(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (rng.next_real() < rate) {
      keep[i] = 0;
      x[i] = T(0);
    } else {
      x[i] *= scale;
    }
  }
}

template <class T>
void dropout_backward(std::vector<T>& d, const std::vector<std::uint8_t>& keep,
                      double rate) {
  if (rate <= 0.0) return;
  const T scale = T(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = keep[i] ? d[i] * scale : T(0);
}

constexpr double kLnEps = 1e-5;

} // namespace detail

template <class T>
struct TransformerTrace {
  PackedBatch pb;
  Mode mode = Mode::Eval;
  double dropout = 0.0;
  std::vector<std::uint8_t> vis; // batch*seq*seq effective visibility
  std::vector<T> x_emb;          // input to layer 0 (post dropout)
  std::vector<std::uint8_t> emb_keep;
  struct Layer {
    std::vector<T> x_in;
    std::vector<T> q, k, v;
    std::vector<T> probs; // batch*heads*seq*seq, post-softmax pre-dropout
    std::vector<std::uint8_t> probs_keep;
    std::vector<T> ctx;
    std::vector<T> ao;
    std::vector<std::uint8_t> ao_keep;
    std::vector<T> res1, ln1_xhat, ln1_inv_sigma, x_mid;
    std::vector<T> ff_pre, ff_act, ff_out;
    std::vector<std::uint8_t> ff_keep;
    std::vector<T> res2, ln2_xhat, ln2_inv_sigma, x_out;
  };
  std::vector<Layer> layers;
};

template <class T>
struct RecurrentTrace {
  PackedBatch pb;
  Mode mode = Mode::Eval;
  double dropout = 0.0;
  std::vector<T> x_emb;
  std::vector<std::uint8_t> emb_keep;
  struct Layer {
    int in_dim = 0, out_dim = 0;
    std::vector<T> input; // batch*seq*in (post inter-layer dropout)
    std::vector<std::uint8_t> in_keep;
    std::vector<T> gates;  // batch*seq*4*out, post-activation (i,f,g,o)
    std::vector<T> cells;  // batch*seq*out
    std::vector<T> hidden; // batch*seq*out
  };
  std::vector<Layer> layers;
};

/// Result of a forward pass. `states` covers the trimmed sequence length
/// `seq`; positions at and beyond a sequence's true length are all-PAD and
/// carry zero states. `pooled` is the CLS state for transformers and the
/// state at the last non-PAD token for the recurrent family.
template <class T>
struct Forward {
  std::size_t batch = 0, seq = 0, dim = 0;
  std::vector<T> states;
  std::vector<T> pooled;
  std::vector<std::int32_t> lengths;
  std::shared_ptr<TransformerTrace<T>> t_trace;
  std::shared_ptr<RecurrentTrace<T>> r_trace;

  /// Sequence position whose state feeds `pooled` for batch item b.
  std::size_t pooled_position(std::size_t b) const {
    return t_trace ? 0 : static_cast<std::size_t>(lengths[b] - 1);
  }
};

// ---------------------------------------------------------------------------
// Transformer forward/backward
// ---------------------------------------------------------------------------

namespace detail {

// y[b,t,:] = W x[b,t,:] + b ; W is [O,I] row-major.
template <class T>
void linear(const std::vector<T>& x, std::size_t rows, std::size_t in_dim,
            const std::vector<T>& w, const std::vector<T>& bias,
            std::size_t out_dim, std::vector<T>& y) {
  y.assign(rows * out_dim, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * in_dim;
    T* yr = y.data() + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const T b = bias.empty() ? T(0) : bias[o];
      yr[o] = b + dot(w.data() + o * in_dim, xr, in_dim);
    }
  }
}

// Accumulate dW, db, dx for y = W x + b given dy.
template <class T>
void linear_backward(const std::vector<T>& x, std::size_t rows,
                     std::size_t in_dim, const std::vector<T>& w,
                     std::size_t out_dim, const std::vector<T>& dy,
                     std::vector<T>& dw, std::vector<T>& db,
                     std::vector<T>* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * in_dim;
    const T* dyr = dy.data() + r * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const T g = dyr[o];
      if (g == T(0)) continue;
      axpy(g, xr, dw.data() + o * in_dim, in_dim);
      if (!db.empty()) db[o] += g;
    }
    if (dx != nullptr) {
      T* dxr = dx->data() + r * in_dim;
      for (std::size_t o = 0; o < out_dim; ++o) {
        const T g = dyr[o];
        if (g == T(0)) continue;
        axpy(g, w.data() + o * in_dim, dxr, in_dim);
      }
    }
  }
}

template <class T>
void layer_norm(const std::vector<T>& x, std::size_t rows, std::size_t dim,
                const std::vector<T>& gain, const std::vector<T>& bias,
                std::vector<T>& xhat, std::vector<T>& inv_sigma,
                std::vector<T>& y) {
  xhat.assign(rows * dim, T(0));
  inv_sigma.assign(rows, T(0));
  y.assign(rows * dim, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * dim;
    T mu = T(0);
    for (std::size_t i = 0; i < dim; ++i) mu += xr[i];
    mu /= T(dim);
    T var = T(0);
    for (std::size_t i = 0; i < dim; ++i) {
      T d = xr[i] - mu;
      var += d * d;
    }
    var /= T(dim);
    const T inv = T(1) / std::sqrt(var + T(kLnEps));
    inv_sigma[r] = inv;
    T* xh = xhat.data() + r * dim;
    T* yr = y.data() + r * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      xh[i] = (xr[i] - mu) * inv;
      yr[i] = gain[i] * xh[i] + bias[i];
    }
  }
}

template <class T>
void layer_norm_backward(const std::vector<T>& dy, const std::vector<T>& xhat,
                         const std::vector<T>& inv_sigma, std::size_t rows,
                         std::size_t dim, const std::vector<T>& gain,
                         std::vector<T>& dgain, std::vector<T>& dbias,
                         std::vector<T>& dx) {
  dx.assign(rows * dim, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dyr = dy.data() + r * dim;
    const T* xh = xhat.data() + r * dim;
    T sum_g = T(0), sum_gx = T(0);
    for (std::size_t i = 0; i < dim; ++i) {
      const T g = dyr[i] * gain[i];
      sum_g += g;
      sum_gx += g * xh[i];
      dgain[i] += dyr[i] * xh[i];
      dbias[i] += dyr[i];
    }
    const T inv_n = T(1) / T(dim);
    T* dxr = dx.data() + r * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      const T g = dyr[i] * gain[i];
      dxr[i] = inv_sigma[r] * (g - sum_g * inv_n - xh[i] * sum_gx * inv_n);
    }
  }
}

// Effective visibility: user mask (or full) intersected with non-PAD keys.
// A row left with no visible key falls back to the CLS column; such rows
// only ever belong to padded positions whose states are unused.
inline std::vector<std::uint8_t> effective_visibility(
    const PackedBatch& pb, const std::vector<std::uint8_t>* user_vis,
    std::size_t user_stride) {
  const std::size_t B = pb.batch, S = pb.seq;
  std::vector<std::uint8_t> vis(B * S * S, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < S; ++t) {
      bool any = false;
      for (std::size_t u = 0; u < S; ++u) {
        bool ok = pb.mask[b * S + u] != 0;
        if (ok && user_vis != nullptr)
          ok = (*user_vis)[(b * user_stride + t) * user_stride + u] != 0;
        vis[(b * S + t) * S + u] = ok ? 1 : 0;
        any = any || ok;
      }
      if (!any) vis[(b * S + t) * S + 0] = 1;
    }
  }
  return vis;
}

} // namespace detail

template <class T>
Forward<T> transformer_forward(const Encoder<T>& enc, const PackedBatch& pb,
                               const std::vector<std::uint8_t>* user_vis,
                               std::size_t user_stride, Mode mode,
                               std::uint64_t seed) {
  const auto& c = enc.config;
  const std::size_t B = pb.batch, S = pb.seq;
  const std::size_t H = static_cast<std::size_t>(c.hidden_size);
  const std::size_t A = static_cast<std::size_t>(c.num_heads);
  const std::size_t Dh = H / A;
  const std::size_t F = static_cast<std::size_t>(c.ff_size());
  const double p_drop = mode == Mode::Train ? c.dropout : 0.0;
  const T scale = T(1) / std::sqrt(T(Dh));

  auto trace = std::make_shared<TransformerTrace<T>>();
  trace->pb = pb;
  trace->mode = mode;
  trace->dropout = p_drop;
  trace->vis = detail::effective_visibility(pb, user_vis, user_stride);

  const auto& tokE = enc.p(enc.tok_emb);
  const auto& posE = enc.p(enc.pos_emb);
  trace->x_emb.assign(B * S * H, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < S; ++t) {
      const auto id = static_cast<std::size_t>(pb.ids[b * S + t]);
      T* x = trace->x_emb.data() + (b * S + t) * H;
      const T* te = tokE.data() + id * H;
      const T* pe = posE.data() + t * H;
      for (std::size_t h = 0; h < H; ++h) x[h] = te[h] + pe[h];
    }
  detail::apply_dropout(trace->x_emb, trace->emb_keep, p_drop,
                        derive_seed(seed, {0}));

  std::vector<T> x = trace->x_emb;
  trace->layers.resize(static_cast<std::size_t>(c.num_layers));
  for (int l = 0; l < c.num_layers; ++l) {
    auto& L = trace->layers[static_cast<std::size_t>(l)];
    const auto& w = enc.attn_layers[static_cast<std::size_t>(l)];
    L.x_in = x;

    detail::linear(L.x_in, B * S, H, enc.p(w.wq), enc.p(w.bq), H, L.q);
    detail::linear(L.x_in, B * S, H, enc.p(w.wk), enc.p(w.bk), H, L.k);
    detail::linear(L.x_in, B * S, H, enc.p(w.wv), enc.p(w.bv), H, L.v);

    L.probs.assign(B * A * S * S, T(0));
    L.ctx.assign(B * S * H, T(0));
    std::vector<T> scores(S);
    std::vector<std::size_t> visible;
    visible.reserve(S);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < S; ++t) {
        const std::uint8_t* vrow = trace->vis.data() + (b * S + t) * S;
        visible.clear();
        for (std::size_t u = 0; u < S; ++u)
          if (vrow[u]) visible.push_back(u);
        for (std::size_t a = 0; a < A; ++a) {
          const T* qv = L.q.data() + (b * S + t) * H + a * Dh;
          T max_s = -std::numeric_limits<T>::infinity();
          for (std::size_t vi = 0; vi < visible.size(); ++vi) {
            const std::size_t u = visible[vi];
            const T* kv = L.k.data() + (b * S + u) * H + a * Dh;
            scores[vi] = detail::dot(qv, kv, Dh) * scale;
            max_s = std::max(max_s, scores[vi]);
          }
          T denom = T(0);
          for (std::size_t vi = 0; vi < visible.size(); ++vi) {
            scores[vi] = std::exp(scores[vi] - max_s);
            denom += scores[vi];
          }
          T* prow = L.probs.data() + ((b * A + a) * S + t) * S;
          for (std::size_t vi = 0; vi < visible.size(); ++vi)
            prow[visible[vi]] = scores[vi] / denom;
        }
      }
    }

    L.probs_keep.assign(L.probs.size(), 1);
    std::vector<T> probs_used = L.probs;
    if (p_drop > 0.0)
      detail::apply_dropout(probs_used, L.probs_keep, p_drop,
                            derive_seed(seed, {1, static_cast<std::uint64_t>(l)}));

    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t a = 0; a < A; ++a)
        for (std::size_t t = 0; t < S; ++t) {
          const T* prow = probs_used.data() + ((b * A + a) * S + t) * S;
          T* cv = L.ctx.data() + (b * S + t) * H + a * Dh;
          const std::uint8_t* vrow = trace->vis.data() + (b * S + t) * S;
          for (std::size_t u = 0; u < S; ++u) {
            if (!vrow[u] || prow[u] == T(0)) continue;
            detail::axpy(prow[u], L.v.data() + (b * S + u) * H + a * Dh, cv, Dh);
          }
        }

    detail::linear(L.ctx, B * S, H, enc.p(w.wo), enc.p(w.bo), H, L.ao);
    std::vector<T> aod = L.ao;
    detail::apply_dropout(aod, L.ao_keep, p_drop,
                          derive_seed(seed, {2, static_cast<std::uint64_t>(l)}));

    L.res1.assign(B * S * H, T(0));
    for (std::size_t i = 0; i < L.res1.size(); ++i)
      L.res1[i] = L.x_in[i] + aod[i];
    detail::layer_norm(L.res1, B * S, H, enc.p(w.ln1g), enc.p(w.ln1b), L.ln1_xhat,
                       L.ln1_inv_sigma, L.x_mid);

    detail::linear(L.x_mid, B * S, H, enc.p(w.w1), enc.p(w.b1), F, L.ff_pre);
    L.ff_act.assign(L.ff_pre.size(), T(0));
    for (std::size_t i = 0; i < L.ff_pre.size(); ++i)
      L.ff_act[i] = detail::gelu(L.ff_pre[i]);
    detail::linear(L.ff_act, B * S, F, enc.p(w.w2), enc.p(w.b2), H, L.ff_out);
    std::vector<T> ffd = L.ff_out;
    detail::apply_dropout(ffd, L.ff_keep, p_drop,
                          derive_seed(seed, {3, static_cast<std::uint64_t>(l)}));

    L.res2.assign(B * S * H, T(0));
    for (std::size_t i = 0; i < L.res2.size(); ++i)
      L.res2[i] = L.x_mid[i] + ffd[i];
    detail::layer_norm(L.res2, B * S, H, enc.p(w.ln2g), enc.p(w.ln2b), L.ln2_xhat,
                       L.ln2_inv_sigma, L.x_out);
    x = L.x_out;
  }

  Forward<T> out;
  out.batch = B;
  out.seq = S;
  out.dim = H;
  out.lengths = pb.lengths;
  out.states.assign(B * S * H, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < S; ++t)
      if (pb.mask[b * S + t])
        for (std::size_t h = 0; h < H; ++h)
          out.states[(b * S + t) * H + h] = x[(b * S + t) * H + h];
  out.pooled.assign(B * H, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h) out.pooled[b * H + h] = out.states[b * S * H + h];
  out.t_trace = trace;
  return out;
}

template <class T>
void transformer_backward(const Encoder<T>& enc, const Forward<T>& fwd,
                          const std::vector<T>& d_states, GradSet<T>& grads) {
  const auto& trace = *fwd.t_trace;
  const auto& c = enc.config;
  const std::size_t B = fwd.batch, S = fwd.seq;
  const std::size_t H = static_cast<std::size_t>(c.hidden_size);
  const std::size_t A = static_cast<std::size_t>(c.num_heads);
  const std::size_t Dh = H / A;
  const std::size_t F = static_cast<std::size_t>(c.ff_size());
  const T scale = T(1) / std::sqrt(T(Dh));

  std::vector<T> dx(d_states);
  // PAD positions were zeroed in states; make sure no gradient leaks there.
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < S; ++t)
      if (!trace.pb.mask[b * S + t])
        for (std::size_t h = 0; h < H; ++h) dx[(b * S + t) * H + h] = T(0);

  std::vector<T> empty_bias;
  for (int l = c.num_layers - 1; l >= 0; --l) {
    const auto& L = trace.layers[static_cast<std::size_t>(l)];
    const auto& w = enc.attn_layers[static_cast<std::size_t>(l)];

    // LN2
    std::vector<T> dres2;
    detail::layer_norm_backward(dx, L.ln2_xhat, L.ln2_inv_sigma, B * S, H,
                                enc.p(w.ln2g), grads[w.ln2g], grads[w.ln2b],
                                dres2);
    std::vector<T> d_xmid = dres2;
    std::vector<T> d_ffout = dres2;
    detail::dropout_backward(d_ffout, L.ff_keep, trace.dropout);

    // FFN
    std::vector<T> d_ffact(B * S * F, T(0));
    detail::linear_backward(L.ff_act, B * S, F, enc.p(w.w2), H, d_ffout,
                            grads[w.w2], grads[w.b2], &d_ffact);
    for (std::size_t i = 0; i < d_ffact.size(); ++i)
      d_ffact[i] *= detail::gelu_grad(L.ff_pre[i]);
    detail::linear_backward(L.x_mid, B * S, H, enc.p(w.w1), F, d_ffact,
                            grads[w.w1], grads[w.b1], &d_xmid);

    // LN1
    std::vector<T> dres1;
    detail::layer_norm_backward(d_xmid, L.ln1_xhat, L.ln1_inv_sigma, B * S, H,
                                enc.p(w.ln1g), grads[w.ln1g], grads[w.ln1b],
                                dres1);
    std::vector<T> d_xin = dres1;
    std::vector<T> d_ao = dres1;
    detail::dropout_backward(d_ao, L.ao_keep, trace.dropout);

    // output projection
    std::vector<T> d_ctx(B * S * H, T(0));
    detail::linear_backward(L.ctx, B * S, H, enc.p(w.wo), H, d_ao, grads[w.wo],
                            grads[w.bo], &d_ctx);

    // attention
    std::vector<T> d_q(B * S * H, T(0));
    std::vector<T> d_k(B * S * H, T(0));
    std::vector<T> d_v(B * S * H, T(0));
    const T keep_scale =
        trace.dropout > 0.0 ? T(1.0 / (1.0 - trace.dropout)) : T(1);
    std::vector<T> d_p(S);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < S; ++t) {
        const std::uint8_t* vrow = trace.vis.data() + (b * S + t) * S;
        for (std::size_t a = 0; a < A; ++a) {
          const T* prow = L.probs.data() + ((b * A + a) * S + t) * S;
          const std::uint8_t* krow =
              L.probs_keep.data() + ((b * A + a) * S + t) * S;
          const T* dctx = d_ctx.data() + (b * S + t) * H + a * Dh;
          // through dropout and the weighted sum of values
          T pdot = T(0);
          for (std::size_t u = 0; u < S; ++u) {
            if (!vrow[u]) continue;
            const T pd = krow[u] ? prow[u] * keep_scale : T(0);
            const T g = detail::dot(dctx, L.v.data() + (b * S + u) * H + a * Dh, Dh);
            if (pd != T(0))
              detail::axpy(pd, dctx, d_v.data() + (b * S + u) * H + a * Dh, Dh);
            // gradient w.r.t. pre-dropout prob
            d_p[u] = krow[u] ? g * keep_scale : T(0);
            pdot += prow[u] * d_p[u];
          }
          // softmax backward, then into q and k
          T* dqv = d_q.data() + (b * S + t) * H + a * Dh;
          const T* qv = L.q.data() + (b * S + t) * H + a * Dh;
          for (std::size_t u = 0; u < S; ++u) {
            if (!vrow[u]) continue;
            const T ds = prow[u] * (d_p[u] - pdot) * scale;
            if (ds == T(0)) continue;
            detail::axpy(ds, L.k.data() + (b * S + u) * H + a * Dh, dqv, Dh);
            detail::axpy(ds, qv, d_k.data() + (b * S + u) * H + a * Dh, Dh);
          }
        }
      }

    detail::linear_backward(L.x_in, B * S, H, enc.p(w.wq), H, d_q, grads[w.wq],
                            grads[w.bq], &d_xin);
    detail::linear_backward(L.x_in, B * S, H, enc.p(w.wk), H, d_k, grads[w.wk],
                            grads[w.bk], &d_xin);
    detail::linear_backward(L.x_in, B * S, H, enc.p(w.wv), H, d_v, grads[w.wv],
                            grads[w.bv], &d_xin);
    dx = std::move(d_xin);
  }

  // embeddings
  detail::dropout_backward(dx, trace.emb_keep, trace.dropout);
  auto& d_tok = grads[enc.tok_emb];
  auto& d_pos = grads[enc.pos_emb];
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < S; ++t) {
      const auto id = static_cast<std::size_t>(trace.pb.ids[b * S + t]);
      const T* g = dx.data() + (b * S + t) * H;
      T* dt = d_tok.data() + id * H;
      T* dp = d_pos.data() + t * H;
      for (std::size_t h = 0; h < H; ++h) {
        dt[h] += g[h];
        dp[h] += g[h];
      }
    }
}

// ---------------------------------------------------------------------------
// Recurrent (stacked LSTM) forward/backward
// ---------------------------------------------------------------------------

template <class T>
Forward<T> recurrent_forward(const Encoder<T>& enc, const PackedBatch& pb,
                             Mode mode, std::uint64_t seed) {
  const auto& c = enc.config;
  const std::size_t B = pb.batch, S = pb.seq;
  const std::size_t E = static_cast<std::size_t>(c.embed_size);
  const double p_drop = mode == Mode::Train ? c.dropout : 0.0;

  auto trace = std::make_shared<RecurrentTrace<T>>();
  trace->pb = pb;
  trace->mode = mode;
  trace->dropout = p_drop;

  const auto& tokE = enc.p(enc.tok_emb);
  trace->x_emb.assign(B * S * E, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < S; ++t) {
      if (!pb.mask[b * S + t]) continue;
      const auto id = static_cast<std::size_t>(pb.ids[b * S + t]);
      T* x = trace->x_emb.data() + (b * S + t) * E;
      const T* te = tokE.data() + id * E;
      for (std::size_t h = 0; h < E; ++h) x[h] = te[h];
    }
  detail::apply_dropout(trace->x_emb, trace->emb_keep, p_drop,
                        derive_seed(seed, {0}));

  std::vector<T> layer_input = trace->x_emb;
  std::size_t in_dim = E;
  trace->layers.resize(static_cast<std::size_t>(c.num_layers));
  for (int l = 0; l < c.num_layers; ++l) {
    auto& L = trace->layers[static_cast<std::size_t>(l)];
    const auto& w = enc.lstm_layers[static_cast<std::size_t>(l)];
    const std::size_t O = static_cast<std::size_t>(c.lstm_out(l));
    L.in_dim = static_cast<int>(in_dim);
    L.out_dim = static_cast<int>(O);
    L.input = layer_input;
    L.in_keep.assign(L.input.size(), 1);
    if (l > 0 && p_drop > 0.0)
      detail::apply_dropout(L.input, L.in_keep, p_drop,
                            derive_seed(seed, {4, static_cast<std::uint64_t>(l)}));
    L.gates.assign(B * S * 4 * O, T(0));
    L.cells.assign(B * S * O, T(0));
    L.hidden.assign(B * S * O, T(0));

    const auto& w_ih = enc.p(w.w_ih);
    const auto& w_hh = enc.p(w.w_hh);
    const auto& bias = enc.p(w.bias);
    std::vector<T> z(4 * O);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t len = static_cast<std::size_t>(pb.lengths[b]);
      for (std::size_t t = 0; t < len && t < S; ++t) {
        const T* xt = L.input.data() + (b * S + t) * in_dim;
        const T* h_prev =
            t == 0 ? nullptr : L.hidden.data() + (b * S + (t - 1)) * O;
        for (std::size_t o = 0; o < 4 * O; ++o) {
          T acc = bias[o] + detail::dot(w_ih.data() + o * in_dim, xt, in_dim);
          if (h_prev != nullptr)
            acc += detail::dot(w_hh.data() + o * O, h_prev, O);
          z[o] = acc;
        }
        T* gates = L.gates.data() + (b * S + t) * 4 * O;
        T* cell = L.cells.data() + (b * S + t) * O;
        T* hid = L.hidden.data() + (b * S + t) * O;
        const T* c_prev = t == 0 ? nullptr : L.cells.data() + (b * S + (t - 1)) * O;
        for (std::size_t o = 0; o < O; ++o) {
          const T gi = detail::sigmoid(z[o]);
          const T gf = detail::sigmoid(z[O + o]);
          const T gg = std::tanh(z[2 * O + o]);
          const T go = detail::sigmoid(z[3 * O + o]);
          gates[o] = gi;
          gates[O + o] = gf;
          gates[2 * O + o] = gg;
          gates[3 * O + o] = go;
          const T cp = c_prev == nullptr ? T(0) : c_prev[o];
          cell[o] = gf * cp + gi * gg;
          hid[o] = go * std::tanh(cell[o]);
        }
      }
    }
    layer_input = L.hidden;
    in_dim = O;
  }

  const std::size_t D = static_cast<std::size_t>(c.output_dim());
  Forward<T> out;
  out.batch = B;
  out.seq = S;
  out.dim = D;
  out.lengths = pb.lengths;
  out.states = trace->layers.back().hidden; // pad positions already zero
  out.pooled.assign(B * D, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t last = static_cast<std::size_t>(pb.lengths[b] - 1);
    for (std::size_t h = 0; h < D; ++h)
      out.pooled[b * D + h] = out.states[(b * S + last) * D + h];
  }
  out.r_trace = trace;
  return out;
}

template <class T>
void recurrent_backward(const Encoder<T>& enc, const Forward<T>& fwd,
                        const std::vector<T>& d_states, GradSet<T>& grads) {
  const auto& trace = *fwd.r_trace;
  const auto& c = enc.config;
  const std::size_t B = fwd.batch, S = fwd.seq;

  std::vector<T> d_out = d_states; // gradient w.r.t. top-layer hidden
  for (int l = c.num_layers - 1; l >= 0; --l) {
    const auto& L = trace.layers[static_cast<std::size_t>(l)];
    const auto& w = enc.lstm_layers[static_cast<std::size_t>(l)];
    const std::size_t O = static_cast<std::size_t>(L.out_dim);
    const std::size_t I = static_cast<std::size_t>(L.in_dim);
    const auto& w_ih = enc.p(w.w_ih);
    const auto& w_hh = enc.p(w.w_hh);
    auto& d_wih = grads[w.w_ih];
    auto& d_whh = grads[w.w_hh];
    auto& d_bias = grads[w.bias];

    std::vector<T> d_input(B * S * I, T(0));
    std::vector<T> dh(O), dc(O), dz(4 * O);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t len = static_cast<std::size_t>(trace.pb.lengths[b]);
      std::fill(dh.begin(), dh.end(), T(0));
      std::fill(dc.begin(), dc.end(), T(0));
      for (std::size_t ti = len; ti-- > 0;) {
        const T* gates = L.gates.data() + (b * S + ti) * 4 * O;
        const T* cell = L.cells.data() + (b * S + ti) * O;
        const T* c_prev =
            ti == 0 ? nullptr : L.cells.data() + (b * S + (ti - 1)) * O;
        const T* h_prev =
            ti == 0 ? nullptr : L.hidden.data() + (b * S + (ti - 1)) * O;
        const T* xt = L.input.data() + (b * S + ti) * I;
        const T* d_here = d_out.data() + (b * S + ti) * O;

        for (std::size_t o = 0; o < O; ++o) {
          const T gi = gates[o], gf = gates[O + o], gg = gates[2 * O + o],
                  go = gates[3 * O + o];
          const T tc = std::tanh(cell[o]);
          const T dht = dh[o] + d_here[o];
          const T dgo = dht * tc;
          T dct = dc[o] + dht * go * (T(1) - tc * tc);
          const T cp = c_prev == nullptr ? T(0) : c_prev[o];
          const T dgi = dct * gg;
          const T dgf = dct * cp;
          const T dgg = dct * gi;
          dz[o] = dgi * gi * (T(1) - gi);
          dz[O + o] = dgf * gf * (T(1) - gf);
          dz[2 * O + o] = dgg * (T(1) - gg * gg);
          dz[3 * O + o] = dgo * go * (T(1) - go);
          dc[o] = dct * gf;
        }
        std::fill(dh.begin(), dh.end(), T(0));
        T* dxt = d_input.data() + (b * S + ti) * I;
        for (std::size_t o = 0; o < 4 * O; ++o) {
          const T g = dz[o];
          if (g == T(0)) continue;
          d_bias[o] += g;
          T* dwrow = d_wih.data() + o * I;
          const T* wrow = w_ih.data() + o * I;
          for (std::size_t i = 0; i < I; ++i) {
            dwrow[i] += g * xt[i];
            dxt[i] += g * wrow[i];
          }
          if (h_prev != nullptr) {
            T* dhrow = d_whh.data() + o * O;
            const T* hrow = w_hh.data() + o * O;
            for (std::size_t i = 0; i < O; ++i) {
              dhrow[i] += g * h_prev[i];
              dh[i] += g * hrow[i];
            }
          }
        }
      }
    }
    if (l > 0) detail::dropout_backward(d_input, L.in_keep, trace.dropout);
    d_out = std::move(d_input);
  }

  detail::dropout_backward(d_out, trace.emb_keep, trace.dropout);
  const std::size_t E = static_cast<std::size_t>(c.embed_size);
  auto& d_tok = grads[enc.tok_emb];
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < S; ++t) {
      if (!trace.pb.mask[b * S + t]) continue;
      const auto id = static_cast<std::size_t>(trace.pb.ids[b * S + t]);
      const T* g = d_out.data() + (b * S + t) * E;
      T* dt = d_tok.data() + id * E;
      for (std::size_t h = 0; h < E; ++h) dt[h] += g[h];
    }
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

/// Forward pass over a batch of fixed-length sequences. Eval mode is fully
/// deterministic; train mode draws dropout from the given seed.
template <class T>
Forward<T> forward(const Encoder<T>& enc, const std::vector<TokenSeq>& seqs,
                   Mode mode = Mode::Eval, std::uint64_t seed = 0) {
  PackedBatch pb = pack_batch(seqs, enc.config);
  if (enc.config.family == EncoderFamily::Transformer)
    return transformer_forward(enc, pb, nullptr, 0, mode, seed);
  return recurrent_forward(enc, pb, mode, seed);
}

/// Forward with a caller-supplied pairwise visibility mask, one
/// max_len x max_len boolean block per batch item (row = query position,
/// column = key position). With an all-true mask this equals forward().
template <class T>
Forward<T> forward_with_attention_mask(const Encoder<T>& enc,
                                       const std::vector<TokenSeq>& seqs,
                                       const std::vector<std::uint8_t>& visibility,
                                       Mode mode = Mode::Eval,
                                       std::uint64_t seed = 0) {
  if (enc.config.family != EncoderFamily::Transformer)
    raise(ErrorCode::UnsupportedFamily,
          "pairwise attention masks require the transformer family");
  PackedBatch pb = pack_batch(seqs, enc.config);
  const auto ml = static_cast<std::size_t>(enc.config.max_len);
  if (visibility.size() != seqs.size() * ml * ml)
    raise(ErrorCode::ShapeMismatch,
          "visibility must be batch x max_len x max_len");
  return transformer_forward(enc, pb, &visibility, ml, mode, seed);
}

/// Accumulate parameter gradients for a scalar loss whose gradient w.r.t.
/// the returned per-token states is `d_states` (batch*seq*dim, the trimmed
/// layout of Forward::states).
template <class T>
void backward(const Encoder<T>& enc, const Forward<T>& fwd,
              const std::vector<T>& d_states, GradSet<T>& grads) {
  if (d_states.size() != fwd.states.size())
    raise(ErrorCode::ShapeMismatch, "d_states shape mismatch");
  if (fwd.t_trace)
    transformer_backward(enc, fwd, d_states, grads);
  else if (fwd.r_trace)
    recurrent_backward(enc, fwd, d_states, grads);
  else
    raise(ErrorCode::ShapeMismatch, "forward result carries no trace");
}

} // namespace cca
