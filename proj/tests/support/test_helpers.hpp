#pragma once

// Test-only helpers: independent naive reference implementations of the
// encoder forwards (used as oracles against the production path), a central
// finite-difference gradient checker, and small batch builders. The naive
// code deliberately mirrors the layer definitions, not the implementation:
// dense score matrices with additive masking, no trimming, no skip lists.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cca/encoder.hpp"
#include "cca/rng.hpp"
#include "cca/tokenizer.hpp"

namespace testutil {

using cca::Encoder;
using cca::GradSet;
using cca::TokenSeq;

inline TokenSeq make_seq(const std::vector<std::int32_t>& real_ids, int max_len) {
  TokenSeq s;
  s.ids.assign(static_cast<std::size_t>(max_len), cca::kPadId);
  s.attention_mask.assign(static_cast<std::size_t>(max_len), 0);
  std::size_t pos = 0;
  s.ids[pos++] = cca::kClsId;
  for (auto id : real_ids) s.ids[pos++] = id;
  s.ids[pos++] = cca::kSepId;
  s.true_length = static_cast<std::int32_t>(pos);
  for (std::size_t i = 0; i < pos; ++i) s.attention_mask[i] = 1;
  return s;
}

inline std::vector<TokenSeq> random_batch(int batch, int max_len, int vocab_size,
                                          int min_real, int max_real,
                                          std::uint64_t seed) {
  cca::Rng rng(seed);
  std::vector<TokenSeq> seqs;
  for (int b = 0; b < batch; ++b) {
    int n = min_real + static_cast<int>(rng.next_below(
                           static_cast<std::uint64_t>(max_real - min_real + 1)));
    std::vector<std::int32_t> ids;
    for (int t = 0; t < n; ++t)
      ids.push_back(cca::kNumSpecials +
                    static_cast<std::int32_t>(rng.next_below(
                        static_cast<std::uint64_t>(vocab_size - cca::kNumSpecials))));
    seqs.push_back(make_seq(ids, max_len));
  }
  return seqs;
}

// ---------------------------------------------------------------------------
// Naive transformer forward (double only)
// ---------------------------------------------------------------------------

template <class T>
const std::vector<T>& param(const Encoder<T>& enc, const std::string& name) {
  int i = enc.params.find(name);
  if (i < 0) throw std::runtime_error("missing param " + name);
  return enc.params.values[static_cast<std::size_t>(i)];
}

// visibility: optional dense max_len*max_len per sequence (1 = may attend);
// when empty, every non-PAD key is visible.
inline std::vector<std::vector<double>> naive_transformer_states(
    const Encoder<double>& enc, const TokenSeq& seq,
    const std::vector<std::uint8_t>& vis) {
  const auto& cfg = enc.config;
  const int S = seq.true_length; // positions beyond true_length are PAD
  const int H = cfg.hidden_size;
  const int A = cfg.num_heads;
  const int Dh = H / A;
  const int F = cfg.ff_size();
  const int ML = cfg.max_len;

  const auto& tok = param(enc, "embed.token");
  const auto& pos = param(enc, "embed.pos");
  std::vector<std::vector<double>> x(static_cast<std::size_t>(S),
                                     std::vector<double>(static_cast<std::size_t>(H)));
  for (int t = 0; t < S; ++t)
    for (int h = 0; h < H; ++h)
      x[t][h] = tok[static_cast<std::size_t>(seq.ids[t]) * H + h] +
                pos[static_cast<std::size_t>(t) * H + h];

  auto matvec = [&](const std::vector<double>& w, const std::vector<double>& b,
                    int out, int in, const std::vector<double>& v) {
    std::vector<double> y(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      double acc = b[static_cast<std::size_t>(o)];
      for (int i = 0; i < in; ++i)
        acc += w[static_cast<std::size_t>(o) * in + i] * v[static_cast<std::size_t>(i)];
      y[static_cast<std::size_t>(o)] = acc;
    }
    return y;
  };
  auto layer_norm = [&](const std::vector<double>& v, const std::vector<double>& g,
                        const std::vector<double>& b) {
    double mu = 0;
    for (double e : v) mu += e;
    mu /= static_cast<double>(v.size());
    double var = 0;
    for (double e : v) var += (e - mu) * (e - mu);
    var /= static_cast<double>(v.size());
    std::vector<double> y(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      y[i] = g[i] * (v[i] - mu) / std::sqrt(var + 1e-5) + b[i];
    return y;
  };

  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    std::vector<std::vector<double>> q(static_cast<std::size_t>(S)),
        k(static_cast<std::size_t>(S)), v(static_cast<std::size_t>(S));
    for (int t = 0; t < S; ++t) {
      q[static_cast<std::size_t>(t)] =
          matvec(param(enc, p + "attn.wq"), param(enc, p + "attn.bq"), H, H,
                 x[static_cast<std::size_t>(t)]);
      k[static_cast<std::size_t>(t)] =
          matvec(param(enc, p + "attn.wk"), param(enc, p + "attn.bk"), H, H,
                 x[static_cast<std::size_t>(t)]);
      v[static_cast<std::size_t>(t)] =
          matvec(param(enc, p + "attn.wv"), param(enc, p + "attn.bv"), H, H,
                 x[static_cast<std::size_t>(t)]);
    }
    std::vector<std::vector<double>> nxt(static_cast<std::size_t>(S));
    for (int t = 0; t < S; ++t) {
      std::vector<double> ctx(static_cast<std::size_t>(H), 0.0);
      for (int a = 0; a < A; ++a) {
        std::vector<double> scores(static_cast<std::size_t>(S), -1e30);
        for (int u = 0; u < S; ++u) {
          bool visible = vis.empty()
                             ? true
                             : vis[static_cast<std::size_t>(t) * ML + u] != 0;
          if (!visible) continue;
          double acc = 0;
          for (int d = 0; d < Dh; ++d)
            acc += q[static_cast<std::size_t>(t)][static_cast<std::size_t>(a * Dh + d)] *
                   k[static_cast<std::size_t>(u)][static_cast<std::size_t>(a * Dh + d)];
          scores[static_cast<std::size_t>(u)] = acc / std::sqrt(static_cast<double>(Dh));
        }
        double mx = -1e300;
        for (double s : scores) mx = std::max(mx, s);
        double denom = 0;
        std::vector<double> w(static_cast<std::size_t>(S));
        for (int u = 0; u < S; ++u) {
          w[static_cast<std::size_t>(u)] = std::exp(scores[static_cast<std::size_t>(u)] - mx);
          denom += w[static_cast<std::size_t>(u)];
        }
        for (int u = 0; u < S; ++u)
          for (int d = 0; d < Dh; ++d)
            ctx[static_cast<std::size_t>(a * Dh + d)] +=
                w[static_cast<std::size_t>(u)] / denom *
                v[static_cast<std::size_t>(u)][static_cast<std::size_t>(a * Dh + d)];
      }
      auto ao = matvec(param(enc, p + "attn.wo"), param(enc, p + "attn.bo"), H, H, ctx);
      std::vector<double> res1(static_cast<std::size_t>(H));
      for (int h = 0; h < H; ++h)
        res1[static_cast<std::size_t>(h)] =
            x[static_cast<std::size_t>(t)][static_cast<std::size_t>(h)] +
            ao[static_cast<std::size_t>(h)];
      auto mid = layer_norm(res1, param(enc, p + "ln1.gain"), param(enc, p + "ln1.bias"));
      auto pre = matvec(param(enc, p + "ffn.w1"), param(enc, p + "ffn.b1"), F, H, mid);
      for (auto& e : pre) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
      auto ff = matvec(param(enc, p + "ffn.w2"), param(enc, p + "ffn.b2"), H, F, pre);
      std::vector<double> res2(static_cast<std::size_t>(H));
      for (int h = 0; h < H; ++h)
        res2[static_cast<std::size_t>(h)] = mid[static_cast<std::size_t>(h)] +
                                            ff[static_cast<std::size_t>(h)];
      nxt[static_cast<std::size_t>(t)] =
          layer_norm(res2, param(enc, p + "ln2.gain"), param(enc, p + "ln2.bias"));
    }
    x = std::move(nxt);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Naive stacked-LSTM forward (double only)
// ---------------------------------------------------------------------------

inline std::vector<std::vector<double>> naive_lstm_states(
    const Encoder<double>& enc, const TokenSeq& seq) {
  const auto& cfg = enc.config;
  const int S = seq.true_length;
  auto sigmoid = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };

  const auto& tok = param(enc, "embed.token");
  std::vector<std::vector<double>> x(static_cast<std::size_t>(S));
  for (int t = 0; t < S; ++t) {
    x[static_cast<std::size_t>(t)].assign(static_cast<std::size_t>(cfg.embed_size), 0.0);
    for (int h = 0; h < cfg.embed_size; ++h)
      x[static_cast<std::size_t>(t)][static_cast<std::size_t>(h)] =
          tok[static_cast<std::size_t>(seq.ids[t]) * cfg.embed_size + h];
  }
  for (int l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const int I = cfg.lstm_in(l);
    const int O = cfg.lstm_out(l);
    const auto& w_ih = param(enc, p + "lstm.w_ih");
    const auto& w_hh = param(enc, p + "lstm.w_hh");
    const auto& bias = param(enc, p + "lstm.bias");
    std::vector<double> h(static_cast<std::size_t>(O), 0.0),
        c(static_cast<std::size_t>(O), 0.0);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(S));
    for (int t = 0; t < S; ++t) {
      std::vector<double> z(static_cast<std::size_t>(4 * O));
      for (int o = 0; o < 4 * O; ++o) {
        double acc = bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < I; ++i)
          acc += w_ih[static_cast<std::size_t>(o) * I + i] *
                 x[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
        for (int i = 0; i < O; ++i)
          acc += w_hh[static_cast<std::size_t>(o) * O + i] * h[static_cast<std::size_t>(i)];
        z[static_cast<std::size_t>(o)] = acc;
      }
      for (int o = 0; o < O; ++o) {
        const double gi = sigmoid(z[static_cast<std::size_t>(o)]);
        const double gf = sigmoid(z[static_cast<std::size_t>(O + o)]);
        const double gg = std::tanh(z[static_cast<std::size_t>(2 * O + o)]);
        const double go = sigmoid(z[static_cast<std::size_t>(3 * O + o)]);
        c[static_cast<std::size_t>(o)] = gf * c[static_cast<std::size_t>(o)] + gi * gg;
        h[static_cast<std::size_t>(o)] = go * std::tanh(c[static_cast<std::size_t>(o)]);
      }
      out[static_cast<std::size_t>(t)] = h;
    }
    x = std::move(out);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Central finite differences over every parameter of a double encoder.
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
};

template <class LossFn>
GradCheckResult grad_check(Encoder<double>& enc, LossFn&& loss_fn,
                           double h = 1e-5) {
  GradSet<double> grads = cca::zero_grads(enc.params);
  loss_fn(&grads);
  GradCheckResult r;
  for (std::size_t p = 0; p < enc.params.values.size(); ++p) {
    for (std::size_t i = 0; i < enc.params.values[p].size(); ++i) {
      double& w = enc.params.values[p][i];
      const double orig = w;
      w = orig + h;
      const double lp = loss_fn(nullptr);
      w = orig - h;
      const double lm = loss_fn(nullptr);
      w = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = grads[p][i];
      const double abs_err = std::abs(fd - an);
      r.max_abs_err = std::max(r.max_abs_err, abs_err);
      if (abs_err > 1e-8) {
        const double rel = abs_err / std::max({std::abs(fd), std::abs(an), 1e-8});
        r.max_rel_err = std::max(r.max_rel_err, rel);
      }
      ++r.checked;
    }
  }
  return r;
}

} // namespace testutil
