#pragma once

#include <string>
#include <vector>

#include "cca/encoder.hpp"
#include "cca/error.hpp"
#include "cca/pretrain.hpp"

namespace cca {

/// Named model-family presets. The -mini configs are desk-scale defaults;
/// the -paper configs carry the published sizes and are guarded behind an
/// explicit opt-in because they are far too large to train here.
struct Preset {
  std::string name;
  EncoderConfig config; // vocab_size is filled in from the actual vocabulary
  Objective objective = Objective::Masked;
  bool large = false;
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = [] {
    std::vector<Preset> v;
    EncoderConfig mini_t;
    mini_t.family = EncoderFamily::Transformer;
    mini_t.num_layers = 2;
    mini_t.hidden_size = 64;
    mini_t.num_heads = 2;
    mini_t.embed_size = 64;
    mini_t.max_len = 128;
    mini_t.dropout = 0.1;

    EncoderConfig mini_r;
    mini_r.family = EncoderFamily::Recurrent;
    mini_r.num_layers = 2;
    mini_r.hidden_size = 64;
    mini_r.num_heads = 1;
    mini_r.embed_size = 32;
    mini_r.max_len = 128;
    mini_r.dropout = 0.1;

    EncoderConfig paper_t;
    paper_t.family = EncoderFamily::Transformer;
    paper_t.num_layers = 12;
    paper_t.hidden_size = 768;
    paper_t.num_heads = 12;
    paper_t.embed_size = 768;
    paper_t.max_len = 128;
    paper_t.dropout = 0.1;

    EncoderConfig paper_r;
    paper_r.family = EncoderFamily::Recurrent;
    paper_r.num_layers = 3;
    paper_r.hidden_size = 1150;
    paper_r.num_heads = 1;
    paper_r.embed_size = 400;
    paper_r.max_len = 128;
    paper_r.dropout = 0.1;

    v.push_back({"ulmfit-mini", mini_r, Objective::Causal, false});
    v.push_back({"bert-mini", mini_t, Objective::Masked, false});
    v.push_back({"xlnet-mini", mini_t, Objective::Permutation, false});
    v.push_back({"ulmfit-paper", paper_r, Objective::Causal, true});
    v.push_back({"bert-base-paper", paper_t, Objective::Masked, true});
    v.push_back({"xlnet-base-paper", paper_t, Objective::Permutation, true});
    return v;
  }();
  return all;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  std::string known;
  for (const auto& p : presets()) known += (known.empty() ? "" : ", ") + p.name;
  raise(ErrorCode::InvalidConfig, "unknown model preset '" + name +
                                      "' (known: " + known + ")");
}

} // namespace cca
