#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "cca/error.hpp"
#include "cca/text.hpp"

namespace cca {

// Special token ids. PAD must stay 0 so zero-filled buffers are valid padding.
inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int32_t kClsId = 2;
inline constexpr std::int32_t kSepId = 3;
inline constexpr std::int32_t kMaskId = 4;
inline constexpr std::int32_t kNumSpecials = 5;

inline bool is_special_id(std::int32_t id) { return id < kNumSpecials; }

/// Fixed-length encoded input.
struct TokenSeq {
  std::vector<std::int32_t> ids;        // length == max_len
  std::vector<std::uint8_t> attention_mask; // 1 for non-PAD positions
  std::int32_t true_length = 0;         // non-PAD count, includes CLS/SEP
  bool truncated = false;

  std::int32_t max_len() const { return static_cast<std::int32_t>(ids.size()); }
};

/// Byte-pair subword vocabulary with character fallback. Pre-tokens are
/// whitespace-delimited words plus single-space symbols, so merges never
/// cross word boundaries and decoding restores normalized text verbatim.
struct Vocab {
  std::vector<std::string> tokens; // id order; first five are the specials
  std::vector<std::pair<std::string, std::string>> merges; // creation order

  std::unordered_map<std::string, std::int32_t> token_to_id;
  std::map<std::pair<std::string, std::string>, std::size_t> merge_rank;

  std::size_t size() const { return tokens.size(); }

  void rebuild_index() {
    token_to_id.clear();
    for (std::size_t i = 0; i < tokens.size(); ++i)
      token_to_id[tokens[i]] = static_cast<std::int32_t>(i);
    merge_rank.clear();
    for (std::size_t i = 0; i < merges.size(); ++i) merge_rank[merges[i]] = i;
  }

  std::int32_t id_of(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnkId : it->second;
  }

  /// Greedy rank-ordered BPE segmentation of one pre-token.
  std::vector<std::int32_t> encode_word(const std::string& word) const {
    std::vector<std::string> sym = utf8_chars(word);
    while (sym.size() > 1) {
      std::size_t best_rank = merges.size();
      std::size_t best_pos = 0;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
        auto it = merge_rank.find({sym[i], sym[i + 1]});
        if (it != merge_rank.end() && it->second < best_rank) {
          best_rank = it->second;
          best_pos = i;
        }
      }
      if (best_rank == merges.size()) break;
      // apply the best-ranked merge at every occurrence, left to right
      const std::string left = sym[best_pos];
      const std::string right = sym[best_pos + 1];
      std::vector<std::string> next;
      next.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size();) {
        if (i + 1 < sym.size() && sym[i] == left && sym[i + 1] == right) {
          next.push_back(left + right);
          i += 2;
        } else {
          next.push_back(sym[i]);
          ++i;
        }
      }
      sym = std::move(next);
    }
    std::vector<std::int32_t> ids;
    ids.reserve(sym.size());
    for (const auto& s : sym) ids.push_back(id_of(s));
    return ids;
  }
};

namespace detail {

inline const char* special_name(std::int32_t id) {
  switch (id) {
    case kPadId: return "<pad>";
    case kUnkId: return "<unk>";
    case kClsId: return "<cls>";
    case kSepId: return "<sep>";
    case kMaskId: return "<mask>";
  }
  return "?";
}

// Pre-tokens of one normalized text: words and single-space symbols.
inline std::vector<std::string> pretokens(const std::string& normalized) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : normalized) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      out.push_back(" ");
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string escape_token(const std::string& t) {
  std::string out;
  for (unsigned char c : t) {
    if (c == '%' || c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      char buf[4];
      std::snprintf(buf, sizeof(buf), "%%%02X", c);
      out += buf;
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

inline std::string unescape_token(const std::string& t) {
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == '%') {
      if (i + 2 >= t.size())
        raise(ErrorCode::CorruptBlob, "truncated escape in vocab token");
      auto hex = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        return -1;
      };
      int hi = hex(t[i + 1]);
      int lo = hex(t[i + 2]);
      if (hi < 0 || lo < 0)
        raise(ErrorCode::CorruptBlob, "bad escape in vocab token '" + t + "'");
      out.push_back(static_cast<char>(hi * 16 + lo));
      i += 2;
    } else {
      out.push_back(t[i]);
    }
  }
  return out;
}

} // namespace detail

/// Learn a BPE vocabulary of (at most) `vocab_size` entries: five specials,
/// the training alphabet, then frequency-greedy merges. Ties on pair counts
/// break toward the lexicographically smaller pair so training is a pure
/// function of the input texts. The seed parameter is accepted for interface
/// stability; the algorithm has no random choices.
template <class TextIt>
Vocab train_vocab(TextIt begin, TextIt end, std::size_t vocab_size,
                  std::uint64_t /*seed*/ = 0) {
  // word -> count over normalized pre-tokens
  std::map<std::string, std::size_t> word_count;
  for (TextIt it = begin; it != end; ++it) {
    std::string norm = normalize_whitespace(*it);
    for (auto& w : detail::pretokens(norm)) ++word_count[w];
  }
  if (word_count.empty()) raise(ErrorCode::EmptyCorpus, "no text to train on");

  std::set<std::string> alphabet;
  for (const auto& [w, n] : word_count)
    for (const auto& ch : utf8_chars(w)) alphabet.insert(ch);

  const std::size_t floor_size = kNumSpecials + alphabet.size();
  if (vocab_size < floor_size)
    raise(ErrorCode::VocabTooSmall,
          "vocab_size " + std::to_string(vocab_size) + " < specials+alphabet " +
              std::to_string(floor_size));

  Vocab v;
  for (std::int32_t i = 0; i < kNumSpecials; ++i)
    v.tokens.emplace_back(detail::special_name(i));
  for (const auto& ch : alphabet) v.tokens.push_back(ch);

  // working segmentation of every distinct word
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  words.reserve(word_count.size());
  for (const auto& [w, n] : word_count) words.push_back({utf8_chars(w), n});

  std::size_t merges_left = vocab_size - floor_size;
  while (merges_left > 0) {
    std::map<std::pair<std::string, std::string>, std::size_t> pair_count;
    for (const auto& [sym, n] : words)
      for (std::size_t i = 0; i + 1 < sym.size(); ++i)
        pair_count[{sym[i], sym[i + 1]}] += n;
    if (pair_count.empty()) break;
    auto best = pair_count.begin();
    for (auto it = pair_count.begin(); it != pair_count.end(); ++it)
      if (it->second > best->second) best = it; // ties: first in map order
    const auto [left, right] = best->first;
    const std::string merged = left + right;
    for (auto& [sym, n] : words) {
      std::vector<std::string> next;
      next.reserve(sym.size());
      for (std::size_t i = 0; i < sym.size();) {
        if (i + 1 < sym.size() && sym[i] == left && sym[i + 1] == right) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(sym[i]);
          ++i;
        }
      }
      sym = std::move(next);
    }
    v.merges.push_back({left, right});
    v.tokens.push_back(merged);
    --merges_left;
  }
  v.rebuild_index();
  return v;
}

inline Vocab train_vocab(const std::vector<std::string>& texts,
                         std::size_t vocab_size, std::uint64_t seed = 0) {
  return train_vocab(texts.begin(), texts.end(), vocab_size, seed);
}

/// [CLS] subwords [SEP], head-truncated to max_len, PAD-filled.
inline TokenSeq encode(const Vocab& vocab, const std::string& text,
                       std::int32_t max_len = 128) {
  if (max_len < 3)
    raise(ErrorCode::InvalidConfig, "max_len must leave room for CLS and SEP");
  std::string norm = normalize_whitespace(text);
  if (norm.empty()) raise(ErrorCode::EmptyText, "text empty after normalization");

  std::vector<std::int32_t> body;
  for (const auto& w : detail::pretokens(norm)) {
    auto ids = vocab.encode_word(w);
    body.insert(body.end(), ids.begin(), ids.end());
  }

  TokenSeq seq;
  seq.ids.assign(static_cast<std::size_t>(max_len), kPadId);
  seq.attention_mask.assign(static_cast<std::size_t>(max_len), 0);
  const std::size_t budget = static_cast<std::size_t>(max_len) - 2;
  seq.truncated = body.size() > budget;
  if (seq.truncated) body.resize(budget);

  std::size_t pos = 0;
  seq.ids[pos++] = kClsId;
  for (std::int32_t id : body) seq.ids[pos++] = id;
  seq.ids[pos++] = kSepId;
  seq.true_length = static_cast<std::int32_t>(pos);
  for (std::size_t i = 0; i < pos; ++i) seq.attention_mask[i] = 1;
  return seq;
}

/// Inverse of encode for untruncated inputs; specials are dropped, UNK
/// becomes U+FFFD.
inline std::string decode(const Vocab& vocab, const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    std::int32_t id = seq.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
      raise(ErrorCode::UnknownId, "token id " + std::to_string(id) +
                                      " outside vocabulary of size " +
                                      std::to_string(vocab.size()));
    if (id == kUnkId) {
      out += "\xEF\xBF\xBD";
      continue;
    }
    if (is_special_id(id)) continue;
    out += vocab.tokens[static_cast<std::size_t>(id)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocab file format: a versioned text file, one token per line in id order,
// then the merge table. Tokens are percent-escaped so space itself can be a
// token.
// ---------------------------------------------------------------------------

inline void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "cca-vocab v1\n";
  out << "tokens " << vocab.tokens.size() << "\n";
  out << "merges " << vocab.merges.size() << "\n";
  for (const auto& t : vocab.tokens) out << detail::escape_token(t) << "\n";
  for (const auto& [l, r] : vocab.merges)
    out << detail::escape_token(l) << " " << detail::escape_token(r) << "\n";
  if (!out) raise(ErrorCode::IoFailure, "write failed for " + path.string());
}

inline Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::MissingFile, "cannot open " + path.string());
  std::string line;
  auto next_line = [&]() -> std::string {
    if (!std::getline(in, line))
      raise(ErrorCode::CorruptBlob, "truncated vocab file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  if (next_line() != "cca-vocab v1")
    raise(ErrorCode::VersionMismatch, "unsupported vocab header in " + path.string());
  std::size_t n_tokens = 0, n_merges = 0;
  if (std::sscanf(next_line().c_str(), "tokens %zu", &n_tokens) != 1)
    raise(ErrorCode::CorruptBlob, "bad tokens line");
  if (std::sscanf(next_line().c_str(), "merges %zu", &n_merges) != 1)
    raise(ErrorCode::CorruptBlob, "bad merges line");
  Vocab v;
  for (std::size_t i = 0; i < n_tokens; ++i)
    v.tokens.push_back(detail::unescape_token(next_line()));
  for (std::size_t i = 0; i < n_merges; ++i) {
    std::string l = next_line();
    auto sp = l.find(' ');
    if (sp == std::string::npos)
      raise(ErrorCode::CorruptBlob, "bad merge line '" + l + "'");
    v.merges.push_back(
        {detail::unescape_token(l.substr(0, sp)),
         detail::unescape_token(l.substr(sp + 1))});
  }
  if (v.tokens.size() < static_cast<std::size_t>(kNumSpecials))
    raise(ErrorCode::CorruptBlob, "vocab smaller than the special set");
  v.rebuild_index();
  return v;
}

} // namespace cca
