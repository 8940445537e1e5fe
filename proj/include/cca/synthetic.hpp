#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cca/corpus.hpp"
#include "cca/rng.hpp"

namespace cca {

/// Deterministic synthetic corpus whose classes are separable from surface
/// vocabulary: every class owns a set of marker words that never appear in
/// the other classes. Used for end-to-end sanity runs.
inline Corpus make_separable_corpus(std::size_t n_records, std::size_t n_classes,
                                    std::uint64_t seed) {
  static const std::vector<std::vector<std::string>> marker_sets = {
      {"quadrature", "spline", "lattice", "manifold"},
      {"annealing", "swarm", "entropy", "gradient"},
      {"wavelet", "kernel", "cepstrum", "spectrogram"},
      {"automaton", "grammar", "parser", "lexicon"},
      {"ledger", "consensus", "quorum", "replica"},
      {"photon", "plasma", "resonance", "cavity"},
  };
  static const std::vector<std::string> fillers = {
      "the", "method", "of", "was", "applied", "to", "this", "problem",
      "results", "show", "that", "approach", "in", "prior", "work", "study"};
  static const std::vector<std::string> class_names = {"Alpha", "Beta", "Gamma",
                                                       "Delta", "Epsilon", "Zeta"};
  if (n_classes < 2 || n_classes > marker_sets.size())
    raise(ErrorCode::InvalidConfig, "n_classes must lie in [2, " +
                                        std::to_string(marker_sets.size()) + "]");
  Corpus corpus;
  corpus.dataset = Dataset::DFKI; // canonical JSONL needs a dataset tag
  Rng rng(seed);
  for (std::size_t i = 0; i < n_records; ++i) {
    const std::size_t cls = i % n_classes;
    const auto& markers = marker_sets[cls];
    CitationContext r;
    r.id = "synth-" + std::to_string(i);
    r.dataset = corpus.dataset;
    std::string text = "the cited work [" + std::to_string(1 + rng.next_below(40)) + "]";
    const std::size_t n_words = 6 + rng.next_below(6);
    for (std::size_t w = 0; w < n_words; ++w) {
      if (w % 3 == 1)
        text += " " + markers[rng.next_below(markers.size())];
      else
        text += " " + fillers[rng.next_below(fillers.size())];
    }
    r.text = normalize_whitespace(text);
    r.function_label = class_names[cls];
    r.meta["origin"] = "synthetic";
    corpus.records.push_back(std::move(r));
  }
  attach_schemes(corpus);
  corpus.validate();
  return corpus;
}

} // namespace cca
