#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hapax/corpus.hpp"

namespace hapax {

// Synthetic natural-text stand-in: Zipf-weighted filler words driven by a
// sparse Markov chain, plus per-document random phrases that recur within
// the document. Phrase recurrence supplies the in-context repetition that
// induction heads feed on; filler statistics stay globally learnable.
struct SynthConfig {
  std::uint32_t vocab_words = 200;
  std::uint64_t target_tokens = 2'000'000;
  std::uint64_t seed = 0;
  std::uint32_t doc_len_min = 100;
  std::uint32_t doc_len_max = 400;
  std::uint32_t phrases_per_doc_min = 3;
  std::uint32_t phrases_per_doc_max = 6;
  std::uint32_t phrase_len_min = 2;
  std::uint32_t phrase_len_max = 6;
  double phrase_rate = 0.08;      // chance per step of re-emitting a phrase
  std::uint32_t markov_fanout = 12;
  double markov_rate = 0.75;      // chance of following the chain vs Zipf draw
};

// Deterministic pronounceable pseudo-words, no duplicates.
std::vector<std::string> synth_word_list(std::uint32_t n, std::uint64_t seed);

// Documents as whitespace-joined word strings totalling about target_tokens.
std::vector<std::string> synth_documents(const SynthConfig& cfg);

// Convenience: generate documents and build a corpus in one go.
Corpus synth_corpus(const SynthConfig& cfg, TokenizerScheme scheme);

}  // namespace hapax
