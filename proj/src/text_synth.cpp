#include "hapax/text_synth.hpp"

#include <random>
#include <unordered_set>

namespace hapax {

std::vector<std::string> synth_word_list(std::uint32_t n, std::uint64_t seed) {
  static const char* onsets[] = {"b", "d", "f", "g", "k", "l",  "m",  "n",
                                 "p", "r", "s", "t", "v", "z",  "st", "tr",
                                 "br", "gl", "pr", "sk"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};
  static const char* codas[] = {"",  "",  "n", "r", "s", "l",
                                "k", "m", "t", "nd"};
  auto rng = make_rng(seed, "synth.words");
  std::uniform_int_distribution<std::size_t> pick_onset(0, 19);
  std::uniform_int_distribution<std::size_t> pick_vowel(0, 7);
  std::uniform_int_distribution<std::size_t> pick_coda(0, 9);
  std::uniform_int_distribution<int> pick_syllables(1, 3);

  std::vector<std::string> words;
  std::unordered_set<std::string> used;
  while (words.size() < n) {
    std::string w;
    int syllables = pick_syllables(rng);
    for (int s = 0; s < syllables; ++s) {
      w += onsets[pick_onset(rng)];
      w += vowels[pick_vowel(rng)];
      if (s + 1 == syllables) w += codas[pick_coda(rng)];
    }
    if (used.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

std::vector<std::string> synth_documents(const SynthConfig& cfg) {
  if (cfg.vocab_words < 8) throw ConfigError("synth vocab too small");
  if (cfg.doc_len_min < 4 || cfg.doc_len_max < cfg.doc_len_min)
    throw ConfigError("bad synth document length range");

  const auto words = synth_word_list(cfg.vocab_words, cfg.seed);
  const std::uint32_t v = cfg.vocab_words;

  // Zipf weights over word ranks.
  std::vector<double> zipf(v);
  for (std::uint32_t i = 0; i < v; ++i) zipf[i] = 1.0 / double(i + 1);
  std::discrete_distribution<std::uint32_t> zipf_draw(zipf.begin(),
                                                      zipf.end());

  // Fixed sparse successor table: filler text follows these transitions most
  // of the time, giving the model learnable local statistics.
  std::vector<std::vector<std::uint32_t>> successors(v);
  {
    auto rng = make_rng(cfg.seed, "synth.markov");
    std::uniform_int_distribution<std::uint32_t> any(0, v - 1);
    for (std::uint32_t w = 0; w < v; ++w) {
      successors[w].resize(cfg.markov_fanout);
      for (auto& s : successors[w]) s = any(rng);
    }
  }

  std::vector<std::string> docs;
  std::uint64_t emitted = 0;
  std::uint64_t doc_index = 0;
  while (emitted < cfg.target_tokens) {
    auto rng = make_rng(cfg.seed, "synth.doc", doc_index++);
    std::uniform_int_distribution<std::uint32_t> len_draw(cfg.doc_len_min,
                                                          cfg.doc_len_max);
    std::uniform_int_distribution<std::uint32_t> n_phrases_draw(
        cfg.phrases_per_doc_min, cfg.phrases_per_doc_max);
    std::uniform_int_distribution<std::uint32_t> phrase_len_draw(
        cfg.phrase_len_min, cfg.phrase_len_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const std::uint32_t doc_len = len_draw(rng);
    // Document-specific random phrases; their recurrence is the in-context
    // repetition signal.
    std::vector<std::vector<std::uint32_t>> phrases(n_phrases_draw(rng));
    for (auto& phrase : phrases) {
      phrase.resize(phrase_len_draw(rng));
      for (auto& t : phrase) t = zipf_draw(rng);
    }
    std::uniform_int_distribution<std::size_t> pick_phrase(
        0, phrases.size() - 1);

    std::vector<std::uint32_t> toks;
    toks.reserve(doc_len + cfg.phrase_len_max);
    std::uint32_t prev = zipf_draw(rng);
    toks.push_back(prev);
    while (toks.size() < doc_len) {
      if (unit(rng) < cfg.phrase_rate) {
        const auto& phrase = phrases[pick_phrase(rng)];
        toks.insert(toks.end(), phrase.begin(), phrase.end());
        prev = phrase.back();
      } else {
        std::uint32_t next;
        if (unit(rng) < cfg.markov_rate) {
          std::uniform_int_distribution<std::size_t> pick(
              0, successors[prev].size() - 1);
          next = successors[prev][pick(rng)];
        } else {
          next = zipf_draw(rng);
        }
        toks.push_back(next);
        prev = next;
      }
    }

    std::string doc;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      if (i) doc += ' ';
      doc += words[toks[i]];
    }
    emitted += toks.size();
    docs.push_back(std::move(doc));
  }
  return docs;
}

Corpus synth_corpus(const SynthConfig& cfg, TokenizerScheme scheme) {
  auto docs = synth_documents(cfg);
  std::string source = "synthetic(seed=" + std::to_string(cfg.seed) +
                       ",words=" + std::to_string(cfg.vocab_words) +
                       ",tokens=" + std::to_string(cfg.target_tokens) + ")";
  return build_corpus(docs, scheme, source);
}

}  // namespace hapax
