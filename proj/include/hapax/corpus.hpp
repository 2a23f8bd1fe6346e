#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hapax/tokenizer.hpp"

namespace hapax {

// A tokenized training/evaluation stream. Document boundary tokens separate
// documents; they are legal prediction targets and reset the mask scanner.
struct Corpus {
  Vocabulary vocab;
  std::vector<TokenId> stream;
  TokenizerScheme scheme = TokenizerScheme::byte_level;
  std::string source;

  std::size_t num_windows(std::uint32_t context_len) const {
    return stream.size() / context_len;
  }
  std::span<const TokenId> window(std::uint32_t context_len,
                                  std::size_t index) const {
    return std::span<const TokenId>(stream.data() + index * context_len,
                                    context_len);
  }
};

Corpus build_corpus(const std::vector<std::string>& documents,
                    TokenizerScheme scheme, std::string source);

// Binary layout: magic "HPXC", u32 LE version (1), u32 LE vocab size, u32 LE
// special count followed by (u32 id, u8 role) pairs, u64 LE token count, then
// u32 LE token ids. Vocabulary strings go to <path>.vocab (one escaped token
// per line, line number = id); scheme/source go to <path>.meta.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

std::uint64_t corpus_checksum(const Corpus& corpus);

// Deterministic epoch-shuffled stream of non-overlapping context windows.
// Each epoch visits every full window exactly once; the trailing remainder
// shorter than one window is dropped.
class WindowBatcher {
 public:
  WindowBatcher(const Corpus& corpus, std::uint32_t context_len,
                std::uint32_t batch_size, std::uint64_t seed);

  std::size_t windows_per_epoch() const { return order_.size(); }

  // Fills `out` with batch_size windows; advances across epoch boundaries.
  void next_batch(std::vector<std::span<const TokenId>>& out);

 private:
  const Corpus& corpus_;
  std::uint32_t context_len_;
  std::uint32_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::uint32_t> order_;

  void reshuffle();
};

}  // namespace hapax
