#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hapax/corpus.hpp"

namespace hapax {

enum class MaskMode { none, exact, thresholded };
const char* mask_mode_name(MaskMode m);
MaskMode mask_mode_from_name(std::string_view name);

// Masked positions within one window, 1-based. Position j is masked when the
// bigram ending at j matched an earlier bigram in the same window; positions
// 1 and 2 can never be masked (a prior match needs j >= 3).
struct MaskSet {
  std::uint32_t window_len = 0;
  std::vector<std::uint8_t> flags;  // size window_len + 1, index = position
  std::uint32_t count = 0;

  bool is_masked(std::uint32_t pos) const {
    return pos >= 1 && pos <= window_len && flags[pos] != 0;
  }
  std::vector<std::uint32_t> positions() const;
  // Predictable positions (2..T) left unmasked; Eq-style |U| restricted to
  // positions the model actually predicts.
  std::uint32_t unmasked_targets() const {
    return window_len >= 2 ? window_len - 1 - count : 0;
  }
};

// Earliest-match bookkeeping for the prefix-matching penalty: for each masked
// position j, the smallest i < j whose bigram matched.
struct MaskMatches {
  std::vector<std::uint32_t> position;  // masked j (1-based)
  std::vector<std::uint32_t> match;     // earliest i (1-based)
};

// Open-addressing set of packed bigram keys; one instance is reused across
// windows in the hot training loop.
class BigramSet {
 public:
  void reset(std::size_t expected);
  bool insert(std::uint64_t key);  // returns false if already present
  bool contains(std::uint64_t key) const;
  // First position associated with a key (for earliest-match queries).
  std::uint32_t find_or_insert(std::uint64_t key, std::uint32_t value);

 private:
  static constexpr std::uint64_t kEmpty = ~0ull;
  std::vector<std::uint64_t> keys_;
  std::vector<std::uint32_t> values_;
  std::uint64_t mask_ = 0;
};

// Exact bigram scanner. Bigrams that touch a doc boundary token are neither
// recorded nor matched, and the seen-set resets after each boundary.
class ExactMasker {
 public:
  explicit ExactMasker(std::optional<TokenId> boundary = std::nullopt)
      : boundary_(boundary) {}
  MaskSet mask(std::span<const TokenId> window,
               MaskMatches* matches = nullptr) const;

 private:
  std::optional<TokenId> boundary_;
  mutable BigramSet seen_;
};

MaskSet mask_exact(std::span<const TokenId> window,
                   std::optional<TokenId> boundary = std::nullopt,
                   MaskMatches* matches = nullptr);

// Per-token-id embedding vectors used by the thresholded scanner and the
// neighbor statistics.
struct EmbeddingTable {
  Eigen::MatrixXf vectors;  // [vocab, d]
  std::string source;
};

struct ThresholdConfig {
  float tau = 0.3f;
  std::uint32_t neighbor_cap = 64;
};

// Cosine-thresholded scanner: position j is masked when some earlier bigram
// matches both slots under cos > tau. The fast path enumerates neighbor-set
// candidate pairs against the seen-set; when the candidate product exceeds
// neighbor_cap^2 it falls back to a direct scan over earlier positions.
class ThresholdedMasker {
 public:
  ThresholdedMasker(const EmbeddingTable& emb, ThresholdConfig cfg,
                    std::optional<TokenId> boundary = std::nullopt);

  MaskSet mask(std::span<const TokenId> window,
               MaskMatches* matches = nullptr) const;

  float cosine(TokenId a, TokenId b) const {
    return normalized_.row(a).dot(normalized_.row(b));
  }
  const std::vector<std::vector<TokenId>>& neighbors() const {
    return neighbors_;
  }

 private:
  ThresholdConfig cfg_;
  std::optional<TokenId> boundary_;
  Eigen::MatrixXf normalized_;  // zero rows stay zero => cosine 0
  std::vector<std::vector<TokenId>> neighbors_;
  mutable BigramSet seen_;

  bool similar(TokenId a, TokenId b) const { return cosine(a, b) > cfg_.tau; }
};

MaskSet mask_thresholded(std::span<const TokenId> window,
                         const EmbeddingTable& emb, const ThresholdConfig& cfg,
                         std::optional<TokenId> boundary = std::nullopt);

struct MaskFractionReport {
  double fraction = 0.0;                  // masked / total window positions
  std::uint64_t masked_positions = 0;
  std::uint64_t total_positions = 0;
  std::uint64_t windows = 0;
  std::vector<std::uint64_t> histogram;   // histogram[k] = windows with k masked
};

MaskFractionReport mask_fraction(const Corpus& corpus, MaskMode mode,
                                 std::uint32_t context_len,
                                 const ThresholdedMasker* thresholded = nullptr);

struct NeighborStats {
  std::vector<double> mean_cosine;         // index k-1
  std::vector<double> mean_edit_distance;  // index k-1
};

// For every token, neighbors ranked by descending cosine (self excluded);
// reports the mean cosine and mean Levenshtein distance of the k-th neighbor.
NeighborStats nearest_neighbor_stats(const EmbeddingTable& emb,
                                     const Vocabulary& vocab,
                                     std::uint32_t k_max);

std::uint32_t levenshtein(std::string_view a, std::string_view b);

// Mask export per the external contract: CSV rows (window_index, positions
// space-separated) or a packed little-endian bitmask (bit t-1 = position t).
void write_masks_csv(const std::filesystem::path& path,
                     std::span<const MaskSet> masks);
void write_masks_bits(const std::filesystem::path& path,
                      std::span<const MaskSet> masks);

}  // namespace hapax
