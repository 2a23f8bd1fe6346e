#include "hapax/masking.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <numeric>

#include "hapax/csvio.hpp"

namespace hapax {

const char* mask_mode_name(MaskMode m) {
  switch (m) {
    case MaskMode::none:
      return "none";
    case MaskMode::exact:
      return "exact";
    case MaskMode::thresholded:
      return "thresholded";
  }
  return "?";
}

MaskMode mask_mode_from_name(std::string_view name) {
  if (name == "none") return MaskMode::none;
  if (name == "exact") return MaskMode::exact;
  if (name == "thresholded") return MaskMode::thresholded;
  throw ConfigError("unknown mask mode: " + std::string(name));
}

std::vector<std::uint32_t> MaskSet::positions() const {
  std::vector<std::uint32_t> out;
  out.reserve(count);
  for (std::uint32_t p = 1; p <= window_len; ++p)
    if (flags[p]) out.push_back(p);
  return out;
}

void BigramSet::reset(std::size_t expected) {
  std::size_t cap = std::bit_ceil(std::max<std::size_t>(16, expected * 2));
  if (keys_.size() != cap) {
    keys_.assign(cap, kEmpty);
    values_.assign(cap, 0);
  } else {
    std::fill(keys_.begin(), keys_.end(), kEmpty);
  }
  mask_ = cap - 1;
}

bool BigramSet::insert(std::uint64_t key) {
  std::uint64_t slot = mix64(key) & mask_;
  while (keys_[slot] != kEmpty) {
    if (keys_[slot] == key) return false;
    slot = (slot + 1) & mask_;
  }
  keys_[slot] = key;
  return true;
}

bool BigramSet::contains(std::uint64_t key) const {
  std::uint64_t slot = mix64(key) & mask_;
  while (keys_[slot] != kEmpty) {
    if (keys_[slot] == key) return true;
    slot = (slot + 1) & mask_;
  }
  return false;
}

std::uint32_t BigramSet::find_or_insert(std::uint64_t key,
                                        std::uint32_t value) {
  std::uint64_t slot = mix64(key) & mask_;
  while (keys_[slot] != kEmpty) {
    if (keys_[slot] == key) return values_[slot];
    slot = (slot + 1) & mask_;
  }
  keys_[slot] = key;
  values_[slot] = value;
  return value;
}

namespace {

inline std::uint64_t pack(TokenId a, TokenId b) {
  return (std::uint64_t(a) << 32) | std::uint64_t(b);
}

MaskSet make_empty_mask(std::size_t len) {
  MaskSet m;
  m.window_len = static_cast<std::uint32_t>(len);
  m.flags.assign(len + 1, 0);
  return m;
}

}  // namespace

MaskSet ExactMasker::mask(std::span<const TokenId> window,
                          MaskMatches* matches) const {
  MaskSet m = make_empty_mask(window.size());
  if (matches) {
    matches->position.clear();
    matches->match.clear();
  }
  if (window.size() < 3) return m;
  seen_.reset(window.size());
  // 1-based positions; bigram at j is (x_{j-1}, x_j).
  for (std::uint32_t j = 2; j <= window.size(); ++j) {
    TokenId prev = window[j - 2];
    TokenId cur = window[j - 1];
    if (boundary_ && (prev == *boundary_ || cur == *boundary_)) {
      if (cur == *boundary_) seen_.reset(window.size());
      continue;
    }
    std::uint32_t first = seen_.find_or_insert(pack(prev, cur), j);
    if (first != j) {
      m.flags[j] = 1;
      ++m.count;
      if (matches) {
        matches->position.push_back(j);
        matches->match.push_back(first);
      }
    }
  }
  return m;
}

MaskSet mask_exact(std::span<const TokenId> window,
                   std::optional<TokenId> boundary, MaskMatches* matches) {
  return ExactMasker(boundary).mask(window, matches);
}

ThresholdedMasker::ThresholdedMasker(const EmbeddingTable& emb,
                                     ThresholdConfig cfg,
                                     std::optional<TokenId> boundary)
    : cfg_(cfg), boundary_(boundary) {
  if (!emb.vectors.allFinite())
    throw ConfigError("embedding table contains non-finite entries");
  if (cfg_.neighbor_cap < 1) throw ConfigError("neighbor_cap must be >= 1");
  normalized_ = emb.vectors;
  for (Eigen::Index r = 0; r < normalized_.rows(); ++r) {
    float n = normalized_.row(r).norm();
    if (n > 0.0f) normalized_.row(r) /= n;
  }
  const auto v = static_cast<TokenId>(normalized_.rows());
  neighbors_.resize(v);
  Eigen::MatrixXf sims = normalized_ * normalized_.transpose();
  for (TokenId a = 0; a < v; ++a)
    for (TokenId b = 0; b < v; ++b)
      if (sims(a, b) > cfg_.tau) neighbors_[a].push_back(b);
}

MaskSet ThresholdedMasker::mask(std::span<const TokenId> window,
                                MaskMatches* matches) const {
  MaskSet m = make_empty_mask(window.size());
  if (matches) {
    matches->position.clear();
    matches->match.clear();
  }
  const auto vocab = static_cast<TokenId>(normalized_.rows());
  for (TokenId id : window)
    if (id >= vocab)
      throw ConfigError("token id " + std::to_string(id) +
                        " has no embedding (table rows: " +
                        std::to_string(vocab) + ")");
  if (window.size() < 3) return m;

  seen_.reset(window.size());
  const std::uint64_t cap2 =
      std::uint64_t(cfg_.neighbor_cap) * cfg_.neighbor_cap;
  // Positions of recorded bigrams since the last boundary, for the fallback
  // scan and for earliest-match lookups.
  std::vector<std::uint32_t> recorded;
  recorded.reserve(window.size());

  for (std::uint32_t j = 2; j <= window.size(); ++j) {
    TokenId prev = window[j - 2];
    TokenId cur = window[j - 1];
    if (boundary_ && (prev == *boundary_ || cur == *boundary_)) {
      if (cur == *boundary_) {
        seen_.reset(window.size());
        recorded.clear();
      }
      continue;
    }
    bool hit = false;
    std::uint32_t earliest = 0;
    const auto& na = neighbors_[prev];
    const auto& nb = neighbors_[cur];
    if (!matches && std::uint64_t(na.size()) * nb.size() <= cap2) {
      for (TokenId u : na) {
        for (TokenId w : nb) {
          if (seen_.contains(pack(u, w))) {
            hit = true;
            break;
          }
        }
        if (hit) break;
      }
    } else {
      // Direct scan over earlier recorded bigrams; also yields the earliest
      // matching position when the caller wants matches.
      for (std::uint32_t i : recorded) {
        if (similar(window[i - 2], prev) && similar(window[i - 1], cur)) {
          hit = true;
          earliest = i;
          break;
        }
      }
    }
    if (hit) {
      m.flags[j] = 1;
      ++m.count;
      if (matches) {
        matches->position.push_back(j);
        matches->match.push_back(earliest);
      }
    }
    seen_.insert(pack(prev, cur));
    recorded.push_back(j);
  }
  return m;
}

MaskSet mask_thresholded(std::span<const TokenId> window,
                         const EmbeddingTable& emb, const ThresholdConfig& cfg,
                         std::optional<TokenId> boundary) {
  return ThresholdedMasker(emb, cfg, boundary).mask(window);
}

MaskFractionReport mask_fraction(const Corpus& corpus, MaskMode mode,
                                 std::uint32_t context_len,
                                 const ThresholdedMasker* thresholded) {
  if (context_len < 2) throw ConfigError("context_len must be >= 2");
  std::size_t windows = corpus.num_windows(context_len);
  if (windows == 0)
    throw ConfigError("corpus shorter than one context window");
  if (mode == MaskMode::thresholded && thresholded == nullptr)
    throw ConfigError("thresholded mask_fraction needs a ThresholdedMasker");

  MaskFractionReport report;
  report.windows = windows;
  report.histogram.assign(context_len + 1, 0);
  ExactMasker exact(corpus.vocab.doc_boundary());
  for (std::size_t w = 0; w < windows; ++w) {
    auto win = corpus.window(context_len, w);
    std::uint32_t count = 0;
    if (mode == MaskMode::exact) {
      count = exact.mask(win).count;
    } else if (mode == MaskMode::thresholded) {
      count = thresholded->mask(win).count;
    }
    report.masked_positions += count;
    report.total_positions += context_len;
    ++report.histogram[count];
  }
  report.fraction =
      double(report.masked_positions) / double(report.total_positions);
  return report;
}

std::uint32_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::uint32_t> row(b.size() + 1);
  std::iota(row.begin(), row.end(), 0u);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::uint32_t diag = row[0];
    row[0] = static_cast<std::uint32_t>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::uint32_t up = row[j];
      std::uint32_t sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[b.size()];
}

NeighborStats nearest_neighbor_stats(const EmbeddingTable& emb,
                                     const Vocabulary& vocab,
                                     std::uint32_t k_max) {
  const auto v = static_cast<std::size_t>(emb.vectors.rows());
  if (v != vocab.size())
    throw ConfigError("embedding table rows != vocabulary size");
  // Special tokens carry no surface semantics; keep them out of the ranking.
  const auto regular = static_cast<TokenId>(vocab.regular_size());
  if (k_max >= regular)
    throw ConfigError("k_max must be < regular vocab size");

  Eigen::MatrixXf normalized = emb.vectors;
  for (Eigen::Index r = 0; r < normalized.rows(); ++r) {
    float n = normalized.row(r).norm();
    if (n > 0.0f) normalized.row(r) /= n;
  }

  NeighborStats stats;
  stats.mean_cosine.assign(k_max, 0.0);
  stats.mean_edit_distance.assign(k_max, 0.0);
  std::vector<std::pair<float, TokenId>> ranked;
  for (TokenId t = 0; t < regular; ++t) {
    ranked.clear();
    Eigen::VectorXf sims = normalized * normalized.row(t).transpose();
    for (TokenId u = 0; u < regular; ++u)
      if (u != t) ranked.emplace_back(sims(u), u);
    std::partial_sort(ranked.begin(), ranked.begin() + k_max, ranked.end(),
                      [](const auto& x, const auto& y) {
                        if (x.first != y.first) return x.first > y.first;
                        return x.second < y.second;
                      });
    for (std::uint32_t k = 0; k < k_max; ++k) {
      stats.mean_cosine[k] += ranked[k].first;
      stats.mean_edit_distance[k] +=
          levenshtein(vocab.token(t), vocab.token(ranked[k].second));
    }
  }
  for (std::uint32_t k = 0; k < k_max; ++k) {
    stats.mean_cosine[k] /= double(regular);
    stats.mean_edit_distance[k] /= double(regular);
  }
  return stats;
}

void write_masks_csv(const std::filesystem::path& path,
                     std::span<const MaskSet> masks) {
  CsvWriter csv(path, {"window_index", "masked_positions"});
  for (std::size_t w = 0; w < masks.size(); ++w) {
    std::string joined;
    for (std::uint32_t p : masks[w].positions()) {
      if (!joined.empty()) joined += ' ';
      joined += std::to_string(p);
    }
    csv.row({std::to_string(w), joined});
  }
}

void write_masks_bits(const std::filesystem::path& path,
                      std::span<const MaskSet> masks) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  for (const MaskSet& m : masks) {
    std::vector<std::uint8_t> bytes((m.window_len + 7) / 8, 0);
    for (std::uint32_t p = 1; p <= m.window_len; ++p)
      if (m.flags[p]) bytes[(p - 1) / 8] |= std::uint8_t(1u << ((p - 1) % 8));
    out.write(reinterpret_cast<const char*>(bytes.data()),
              std::streamsize(bytes.size()));
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

}  // namespace hapax
