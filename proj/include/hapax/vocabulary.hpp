#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hapax/common.hpp"

namespace hapax {

// Token ids are dense 0..size-1. Regular tokens come first (byte values for
// byte-level, first-seen words for word-level); the two special tokens (pad,
// document boundary) sit at the end of the id space.
class Vocabulary {
 public:
  static constexpr const char* kPadSurface = "<|pad|>";
  static constexpr const char* kDocSurface = "<|doc|>";

  Vocabulary() = default;

  static Vocabulary byte_level();
  // Regular token strings in id order; specials are appended internally.
  static Vocabulary from_tokens(std::vector<std::string> regular_tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  TokenId pad() const { return pad_; }
  TokenId doc_boundary() const { return doc_boundary_; }
  bool is_special(TokenId id) const {
    return id == pad_ || id == doc_boundary_;
  }
  std::size_t regular_size() const { return tokens_.size() - 2; }

  std::optional<TokenId> find(std::string_view word) const;

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && pad_ == other.pad_ &&
           doc_boundary_ == other.doc_boundary_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_ = 0;
  TokenId doc_boundary_ = 0;

  void build_index();
};

// Accumulates a word-level vocabulary across documents in first-seen order;
// finalize() appends the specials and freezes the id space.
class VocabularyBuilder {
 public:
  TokenId add(std::string_view word);
  Vocabulary finalize() &&;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// Escaping for the one-token-per-line vocabulary sidecar: byte-level tokens
// can contain newlines and arbitrary bytes.
std::string escape_token(std::string_view raw);
std::string unescape_token(std::string_view escaped);

}  // namespace hapax
