#include "hapax/vocabulary.hpp"

#include <cstdio>

namespace hapax {

Vocabulary Vocabulary::byte_level() {
  Vocabulary v;
  v.tokens_.reserve(258);
  for (int b = 0; b < 256; ++b) v.tokens_.push_back(std::string(1, char(b)));
  v.tokens_.push_back(kPadSurface);
  v.tokens_.push_back(kDocSurface);
  v.pad_ = 256;
  v.doc_boundary_ = 257;
  v.build_index();
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> regular_tokens) {
  Vocabulary v;
  v.tokens_ = std::move(regular_tokens);
  for (const auto& t : v.tokens_) {
    if (t == kPadSurface || t == kDocSurface)
      throw ConfigError("token collides with special surface form: " + t);
  }
  v.pad_ = static_cast<TokenId>(v.tokens_.size());
  v.tokens_.push_back(kPadSurface);
  v.doc_boundary_ = static_cast<TokenId>(v.tokens_.size());
  v.tokens_.push_back(kDocSurface);
  v.build_index();
  return v;
}

void Vocabulary::build_index() {
  index_.clear();
  index_.reserve(tokens_.size());
  for (TokenId id = 0; id < tokens_.size(); ++id) {
    auto [it, inserted] = index_.emplace(tokens_[id], id);
    if (!inserted)
      throw ConfigError("duplicate token string at ids " +
                        std::to_string(it->second) + " and " +
                        std::to_string(id));
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size())
    throw ConfigError("token id " + std::to_string(id) +
                      " out of range (vocab size " +
                      std::to_string(tokens_.size()) + ")");
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId VocabularyBuilder::add(std::string_view word) {
  auto it = index_.find(std::string(word));
  if (it != index_.end()) return it->second;
  TokenId id = static_cast<TokenId>(words_.size());
  words_.emplace_back(word);
  index_.emplace(words_.back(), id);
  return id;
}

Vocabulary VocabularyBuilder::finalize() && {
  return Vocabulary::from_tokens(std::move(words_));
}

std::string escape_token(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (unsigned char c : raw) {
    switch (c) {
      case '\\':
        out += "\\\\";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\r':
        out += "\\r";
        break;
      case '\t':
        out += "\\t";
        break;
      default:
        if (c < 0x20 || c == 0x7f) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\x%02x", c);
          out += buf;
        } else {
          out += char(c);
        }
    }
  }
  return out;
}

std::string unescape_token(std::string_view escaped) {
  std::string out;
  out.reserve(escaped.size());
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    char c = escaped[i];
    if (c != '\\') {
      out += c;
      continue;
    }
    if (i + 1 >= escaped.size())
      throw FormatError("dangling escape in vocabulary entry");
    char e = escaped[++i];
    switch (e) {
      case '\\':
        out += '\\';
        break;
      case 'n':
        out += '\n';
        break;
      case 'r':
        out += '\r';
        break;
      case 't':
        out += '\t';
        break;
      case 'x': {
        if (i + 2 >= escaped.size())
          throw FormatError("truncated \\x escape in vocabulary entry");
        auto hex = [](char h) -> int {
          if (h >= '0' && h <= '9') return h - '0';
          if (h >= 'a' && h <= 'f') return h - 'a' + 10;
          if (h >= 'A' && h <= 'F') return h - 'A' + 10;
          throw FormatError("bad hex digit in vocabulary entry");
        };
        out += char(hex(escaped[i + 1]) * 16 + hex(escaped[i + 2]));
        i += 2;
        break;
      }
      default:
        throw FormatError(std::string("unknown escape \\") + e +
                          " in vocabulary entry");
    }
  }
  return out;
}

}  // namespace hapax
