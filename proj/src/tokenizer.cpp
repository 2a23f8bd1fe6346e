#include "hapax/tokenizer.hpp"

#include <cctype>

namespace hapax {

const char* scheme_name(TokenizerScheme s) {
  return s == TokenizerScheme::byte_level ? "byte_level" : "word_level";
}

TokenizerScheme scheme_from_name(std::string_view name) {
  if (name == "byte_level") return TokenizerScheme::byte_level;
  if (name == "word_level") return TokenizerScheme::word_level;
  throw ConfigError("unknown tokenizer scheme: " + std::string(name));
}

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    std::size_t start = i;
    while (i < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    if (i > start) words.push_back(text.substr(start, i - start));
  }
  return words;
}

TokenizeResult tokenize(std::string_view text, TokenizerScheme scheme) {
  TokenizeResult result;
  if (scheme == TokenizerScheme::byte_level) {
    result.vocab = Vocabulary::byte_level();
    result.tokens.reserve(text.size());
    for (unsigned char c : text) result.tokens.push_back(TokenId(c));
    return result;
  }
  if (text.empty())
    throw ConfigError("word_level tokenization requires non-empty text");
  VocabularyBuilder builder;
  auto words = split_words(text);
  result.tokens.reserve(words.size());
  for (auto w : words) result.tokens.push_back(builder.add(w));
  result.vocab = std::move(builder).finalize();
  return result;
}

std::vector<TokenId> tokenize(std::string_view text, TokenizerScheme scheme,
                              const Vocabulary& vocab) {
  std::vector<TokenId> tokens;
  if (scheme == TokenizerScheme::byte_level) {
    tokens.reserve(text.size());
    for (unsigned char c : text) tokens.push_back(TokenId(c));
    return tokens;
  }
  if (text.empty())
    throw ConfigError("word_level tokenization requires non-empty text");
  auto words = split_words(text);
  tokens.reserve(words.size());
  for (auto w : words) {
    auto id = vocab.find(w);
    if (!id)
      throw UnknownTokenError("word not in frozen vocabulary: " +
                              std::string(w));
    tokens.push_back(*id);
  }
  return tokens;
}

std::string detokenize(std::span<const TokenId> tokens, TokenizerScheme scheme,
                       const Vocabulary& vocab) {
  std::string out;
  bool first = true;
  for (TokenId id : tokens) {
    if (vocab.is_special(id)) continue;
    if (scheme == TokenizerScheme::word_level && !first) out += ' ';
    out += vocab.token(id);
    first = false;
  }
  return out;
}

}  // namespace hapax
