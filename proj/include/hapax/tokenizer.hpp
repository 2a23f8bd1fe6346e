#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hapax/vocabulary.hpp"

namespace hapax {

enum class TokenizerScheme { byte_level, word_level };

const char* scheme_name(TokenizerScheme s);
TokenizerScheme scheme_from_name(std::string_view name);

struct TokenizeResult {
  std::vector<TokenId> tokens;
  Vocabulary vocab;
};

// Fresh-vocabulary tokenization. byte_level maps each byte to its value and
// accepts any byte string (including empty); word_level splits on whitespace
// and assigns ids in first-seen order. word_level rejects empty input.
TokenizeResult tokenize(std::string_view text, TokenizerScheme scheme);

// Frozen-vocabulary tokenization; word_level throws UnknownTokenError on a
// word absent from the vocabulary.
std::vector<TokenId> tokenize(std::string_view text, TokenizerScheme scheme,
                              const Vocabulary& vocab);

// byte_level reproduces the input exactly; word_level joins with single
// spaces. Special tokens are skipped.
std::string detokenize(std::span<const TokenId> tokens, TokenizerScheme scheme,
                       const Vocabulary& vocab);

std::vector<std::string_view> split_words(std::string_view text);

}  // namespace hapax
