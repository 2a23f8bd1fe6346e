#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hapax {

using TokenId = std::uint32_t;

// Library errors. The CLI maps these to a one-line "error: <what>" diagnostic
// and a nonzero exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated on-disk artifacts (corpus, checkpoint, task files).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or argument combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tokenization against a frozen vocabulary hit an unknown token.
class UnknownTokenError : public Error {
 public:
  using Error::Error;
};

// Evaluation preconditions violated (infeasible control, empty retention...).
class EvalError : public Error {
 public:
  using Error::Error;
};

// FNV-1a, used for content hashes in manifests and determinism checks.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t h = 1469598103934665603ull) {
  return fnv1a(s.data(), s.size(), h);
}

// splitmix64 finalizer; decorrelates nearby seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// All randomness in the project flows from one root seed expanded into named
// substreams, so paired runs can share the data order while keeping
// evaluation draws independent.
inline std::uint64_t substream(std::uint64_t root, std::string_view tag,
                               std::uint64_t index = 0) {
  std::uint64_t h = fnv1a(tag);
  h = mix64(h ^ mix64(root));
  return mix64(h ^ mix64(index + 0x51ed2701ull));
}

inline std::mt19937_64 make_rng(std::uint64_t root, std::string_view tag,
                                std::uint64_t index = 0) {
  return std::mt19937_64(substream(root, tag, index));
}

}  // namespace hapax
