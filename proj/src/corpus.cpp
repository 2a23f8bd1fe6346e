#include "hapax/corpus.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include "hapax/kvfile.hpp"

namespace hapax {

namespace {

constexpr char kMagic[4] = {'H', 'P', 'X', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t take_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("truncated corpus: reading ") + what);
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
         std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

std::uint64_t take_u64(std::istream& in, const char* what) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw FormatError(std::string("truncated corpus: reading ") + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

constexpr std::uint8_t kRolePad = 0;
constexpr std::uint8_t kRoleDocBoundary = 1;

}  // namespace

Corpus build_corpus(const std::vector<std::string>& documents,
                    TokenizerScheme scheme, std::string source) {
  Corpus corpus;
  corpus.scheme = scheme;
  corpus.source = std::move(source);
  if (scheme == TokenizerScheme::byte_level) {
    corpus.vocab = Vocabulary::byte_level();
    bool first = true;
    for (const auto& doc : documents) {
      if (!first) corpus.stream.push_back(corpus.vocab.doc_boundary());
      for (unsigned char c : doc) corpus.stream.push_back(TokenId(c));
      first = false;
    }
    return corpus;
  }
  VocabularyBuilder builder;
  std::vector<std::vector<TokenId>> doc_tokens;
  for (const auto& doc : documents) {
    auto words = split_words(doc);
    std::vector<TokenId> toks;
    toks.reserve(words.size());
    for (auto w : words) toks.push_back(builder.add(w));
    doc_tokens.push_back(std::move(toks));
  }
  corpus.vocab = std::move(builder).finalize();
  bool first = true;
  for (const auto& toks : doc_tokens) {
    if (!first) corpus.stream.push_back(corpus.vocab.doc_boundary());
    corpus.stream.insert(corpus.stream.end(), toks.begin(), toks.end());
    first = false;
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open for writing: " + path.string());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(corpus.vocab.size()));
    put_u32(out, 2);
    put_u32(out, corpus.vocab.pad());
    out.put(char(kRolePad));
    put_u32(out, corpus.vocab.doc_boundary());
    out.put(char(kRoleDocBoundary));
    put_u64(out, corpus.stream.size());
    for (TokenId id : corpus.stream) put_u32(out, id);
    if (!out) throw FormatError("write failed: " + path.string());
  }
  {
    std::filesystem::path vocab_path = path;
    vocab_path += ".vocab";
    std::ofstream out(vocab_path, std::ios::binary | std::ios::trunc);
    if (!out)
      throw FormatError("cannot open for writing: " + vocab_path.string());
    for (TokenId id = 0; id < corpus.vocab.size(); ++id)
      out << escape_token(corpus.vocab.token(id)) << "\n";
    if (!out) throw FormatError("write failed: " + vocab_path.string());
  }
  {
    std::filesystem::path meta_path = path;
    meta_path += ".meta";
    KvFile kv;
    kv.set("scheme", scheme_name(corpus.scheme));
    kv.set("source", corpus.source);
    kv.write(meta_path);
  }
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad corpus magic in " + path.string() +
                      " (expected \"HPXC\")");
  std::uint32_t version = take_u32(in, "version");
  if (version != kVersion)
    throw FormatError("unsupported corpus version " + std::to_string(version) +
                      " (expected " + std::to_string(kVersion) + ")");
  std::uint32_t vocab_size = take_u32(in, "vocab size");
  std::uint32_t special_count = take_u32(in, "special count");
  TokenId pad_id = 0, doc_id = 0;
  bool saw_pad = false, saw_doc = false;
  for (std::uint32_t i = 0; i < special_count; ++i) {
    std::uint32_t id = take_u32(in, "special id");
    char role;
    if (!in.get(role)) throw FormatError("truncated corpus: special role");
    if (std::uint8_t(role) == kRolePad) {
      pad_id = id;
      saw_pad = true;
    } else if (std::uint8_t(role) == kRoleDocBoundary) {
      doc_id = id;
      saw_doc = true;
    } else {
      throw FormatError("unknown special role tag " +
                        std::to_string(int(std::uint8_t(role))));
    }
  }
  if (!saw_pad || !saw_doc)
    throw FormatError("corpus missing pad/doc_boundary special ids");

  std::uint64_t count = take_u64(in, "token count");
  Corpus corpus;
  corpus.stream.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t id = take_u32(in, "token id");
    if (id >= vocab_size)
      throw FormatError("token id " + std::to_string(id) +
                        " out of range for vocab size " +
                        std::to_string(vocab_size));
    corpus.stream[i] = id;
  }

  std::filesystem::path vocab_path = path;
  vocab_path += ".vocab";
  std::ifstream vin(vocab_path, std::ios::binary);
  if (!vin) throw FormatError("cannot open sidecar: " + vocab_path.string());
  std::vector<std::string> tokens;
  tokens.reserve(vocab_size);
  std::string line;
  while (std::getline(vin, line)) tokens.push_back(unescape_token(line));
  if (tokens.size() != vocab_size)
    throw FormatError("vocabulary sidecar has " +
                      std::to_string(tokens.size()) + " entries, header says " +
                      std::to_string(vocab_size));
  // Rebuild the Vocabulary. Specials are the trailing two ids by
  // construction; validate against the header.
  if (pad_id + 2 != vocab_size || doc_id + 1 != vocab_size)
    throw FormatError("special ids not at the end of the id space");
  tokens.resize(vocab_size - 2);
  corpus.vocab = Vocabulary::from_tokens(std::move(tokens));

  std::filesystem::path meta_path = path;
  meta_path += ".meta";
  if (std::filesystem::exists(meta_path)) {
    KvFile kv = KvFile::read(meta_path);
    corpus.scheme = scheme_from_name(kv.get_or("scheme", "byte_level"));
    corpus.source = kv.get_or("source", "");
  }
  return corpus;
}

std::uint64_t corpus_checksum(const Corpus& corpus) {
  std::uint64_t h = fnv1a(corpus.stream.data(),
                          corpus.stream.size() * sizeof(TokenId));
  for (TokenId id = 0; id < corpus.vocab.size(); ++id)
    h = fnv1a(corpus.vocab.token(id), h);
  return h;
}

WindowBatcher::WindowBatcher(const Corpus& corpus, std::uint32_t context_len,
                             std::uint32_t batch_size, std::uint64_t seed)
    : corpus_(corpus),
      context_len_(context_len),
      batch_size_(batch_size),
      seed_(seed) {
  if (context_len < 2) throw ConfigError("context_len must be >= 2");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (corpus.stream.size() < context_len)
    throw ConfigError("corpus (" + std::to_string(corpus.stream.size()) +
                      " tokens) shorter than one context window (" +
                      std::to_string(context_len) + ")");
  order_.resize(corpus.num_windows(context_len));
  std::iota(order_.begin(), order_.end(), 0u);
  reshuffle();
}

void WindowBatcher::reshuffle() {
  auto rng = make_rng(seed_, "data_order", epoch_);
  std::shuffle(order_.begin(), order_.end(), rng);
}

void WindowBatcher::next_batch(std::vector<std::span<const TokenId>>& out) {
  out.clear();
  while (out.size() < batch_size_) {
    if (cursor_ >= order_.size()) {
      cursor_ = 0;
      ++epoch_;
      reshuffle();
    }
    out.push_back(corpus_.window(context_len_, order_[cursor_++]));
  }
}

}  // namespace hapax
