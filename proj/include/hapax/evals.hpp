#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hapax/corpus.hpp"
#include "hapax/network.hpp"
#include "hapax/stats.hpp"

namespace hapax {

// r1..r_s r1..r_{s-1}; the model is expected to predict r_s at the end.
struct RepetitionPrompt {
  std::vector<TokenId> tokens;  // length 2s-1
  TokenId target = 0;           // r_s
  std::uint32_t s = 0;
};

RepetitionPrompt make_repetition_prompt(std::span<const TokenId> first_half);

// n prompts of uniformly random non-special tokens, deterministic per seed.
std::vector<RepetitionPrompt> gen_random_repetition(const Vocabulary& vocab,
                                                    std::uint32_t s,
                                                    std::uint32_t n,
                                                    std::uint64_t seed);

struct EvalReport {
  double accuracy = 0.0;
  std::uint64_t n = 0;
  double ci = 0.0;  // 95% margin
  std::vector<std::uint8_t> per_sample;

  static EvalReport from_bits(std::vector<std::uint8_t> bits);
};

EvalReport eval_repetition(const ModelParams<float>& params,
                           std::span<const RepetitionPrompt> prompts,
                           unsigned threads = 1);

enum class NaturalMode { repeated, non_repeat_control };

// Repetition prompts built from contiguous corpus spans (no specials inside).
// Control mode scores prediction of r_s from r_1..r_{s-1} alone.
EvalReport eval_natural_repetition(const ModelParams<float>& params,
                                   const Corpus& corpus, std::uint32_t s,
                                   std::uint32_t n, NaturalMode mode,
                                   std::uint64_t seed, unsigned threads = 1);

enum class IclKind { extractive, abstractive, translation };
const char* icl_kind_name(IclKind k);
IclKind icl_kind_from_name(std::string_view name);

// Few-shot task: named (input, output) pairs plus a per-line prompt template
// containing {x} and {y}. The query renders the template up to (and
// excluding) {y}; demonstrations and query are joined by newlines.
struct IclTask {
  std::string name;
  IclKind kind = IclKind::abstractive;
  TokenizerScheme scheme = TokenizerScheme::byte_level;
  std::string template_str = "\"{x}\" - \"{y}\"";
  std::vector<std::pair<std::string, std::string>> pairs;

  void validate() const;
};

// Task file format: "key: value" lines for name/kind/scheme/template and one
// "pair:" line per item with input and output separated by a tab.
IclTask read_task_file(const std::filesystem::path& path);
void write_task_file(const IclTask& task, const std::filesystem::path& path);

std::string render_demonstration(const IclTask& task, const std::string& x,
                                 const std::string& y);
std::string render_query(const IclTask& task, const std::string& x);
std::string render_icl_prompt(const IclTask& task,
                              std::span<const std::size_t> demo_indices,
                              std::size_t query_index);

// 5-shot-style evaluation: each trial draws `shots` demonstrations plus one
// query without replacement; a prediction counts when the greedy next token
// equals the first token of the target under the task tokenization. With
// exclude_target, demonstrations whose output matches the query's output are
// resampled away.
EvalReport eval_icl(const ModelParams<float>& params, const Vocabulary& vocab,
                    const IclTask& task, std::uint32_t shots,
                    std::uint32_t n_trials, std::uint64_t seed,
                    bool exclude_target, unsigned threads = 1);

enum class TldFilter { all, non_extractive };

struct TldReport {
  std::uint32_t pos_a = 50, pos_b = 500;  // 1-based token positions
  double loss_a = 0.0, loss_b = 0.0;
  double delta = 0.0;  // loss_a - loss_b
  TldFilter filter = TldFilter::all;
  std::uint64_t windows_total = 0;
  std::uint64_t windows_retained = 0;
};

// Mean NLL of the true token at two positions over corpus windows. The
// non_extractive filter keeps only windows where neither position is masked
// by the exact scanner.
TldReport tld(const ModelParams<float>& params, const Corpus& corpus,
              std::uint32_t pos_a, std::uint32_t pos_b, TldFilter filter,
              std::uint64_t max_windows = 0, unsigned threads = 1);

// Scaled-down default positions for short contexts.
std::pair<std::uint32_t, std::uint32_t> default_tld_positions(
    std::uint32_t context_len);

}  // namespace hapax
