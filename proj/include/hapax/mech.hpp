#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hapax/evals.hpp"
#include "hapax/network.hpp"

namespace hapax {

enum class HeadMetric { prefix_matching, previous_token };
const char* head_metric_name(HeadMetric m);
HeadMetric head_metric_from_name(std::string_view name);

struct HeadScoreMatrix {
  std::uint32_t layers = 0, heads = 0;
  HeadMetric metric = HeadMetric::prefix_matching;
  std::uint32_t n_samples = 0, s = 0;
  std::vector<double> scores;  // row-major [layers x heads]

  double at(std::uint32_t l, std::uint32_t h) const {
    return scores[l * heads + h];
  }
  double& at(std::uint32_t l, std::uint32_t h) {
    return scores[std::size_t(l) * heads + h];
  }
  double max_score() const;
  double max_score_after_layer(std::uint32_t layer) const;  // layers > layer
  // Mean of the k highest scores.
  double top_k_mean(std::uint32_t k) const;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> top_k_heads(
      std::uint32_t k) const;
};

// Score of one attention map on a repetition prompt of half-length s:
// mean over i of A[s+i, i+1] (1-based positions).
double prefix_matching_from_attention(const RowMat<float>& attn,
                                      std::uint32_t s);
// Mean over query positions t >= 2 of A[t, t-1] (1-based).
double previous_token_from_attention(const RowMat<float>& attn);

HeadScoreMatrix prefix_matching_scores(const ModelParams<float>& params,
                                       const Vocabulary& vocab,
                                       std::uint32_t n_samples,
                                       std::uint32_t s, std::uint64_t seed,
                                       unsigned threads = 1);

HeadScoreMatrix previous_token_scores(
    const ModelParams<float>& params,
    std::span<const std::vector<TokenId>> windows, unsigned threads = 1);

// Per-head mean of the pre-projection context vector z^{(l,h)} pooled over
// all positions of sampled corpus windows.
struct MeanActivations {
  std::uint32_t layers = 0, heads = 0, d_head = 0;
  Eigen::MatrixXf means;  // [layers*heads, d_head]
  std::uint64_t n_samples = 0;
  std::string reference;

  Eigen::RowVectorXf at(std::uint32_t l, std::uint32_t h) const {
    return means.row(std::size_t(l) * heads + h);
  }
};

MeanActivations mean_head_activations(const ModelParams<float>& params,
                                      const Corpus& corpus,
                                      std::uint64_t n_samples,
                                      std::uint64_t seed,
                                      unsigned threads = 1);

// Mean ablation at the final prompt position, one head at a time against a
// shared clean run. delta_p = p_clean(target) - p_ablated(target).
struct AblationReport {
  std::uint32_t layers = 0, heads = 0;
  std::vector<double> delta_p;    // [layers*heads]
  std::vector<double> delta_acc;  // [layers*heads]
  std::uint64_t n_prompts = 0;
  std::string reference;

  double dp(std::uint32_t l, std::uint32_t h) const {
    return delta_p[std::size_t(l) * heads + h];
  }
  double dacc(std::uint32_t l, std::uint32_t h) const {
    return delta_acc[std::size_t(l) * heads + h];
  }
};

AblationReport ablation_scan(const ModelParams<float>& params,
                             std::span<const RepetitionPrompt> prompts,
                             const MeanActivations& means,
                             unsigned threads = 1);

// Rate at which the target lands in the k tokens most promoted by one head:
// z^{(l,h)} at the final position, through the head's slice of the output
// projection and the unembedding. Ordering is (score desc, id asc).
double head_logit_lens(const ModelParams<float>& params, std::uint32_t layer,
                       std::uint32_t head,
                       std::span<const RepetitionPrompt> prompts,
                       std::uint32_t k, unsigned threads = 1);

struct PatchResult {
  std::uint32_t layer = 0;
  HeadScoreMatrix before;  // target model, clean
  HeadScoreMatrix after;   // target model with source layer output patched in
  double max_before = 0.0;  // over layers > patched layer
  double max_after = 0.0;
};

// Replaces the target model's layer-`layer` residual output (all positions)
// with the source model's captured output on the same prompts, then scores
// prefix matching of the later layers.
PatchResult cross_checkpoint_patch(const ModelParams<float>& source,
                                   const ModelParams<float>& target,
                                   std::uint32_t layer, const Vocabulary& vocab,
                                   std::uint32_t n_samples, std::uint32_t s,
                                   std::uint64_t seed, unsigned threads = 1);

struct DynamicsEntry {
  std::filesystem::path checkpoint;
  std::uint64_t step = 0;
  bool ok = false;
  std::string error;
  HeadScoreMatrix scores;
};

struct DynamicsArgs {
  HeadMetric metric = HeadMetric::prefix_matching;
  std::uint32_t n_samples = 200;
  std::uint32_t s = 25;
  std::uint64_t seed = 0;
  const Corpus* corpus = nullptr;  // previous_token windows
  std::uint32_t n_windows = 64;
  unsigned threads = 1;
};

// Applies the chosen score per checkpoint; unreadable checkpoints produce an
// error entry and the series continues. Output ordered by step.
std::vector<DynamicsEntry> score_dynamics(
    std::span<const std::filesystem::path> checkpoints, const Vocabulary& vocab,
    const DynamicsArgs& args);

}  // namespace hapax
