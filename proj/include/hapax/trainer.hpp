#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "hapax/checkpoint.hpp"
#include "hapax/corpus.hpp"
#include "hapax/masking.hpp"
#include "hapax/mech.hpp"
#include "hapax/network.hpp"

namespace hapax {

struct LrSchedule {
  enum class Decay { cosine, constant };
  std::uint32_t warmup_steps = 0;
  double peak_lr = 1e-3;
  Decay decay = Decay::cosine;
  double min_lr_ratio = 0.1;  // cosine floor as a fraction of peak

  double at(std::uint64_t step, std::uint64_t total_steps) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

struct PenaltyConfig {
  enum class Source { synthetic_repetition, in_batch_masked_positions };
  double lambda = 0.0;
  Source source = Source::in_batch_masked_positions;
  std::uint32_t s = 25;  // synthetic prompt half-length (clamped to context)
};

struct ReinitPolicy {
  float threshold = 0.3f;
  bool reinit_optimizer = false;
  std::uint32_t every = 100;      // steps between checks
  std::uint32_t n_samples = 64;   // prompts per score pass
  std::uint32_t s = 25;
};

struct TrainConfig {
  std::uint32_t steps = 1000;
  std::uint32_t batch_size = 16;
  std::uint32_t context_len = 128;
  LrSchedule lr;
  AdamConfig adam;
  MaskMode mask_mode = MaskMode::none;
  float tau = 0.3f;
  std::uint32_t neighbor_cap = 64;
  std::uint32_t checkpoint_every = 100;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const;
};

struct TrainStatsRow {
  std::uint64_t step = 0;
  double loss = 0.0;  // batch-mean masked loss plus penalty
  std::uint64_t unmasked_tokens = 0;
  double masked_fraction = 0.0;
  double lr = 0.0;
  double l_pm = 0.0;
};

struct TrainResult {
  std::filesystem::path checkpoints_dir;
  std::filesystem::path final_checkpoint;
  std::filesystem::path initial_checkpoint;
  std::vector<TrainStatsRow> stats;
  ModelParams<float> params;
  AdamState optim;
};

// Full training loop: Adam over the masked loss (plus the prefix-matching
// penalty when configured), checkpoints at step 0, every checkpoint_every
// steps and the final step, TrainStats and window-hash CSV logs. The window
// sequence depends only on (corpus, context_len, batch_size, seed), so
// paired runs across mask modes see identical data.
TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const Corpus& corpus, const std::filesystem::path& out_dir,
                  const PenaltyConfig* penalty = nullptr,
                  const ReinitPolicy* reinit = nullptr,
                  const EmbeddingTable* thresholded_emb = nullptr,
                  std::ostream* log = nullptr);

// Penalty value from attention maps: lambda * (1/LH) * sum over heads of the
// mean attention mass at the given (row, col) sites (0-based).
double prefix_penalty_from_attention(
    const std::vector<std::vector<RowMat<float>>>& attention,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs,
    double lambda);

struct ReinitReport {
  struct Entry {
    std::uint32_t layer, head;
    double score;
  };
  std::vector<Entry> reinitialized;
};

// Redraws Q/K/V output slices and the matching output-projection rows of
// every head scoring above the threshold; optionally zeroes the Adam moments
// of those slices. Everything else is untouched bit for bit.
ReinitReport reinit_induction_heads(ModelParams<float>& params,
                                    AdamState* optim, float threshold,
                                    bool reinit_optimizer,
                                    const HeadScoreMatrix& scores,
                                    std::uint64_t seed);

// One Adam update from accumulated gradients; `update_index` is 1-based for
// bias correction.
void adam_step(ModelParams<float>& params, const ModelParams<float>& grads,
               AdamState& state, const AdamConfig& cfg, double lr,
               std::uint64_t update_index);

}  // namespace hapax
