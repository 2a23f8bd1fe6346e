#pragma once

#include <filesystem>
#include <optional>

#include "hapax/model.hpp"

namespace hapax {

// Adam moment buffers, shaped like the parameters they track.
struct AdamState {
  ModelParams<float> m;
  ModelParams<float> v;
  std::uint64_t steps = 0;  // completed updates, for bias correction

  static AdamState zeros(const ModelConfig& config) {
    AdamState s;
    s.m = make_params<float>(config);
    s.v = make_params<float>(config);
    return s;
  }
};

struct CheckpointMeta {
  ModelConfig config;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::uint32_t format_version = 1;
  bool has_optimizer = false;
};

struct LoadedCheckpoint {
  ModelParams<float> params;
  CheckpointMeta meta;
  std::optional<AdamState> optim;
};

// A checkpoint is a directory: manifest.txt (key=value) plus tensors.bin,
// and optim.bin when optimizer state is saved. Tensor records are
// [u16 LE name length][name][u8 dtype tag (0 = f32)][u8 rank]
// [u32 LE dims...][row-major LE f32 payload].
void save_checkpoint(const std::filesystem::path& dir,
                     const ModelParams<float>& params, std::uint64_t step,
                     std::uint64_t seed, const AdamState* optim = nullptr);

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Loads just the token embedding matrix (for thresholded masking and
// neighbor statistics).
Eigen::MatrixXf load_embedding_matrix(const std::filesystem::path& dir);

std::uint64_t file_checksum(const std::filesystem::path& file);

}  // namespace hapax
