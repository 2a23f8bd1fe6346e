#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hapax/masking.hpp"
#include "hapax/model.hpp"

namespace hapax {

// Activation-level edits applied during a forward pass.
//  - ablate_head: overwrite the head's pre-projection context vector
//    z^{(l,h)} (dim d_head) at the listed positions.
//  - patch_layer: overwrite the layer's residual-stream output (dim d_model)
//    at the listed positions.
// `replacement` has one row per listed position, or a single row broadcast
// to all of them. Positions are 0-based window indices.
struct Intervention {
  enum class Kind { ablate_head, patch_layer };
  Kind kind = Kind::ablate_head;
  std::uint32_t layer = 0;
  std::int32_t head = -1;  // ablate_head only
  std::vector<std::uint32_t> positions;
  Eigen::MatrixXd replacement;

  static Intervention ablate(std::uint32_t layer, std::uint32_t head,
                             std::vector<std::uint32_t> positions,
                             Eigen::MatrixXd replacement);
  static Intervention patch(std::uint32_t layer,
                            std::vector<std::uint32_t> positions,
                            Eigen::MatrixXd replacement);
};

// Mean NLL over unmasked predictable positions (targets 2..T, 1-based).
// Throws EvalError when every predictable position is masked.
template <typename Real>
double masked_nll(const RowMat<Real>& logits, std::span<const TokenId> tokens,
                  const MaskSet* mask);

// d(masked_nll)/d(logits); rows for masked or target-less positions are
// exactly zero.
template <typename Real>
RowMat<Real> masked_nll_logit_grads(const RowMat<Real>& logits,
                                    std::span<const TokenId> tokens,
                                    const MaskSet* mask);

// One forward/backward engine with its own activation workspace. Not thread
// safe; use one instance per thread.
template <typename Real>
class Network {
 public:
  explicit Network(const ModelConfig& config);

  // Direct gradient contributions to attention maps, used by the
  // prefix-matching penalty: dL/dA^{(layer,head)}[row,col] += coeff.
  struct AttnAddend {
    std::uint32_t layer, head, row, col;
    Real coeff;
  };

  const RowMat<Real>& forward(const ModelParams<Real>& params,
                              std::span<const TokenId> tokens,
                              std::span<const Intervention> interventions = {});

  const RowMat<Real>& logits() const { return logits_; }
  std::size_t seq_len() const { return seq_len_; }
  const RowMat<Real>& attention(std::uint32_t layer, std::uint32_t head) const;
  const RowMat<Real>& head_outputs(std::uint32_t layer) const;  // [T, d]
  const RowMat<Real>& layer_output(std::uint32_t layer) const;  // [T, d]

  double loss_masked(std::span<const TokenId> tokens,
                     const MaskSet* mask) const;

  // Accumulates parameter gradients of data_scale * masked_nll plus the
  // attention addends into `grads`. Requires a preceding clean forward on
  // the same tokens (interventions invalidate the stored activations for
  // backprop). Returns the unscaled masked loss (0 when data_scale is 0).
  double backward(const ModelParams<Real>& params,
                  std::span<const TokenId> tokens, const MaskSet* mask,
                  ModelParams<Real>& grads, Real data_scale = Real(1),
                  std::span<const AttnAddend> addends = {});

 private:
  struct LayerWork {
    RowMat<Real> ln1_out, q, k, v, z, attn_out, resid_mid;
    RowMat<Real> ln2_out, mlp_pre, mlp_act, mlp_out, resid_post;
    Eigen::Matrix<Real, Eigen::Dynamic, 1> mean1, rstd1, mean2, rstd2;
    std::vector<RowMat<Real>> attn;  // per head [T, T]
  };

  ModelConfig config_;
  std::size_t seq_len_ = 0;
  bool intervened_ = false;
  RowMat<Real> x0_;  // embedding-sum input [T, d]
  std::vector<LayerWork> work_;
  RowMat<Real> lnf_out_, logits_;
  Eigen::Matrix<Real, Eigen::Dynamic, 1> meanf_, rstdf_;

  void apply_rotary(RowMat<Real>& qk, bool inverse) const;
  void layer_norm(const RowMat<Real>& x, const RowMat<Real>& g,
                  const RowMat<Real>& b, RowMat<Real>& out,
                  Eigen::Matrix<Real, Eigen::Dynamic, 1>& mean,
                  Eigen::Matrix<Real, Eigen::Dynamic, 1>& rstd) const;
  void layer_norm_backward(const RowMat<Real>& x, const RowMat<Real>& g,
                           const Eigen::Matrix<Real, Eigen::Dynamic, 1>& mean,
                           const Eigen::Matrix<Real, Eigen::Dynamic, 1>& rstd,
                           const RowMat<Real>& dout, RowMat<Real>& dx,
                           RowMat<Real>& dg, RowMat<Real>& db) const;
};

// Greedy argmax with ties broken toward the lowest token id.
template <typename Real>
TokenId argmax_lowest(std::span<const Real> values) {
  TokenId best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = static_cast<TokenId>(i);
  return best;
}

// Contiguous view of one logits row.
template <typename Real>
std::span<const Real> row_span(const RowMat<Real>& m, Eigen::Index r) {
  return std::span<const Real>(m.data() + r * m.cols(),
                               static_cast<std::size_t>(m.cols()));
}

struct SampleConfig {
  enum class Mode { greedy, temperature, top_k };
  Mode mode = Mode::greedy;
  double temperature = 1.0;
  std::uint32_t k = 1;
  std::uint64_t seed = 0;
};

// Autoregressive continuation; the prompt window slides left once the
// context is full. Deterministic per seed.
std::vector<TokenId> generate(const ModelParams<float>& params,
                              std::span<const TokenId> prompt,
                              std::uint32_t max_new, const SampleConfig& cfg);

extern template class Network<float>;
extern template class Network<double>;
extern template double masked_nll<float>(const RowMat<float>&,
                                         std::span<const TokenId>,
                                         const MaskSet*);
extern template double masked_nll<double>(const RowMat<double>&,
                                          std::span<const TokenId>,
                                          const MaskSet*);
extern template RowMat<float> masked_nll_logit_grads<float>(
    const RowMat<float>&, std::span<const TokenId>, const MaskSet*);
extern template RowMat<double> masked_nll_logit_grads<double>(
    const RowMat<double>&, std::span<const TokenId>, const MaskSet*);

}  // namespace hapax
