#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "hapax/common.hpp"
#include "hapax/kvfile.hpp"

namespace hapax {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;

enum class PositionScheme { learned_absolute, rotary };
const char* position_scheme_name(PositionScheme s);
PositionScheme position_scheme_from_name(std::string_view name);

struct ModelConfig {
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 4;
  std::uint32_t d_model = 128;
  std::uint32_t d_head = 32;
  std::uint32_t vocab_size = 258;
  std::uint32_t context_len = 128;
  PositionScheme position_scheme = PositionScheme::learned_absolute;
  float layernorm_eps = 1e-5f;
  std::uint64_t init_seed = 0;
  bool tied_embeddings = false;

  std::uint32_t d_mlp() const { return 4 * d_model; }
  void validate() const;
  // Architecture equality, ignoring init_seed (checkpoints from different
  // seeds are still patch-compatible).
  bool same_architecture(const ModelConfig& other) const;

  void to_kv(KvFile& kv, const std::string& prefix = "config.") const;
  static ModelConfig from_kv(const KvFile& kv,
                             const std::string& prefix = "config.");
};

template <typename Real>
struct LayerParams {
  RowMat<Real> ln1_g, ln1_b;          // [1, d]
  RowMat<Real> wq, wk, wv, wo;        // [d, d]
  RowMat<Real> bq, bk, bv, bo;        // [1, d]
  RowMat<Real> ln2_g, ln2_b;          // [1, d]
  RowMat<Real> w_fc_in;               // [d, 4d]
  RowMat<Real> b_fc_in;               // [1, 4d]
  RowMat<Real> w_fc_out;              // [4d, d]
  RowMat<Real> b_fc_out;              // [1, d]
};

// All learnable tensors. The visit order is the canonical order for
// initialization, serialization, optimizer state and checksums.
template <typename Real>
struct ModelParams {
  ModelConfig config;
  RowMat<Real> wte;        // [V, d]
  RowMat<Real> wpe;        // [ctx, d]; empty under rotary positions
  std::vector<LayerParams<Real>> layers;
  RowMat<Real> lnf_g, lnf_b;  // [1, d]
  RowMat<Real> w_unembed;     // [d, V]; empty when tied to wte

  template <typename Fn>
  void visit(Fn&& fn) {
    fn("wte", wte);
    if (wpe.size() > 0) fn("wpe", wpe);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& lp = layers[l];
      std::string base = "layers." + std::to_string(l) + ".";
      fn(base + "ln1_g", lp.ln1_g);
      fn(base + "ln1_b", lp.ln1_b);
      fn(base + "wq", lp.wq);
      fn(base + "bq", lp.bq);
      fn(base + "wk", lp.wk);
      fn(base + "bk", lp.bk);
      fn(base + "wv", lp.wv);
      fn(base + "bv", lp.bv);
      fn(base + "wo", lp.wo);
      fn(base + "bo", lp.bo);
      fn(base + "ln2_g", lp.ln2_g);
      fn(base + "ln2_b", lp.ln2_b);
      fn(base + "w_fc_in", lp.w_fc_in);
      fn(base + "b_fc_in", lp.b_fc_in);
      fn(base + "w_fc_out", lp.w_fc_out);
      fn(base + "b_fc_out", lp.b_fc_out);
    }
    fn("lnf_g", lnf_g);
    fn("lnf_b", lnf_b);
    if (w_unembed.size() > 0) fn("w_unembed", w_unembed);
  }

  template <typename Fn>
  void visit(Fn&& fn) const {
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string& name, RowMat<Real>& m) {
          fn(name, static_cast<const RowMat<Real>&>(m));
        });
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    visit([&](const std::string&, const RowMat<Real>& m) { n += m.size(); });
    return n;
  }

  void set_zero() {
    visit([](const std::string&, RowMat<Real>& m) { m.setZero(); });
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const RowMat<Real>& m) {
      ok = ok && m.allFinite();
    });
    return ok;
  }
};

// Allocates all tensors with the shapes implied by `config`, zero-filled.
template <typename Real>
ModelParams<Real> make_params(const ModelConfig& config);

// Deterministic Gaussian init: weights scaled by 1/sqrt(fan_in), embeddings
// by 1/sqrt(d_model), layernorm gains 1, biases 0. Same seed, same bits.
template <typename Real>
ModelParams<Real> init_params(const ModelConfig& config);

template <typename Real>
ModelParams<Real> zeros_like(const ModelParams<Real>& p);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p);

std::uint64_t params_checksum(const ModelParams<float>& p);

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;
extern template ModelParams<float> make_params<float>(const ModelConfig&);
extern template ModelParams<double> make_params<double>(const ModelConfig&);
extern template ModelParams<float> init_params<float>(const ModelConfig&);
extern template ModelParams<double> init_params<double>(const ModelConfig&);
extern template ModelParams<float> zeros_like<float>(const ModelParams<float>&);
extern template ModelParams<double> zeros_like<double>(
    const ModelParams<double>&);
extern template ModelParams<double> cast_params<double, float>(
    const ModelParams<float>&);
extern template ModelParams<float> cast_params<float, double>(
    const ModelParams<double>&);

}  // namespace hapax
