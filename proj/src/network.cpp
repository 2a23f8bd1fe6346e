#include "hapax/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace hapax {

namespace {

constexpr double kRotaryBase = 10000.0;

template <typename Real>
inline Real gelu(Real x) {
  const Real c = Real(0.7978845608028654);  // sqrt(2/pi)
  const Real a = Real(0.044715);
  return Real(0.5) * x * (Real(1) + std::tanh(c * (x + a * x * x * x)));
}

template <typename Real>
inline Real gelu_grad(Real x) {
  const Real c = Real(0.7978845608028654);
  const Real a = Real(0.044715);
  Real u = c * (x + a * x * x * x);
  Real t = std::tanh(u);
  Real du = c * (Real(1) + Real(3) * a * x * x);
  return Real(0.5) * (Real(1) + t) +
         Real(0.5) * x * (Real(1) - t * t) * du;
}

}  // namespace

Intervention Intervention::ablate(std::uint32_t layer, std::uint32_t head,
                                  std::vector<std::uint32_t> positions,
                                  Eigen::MatrixXd replacement) {
  Intervention iv;
  iv.kind = Kind::ablate_head;
  iv.layer = layer;
  iv.head = static_cast<std::int32_t>(head);
  iv.positions = std::move(positions);
  iv.replacement = std::move(replacement);
  return iv;
}

Intervention Intervention::patch(std::uint32_t layer,
                                 std::vector<std::uint32_t> positions,
                                 Eigen::MatrixXd replacement) {
  Intervention iv;
  iv.kind = Kind::patch_layer;
  iv.layer = layer;
  iv.positions = std::move(positions);
  iv.replacement = std::move(replacement);
  return iv;
}

template <typename Real>
double masked_nll(const RowMat<Real>& logits, std::span<const TokenId> tokens,
                  const MaskSet* mask) {
  const auto t_len = tokens.size();
  if (t_len < 2) throw EvalError("empty unmasked set: window has no targets");
  if (logits.rows() != Eigen::Index(t_len))
    throw ConfigError("logits rows != window length");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + 1 < t_len; ++r) {
    std::uint32_t target_pos = static_cast<std::uint32_t>(r + 2);  // 1-based
    if (mask && mask->is_masked(target_pos)) continue;
    auto row = row_span(logits, Eigen::Index(r));
    Real mx = row[0];
    for (Real v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (Real v : row) sum += std::exp(double(v - mx));
    double logz = double(mx) + std::log(sum);
    total += logz - double(row[tokens[r + 1]]);
    ++count;
  }
  if (count == 0) throw EvalError("empty unmasked set");
  return total / double(count);
}

template <typename Real>
RowMat<Real> masked_nll_logit_grads(const RowMat<Real>& logits,
                                    std::span<const TokenId> tokens,
                                    const MaskSet* mask) {
  const auto t_len = tokens.size();
  if (t_len < 2) throw EvalError("empty unmasked set: window has no targets");
  RowMat<Real> grads = RowMat<Real>::Zero(logits.rows(), logits.cols());
  std::size_t count = 0;
  for (std::size_t r = 0; r + 1 < t_len; ++r) {
    std::uint32_t target_pos = static_cast<std::uint32_t>(r + 2);
    if (mask && mask->is_masked(target_pos)) continue;
    ++count;
  }
  if (count == 0) throw EvalError("empty unmasked set");
  const Real inv = Real(1) / Real(count);
  for (std::size_t r = 0; r + 1 < t_len; ++r) {
    std::uint32_t target_pos = static_cast<std::uint32_t>(r + 2);
    if (mask && mask->is_masked(target_pos)) continue;
    auto row = logits.row(Eigen::Index(r));
    Real mx = row.maxCoeff();
    auto g = grads.row(Eigen::Index(r));
    g = (row.array() - mx).exp().matrix();
    g /= g.sum();
    g(tokens[r + 1]) -= Real(1);
    g *= inv;
  }
  return grads;
}

template <typename Real>
Network<Real>::Network(const ModelConfig& config) : config_(config) {
  config_.validate();
  work_.resize(config_.n_layers);
  for (auto& w : work_) w.attn.resize(config_.n_heads);
}

template <typename Real>
void Network<Real>::apply_rotary(RowMat<Real>& qk, bool inverse) const {
  const auto dh = config_.d_head;
  const auto half = dh / 2;
  const auto t_len = static_cast<std::uint32_t>(qk.rows());
  for (std::uint32_t t = 0; t < t_len; ++t) {
    for (std::uint32_t h = 0; h < config_.n_heads; ++h) {
      Real* base = qk.data() + t * config_.d_model + h * dh;
      for (std::uint32_t j = 0; j < half; ++j) {
        double theta =
            double(t) * std::pow(kRotaryBase, -2.0 * double(j) / double(dh));
        Real c = Real(std::cos(theta));
        Real s = Real(inverse ? -std::sin(theta) : std::sin(theta));
        Real a = base[j];
        Real b = base[j + half];
        base[j] = a * c - b * s;
        base[j + half] = b * c + a * s;
      }
    }
  }
}

template <typename Real>
void Network<Real>::layer_norm(
    const RowMat<Real>& x, const RowMat<Real>& g, const RowMat<Real>& b,
    RowMat<Real>& out, Eigen::Matrix<Real, Eigen::Dynamic, 1>& mean,
    Eigen::Matrix<Real, Eigen::Dynamic, 1>& rstd) const {
  const auto rows = x.rows();
  const auto d = x.cols();
  out.resize(rows, d);
  mean.resize(rows);
  rstd.resize(rows);
  const Real eps = Real(config_.layernorm_eps);
  for (Eigen::Index t = 0; t < rows; ++t) {
    Real mu = x.row(t).mean();
    Real var = (x.row(t).array() - mu).square().sum() / Real(d);
    Real rs = Real(1) / std::sqrt(var + eps);
    mean(t) = mu;
    rstd(t) = rs;
    out.row(t) =
        (((x.row(t).array() - mu) * rs) * g.row(0).array() + b.row(0).array())
            .matrix();
  }
}

template <typename Real>
void Network<Real>::layer_norm_backward(
    const RowMat<Real>& x, const RowMat<Real>& g,
    const Eigen::Matrix<Real, Eigen::Dynamic, 1>& mean,
    const Eigen::Matrix<Real, Eigen::Dynamic, 1>& rstd,
    const RowMat<Real>& dout, RowMat<Real>& dx, RowMat<Real>& dg,
    RowMat<Real>& db) const {
  const auto rows = x.rows();
  const auto d = x.cols();
  using ArrayR = Eigen::Array<Real, 1, Eigen::Dynamic>;
  for (Eigen::Index t = 0; t < rows; ++t) {
    ArrayR xhat = (x.row(t).array() - mean(t)) * rstd(t);
    ArrayR dy = dout.row(t).array();
    dg.row(0).array() += dy * xhat;
    db.row(0).array() += dy;
    ArrayR dxhat = dy * g.row(0).array();
    Real m1 = dxhat.mean();
    Real m2 = (dxhat * xhat).mean();
    dx.row(t).array() += rstd(t) * (dxhat - m1 - xhat * m2);
  }
}

template <typename Real>
const RowMat<Real>& Network<Real>::forward(
    const ModelParams<Real>& params, std::span<const TokenId> tokens,
    std::span<const Intervention> interventions) {
  if (tokens.empty()) throw ConfigError("forward on empty window");
  if (tokens.size() > config_.context_len)
    throw ConfigError("window length " + std::to_string(tokens.size()) +
                      " exceeds context_len " +
                      std::to_string(config_.context_len));
  if (!params.config.same_architecture(config_))
    throw ConfigError("parameters/network architecture mismatch");
  for (TokenId id : tokens)
    if (id >= config_.vocab_size)
      throw ConfigError("token id " + std::to_string(id) +
                        " out of vocabulary range");
  for (const auto& iv : interventions) {
    if (iv.layer >= config_.n_layers)
      throw ConfigError("intervention layer out of range");
    const bool ablate = iv.kind == Intervention::Kind::ablate_head;
    if (ablate &&
        (iv.head < 0 || iv.head >= std::int32_t(config_.n_heads)))
      throw ConfigError("intervention head out of range");
    for (auto p : iv.positions)
      if (p >= tokens.size())
        throw ConfigError("intervention position out of range");
    const Eigen::Index want_cols = ablate ? config_.d_head : config_.d_model;
    if (iv.replacement.cols() != want_cols)
      throw ConfigError("intervention replacement width mismatch");
    if (iv.replacement.rows() != 1 &&
        iv.replacement.rows() != Eigen::Index(iv.positions.size()))
      throw ConfigError("intervention replacement row count mismatch");
  }

  const auto t_len = tokens.size();
  const auto d = config_.d_model;
  const auto dh = config_.d_head;
  const auto heads = config_.n_heads;
  seq_len_ = t_len;
  intervened_ = !interventions.empty();

  x0_.resize(t_len, d);
  for (std::size_t t = 0; t < t_len; ++t) {
    x0_.row(Eigen::Index(t)) = params.wte.row(tokens[t]);
    if (params.wpe.size() > 0)
      x0_.row(Eigen::Index(t)) += params.wpe.row(Eigen::Index(t));
  }

  const Real scale = Real(1) / std::sqrt(Real(dh));
  const RowMat<Real>* x_in = &x0_;

  for (std::uint32_t l = 0; l < config_.n_layers; ++l) {
    auto& w = work_[l];
    const auto& lp = params.layers[l];
    layer_norm(*x_in, lp.ln1_g, lp.ln1_b, w.ln1_out, w.mean1, w.rstd1);

    w.q.noalias() = w.ln1_out * lp.wq;
    w.q.rowwise() += lp.bq.row(0);
    w.k.noalias() = w.ln1_out * lp.wk;
    w.k.rowwise() += lp.bk.row(0);
    w.v.noalias() = w.ln1_out * lp.wv;
    w.v.rowwise() += lp.bv.row(0);
    if (config_.position_scheme == PositionScheme::rotary) {
      apply_rotary(w.q, false);
      apply_rotary(w.k, false);
    }

    w.z.resize(t_len, d);
    for (std::uint32_t h = 0; h < heads; ++h) {
      auto qh = w.q.middleCols(h * dh, dh);
      auto kh = w.k.middleCols(h * dh, dh);
      auto vh = w.v.middleCols(h * dh, dh);
      RowMat<Real>& a = w.attn[h];
      a.resize(t_len, t_len);
      a.noalias() = qh * kh.transpose();
      a *= scale;
      // Causal softmax row by row; entries beyond the diagonal become 0.
      for (std::size_t t = 0; t < t_len; ++t) {
        auto row = a.row(Eigen::Index(t));
        Real mx = row.head(t + 1).maxCoeff();
        row.head(t + 1) = (row.head(t + 1).array() - mx).exp();
        Real sum = row.head(t + 1).sum();
        row.head(t + 1) /= sum;
        if (t + 1 < t_len) row.tail(t_len - t - 1).setZero();
      }
      w.z.middleCols(h * dh, dh).noalias() = a * vh;
    }

    for (const auto& iv : interventions) {
      if (iv.kind != Intervention::Kind::ablate_head || iv.layer != l)
        continue;
      auto zh = w.z.middleCols(std::uint32_t(iv.head) * dh, dh);
      for (std::size_t i = 0; i < iv.positions.size(); ++i) {
        Eigen::Index src = iv.replacement.rows() == 1 ? 0 : Eigen::Index(i);
        zh.row(iv.positions[i]) =
            iv.replacement.row(src).template cast<Real>();
      }
    }

    w.attn_out.noalias() = w.z * lp.wo;
    w.attn_out.rowwise() += lp.bo.row(0);
    w.resid_mid = *x_in + w.attn_out;

    layer_norm(w.resid_mid, lp.ln2_g, lp.ln2_b, w.ln2_out, w.mean2, w.rstd2);
    w.mlp_pre.noalias() = w.ln2_out * lp.w_fc_in;
    w.mlp_pre.rowwise() += lp.b_fc_in.row(0);
    w.mlp_act = w.mlp_pre.unaryExpr([](Real x) { return gelu(x); });
    w.mlp_out.noalias() = w.mlp_act * lp.w_fc_out;
    w.mlp_out.rowwise() += lp.b_fc_out.row(0);
    w.resid_post = w.resid_mid + w.mlp_out;

    for (const auto& iv : interventions) {
      if (iv.kind != Intervention::Kind::patch_layer || iv.layer != l)
        continue;
      for (std::size_t i = 0; i < iv.positions.size(); ++i) {
        Eigen::Index src = iv.replacement.rows() == 1 ? 0 : Eigen::Index(i);
        w.resid_post.row(iv.positions[i]) =
            iv.replacement.row(src).template cast<Real>();
      }
    }
    x_in = &w.resid_post;
  }

  layer_norm(*x_in, params.lnf_g, params.lnf_b, lnf_out_, meanf_, rstdf_);
  if (params.w_unembed.size() > 0) {
    logits_.noalias() = lnf_out_ * params.w_unembed;
  } else {
    logits_.noalias() = lnf_out_ * params.wte.transpose();
  }
  return logits_;
}

template <typename Real>
const RowMat<Real>& Network<Real>::attention(std::uint32_t layer,
                                             std::uint32_t head) const {
  if (layer >= work_.size() || head >= config_.n_heads)
    throw ConfigError("attention index out of range");
  return work_[layer].attn[head];
}

template <typename Real>
const RowMat<Real>& Network<Real>::head_outputs(std::uint32_t layer) const {
  if (layer >= work_.size()) throw ConfigError("layer index out of range");
  return work_[layer].z;
}

template <typename Real>
const RowMat<Real>& Network<Real>::layer_output(std::uint32_t layer) const {
  if (layer >= work_.size()) throw ConfigError("layer index out of range");
  return work_[layer].resid_post;
}

template <typename Real>
double Network<Real>::loss_masked(std::span<const TokenId> tokens,
                                  const MaskSet* mask) const {
  if (tokens.size() != seq_len_)
    throw ConfigError("loss_masked window does not match last forward");
  return masked_nll(logits_, tokens, mask);
}

template <typename Real>
double Network<Real>::backward(const ModelParams<Real>& params,
                               std::span<const TokenId> tokens,
                               const MaskSet* mask, ModelParams<Real>& grads,
                               Real data_scale,
                               std::span<const AttnAddend> addends) {
  if (tokens.size() != seq_len_)
    throw ConfigError("backward window does not match last forward");
  if (intervened_)
    throw ConfigError("backward after an intervened forward is unsupported");

  const auto t_len = tokens.size();
  const auto d = config_.d_model;
  const auto dh = config_.d_head;
  const auto heads = config_.n_heads;
  const Real scale = Real(1) / std::sqrt(Real(dh));

  double loss = 0.0;
  RowMat<Real> dlogits;
  if (data_scale != Real(0)) {
    loss = masked_nll(logits_, tokens, mask);
    dlogits = masked_nll_logit_grads(logits_, tokens, mask);
    if (data_scale != Real(1)) dlogits *= data_scale;
  } else {
    dlogits = RowMat<Real>::Zero(t_len, config_.vocab_size);
  }

  // Unembedding.
  RowMat<Real> dlnf(t_len, d);
  if (params.w_unembed.size() > 0) {
    dlnf.noalias() = dlogits * params.w_unembed.transpose();
    grads.w_unembed.noalias() += lnf_out_.transpose() * dlogits;
  } else {
    dlnf.noalias() = dlogits * params.wte;
    grads.wte.noalias() += dlogits.transpose() * lnf_out_;
  }

  // Final layernorm.
  const RowMat<Real>& last_resid =
      config_.n_layers > 0 ? work_.back().resid_post : x0_;
  RowMat<Real> dresid = RowMat<Real>::Zero(t_len, d);
  layer_norm_backward(last_resid, params.lnf_g, meanf_, rstdf_, dlnf, dresid,
                      grads.lnf_g, grads.lnf_b);

  RowMat<Real> dz(t_len, d), dq(t_len, d), dk(t_len, d), dv(t_len, d);
  RowMat<Real> da, ds;

  for (std::int32_t l = std::int32_t(config_.n_layers) - 1; l >= 0; --l) {
    auto& w = work_[l];
    const auto& lp = params.layers[l];
    auto& gl = grads.layers[l];
    const RowMat<Real>& x_in = l == 0 ? x0_ : work_[l - 1].resid_post;

    // MLP branch: dresid covers d(resid_post) = d(resid_mid) + d(mlp_out).
    RowMat<Real> dmlp_act(t_len, config_.d_mlp());
    gl.w_fc_out.noalias() += w.mlp_act.transpose() * dresid;
    gl.b_fc_out.row(0) += dresid.colwise().sum();
    dmlp_act.noalias() = dresid * lp.w_fc_out.transpose();
    RowMat<Real> dmlp_pre =
        dmlp_act.cwiseProduct(w.mlp_pre.unaryExpr([](Real x) {
          return gelu_grad(x);
        }));
    gl.w_fc_in.noalias() += w.ln2_out.transpose() * dmlp_pre;
    gl.b_fc_in.row(0) += dmlp_pre.colwise().sum();
    RowMat<Real> dln2(t_len, d);
    dln2.noalias() = dmlp_pre * lp.w_fc_in.transpose();
    layer_norm_backward(w.resid_mid, lp.ln2_g, w.mean2, w.rstd2, dln2, dresid,
                        gl.ln2_g, gl.ln2_b);

    // Attention branch: dresid now covers d(resid_mid) = d(x_in) +
    // d(attn_out).
    gl.wo.noalias() += w.z.transpose() * dresid;
    gl.bo.row(0) += dresid.colwise().sum();
    dz.noalias() = dresid * lp.wo.transpose();

    dq.setZero();
    dk.setZero();
    dv.setZero();
    for (std::uint32_t h = 0; h < heads; ++h) {
      auto qh = w.q.middleCols(h * dh, dh);
      auto kh = w.k.middleCols(h * dh, dh);
      auto vh = w.v.middleCols(h * dh, dh);
      auto dzh = dz.middleCols(h * dh, dh);
      const RowMat<Real>& a = w.attn[h];

      da.resize(t_len, t_len);
      da.noalias() = dzh * vh.transpose();
      for (const auto& ad : addends)
        if (ad.layer == std::uint32_t(l) && ad.head == h)
          da(ad.row, ad.col) += ad.coeff;

      // Softmax backward per causal row; rows of `a` are zero beyond the
      // diagonal, which keeps the restricted dot products exact.
      ds.resize(t_len, t_len);
      for (std::size_t t = 0; t < t_len; ++t) {
        auto arow = a.row(Eigen::Index(t)).array();
        auto darow = da.row(Eigen::Index(t)).array();
        Real dot = (arow * darow).sum();
        ds.row(Eigen::Index(t)) = (arow * (darow - dot)).matrix();
      }

      dq.middleCols(h * dh, dh).noalias() = ds * kh * scale;
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh * scale;
      dv.middleCols(h * dh, dh).noalias() = a.transpose() * dzh;
    }
    if (config_.position_scheme == PositionScheme::rotary) {
      apply_rotary(dq, true);
      apply_rotary(dk, true);
    }

    gl.wq.noalias() += w.ln1_out.transpose() * dq;
    gl.bq.row(0) += dq.colwise().sum();
    gl.wk.noalias() += w.ln1_out.transpose() * dk;
    gl.bk.row(0) += dk.colwise().sum();
    gl.wv.noalias() += w.ln1_out.transpose() * dv;
    gl.bv.row(0) += dv.colwise().sum();

    RowMat<Real> dln1(t_len, d);
    dln1.noalias() = dq * lp.wq.transpose();
    dln1.noalias() += dk * lp.wk.transpose();
    dln1.noalias() += dv * lp.wv.transpose();
    layer_norm_backward(x_in, lp.ln1_g, w.mean1, w.rstd1, dln1, dresid,
                        gl.ln1_g, gl.ln1_b);
  }

  for (std::size_t t = 0; t < t_len; ++t) {
    grads.wte.row(tokens[t]) += dresid.row(Eigen::Index(t));
    if (grads.wpe.size() > 0)
      grads.wpe.row(Eigen::Index(t)) += dresid.row(Eigen::Index(t));
  }
  return loss;
}

std::vector<TokenId> generate(const ModelParams<float>& params,
                              std::span<const TokenId> prompt,
                              std::uint32_t max_new, const SampleConfig& cfg) {
  if (prompt.empty()) throw ConfigError("generate requires a non-empty prompt");
  if (prompt.size() > params.config.context_len)
    throw ConfigError("prompt exceeds context length");
  std::vector<TokenId> out(prompt.begin(), prompt.end());
  if (max_new == 0) return out;

  Network<float> net(params.config);
  auto rng = make_rng(cfg.seed, "generate");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::uint32_t v = params.config.vocab_size;

  for (std::uint32_t step = 0; step < max_new; ++step) {
    std::size_t start = out.size() > params.config.context_len
                            ? out.size() - params.config.context_len
                            : 0;
    std::span<const TokenId> window(out.data() + start, out.size() - start);
    const auto& logits = net.forward(params, window);
    auto row = row_span(logits, Eigen::Index(window.size() - 1));

    TokenId next = 0;
    if (cfg.mode == SampleConfig::Mode::greedy) {
      next = argmax_lowest(row);
    } else {
      // Candidate set: whole vocabulary for temperature sampling, the k
      // best-ranked ids (ties toward lower id) for top-k.
      std::vector<TokenId> cand;
      if (cfg.mode == SampleConfig::Mode::top_k) {
        std::uint32_t k = std::min(std::max(cfg.k, 1u), v);
        cand.resize(v);
        for (std::uint32_t i = 0; i < v; ++i) cand[i] = i;
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end(),
                          [&](TokenId x, TokenId y) {
                            if (row[x] != row[y]) return row[x] > row[y];
                            return x < y;
                          });
        cand.resize(k);
      } else {
        cand.resize(v);
        for (std::uint32_t i = 0; i < v; ++i) cand[i] = i;
      }
      double temp = cfg.mode == SampleConfig::Mode::temperature
                        ? std::max(cfg.temperature, 1e-30)
                        : 1.0;
      double mx = -std::numeric_limits<double>::infinity();
      for (TokenId id : cand) mx = std::max(mx, double(row[id]) / temp);
      std::vector<double> probs(cand.size());
      double sum = 0.0;
      for (std::size_t i = 0; i < cand.size(); ++i) {
        probs[i] = std::exp(double(row[cand[i]]) / temp - mx);
        sum += probs[i];
      }
      double u = unit(rng) * sum;
      double acc = 0.0;
      next = cand.back();
      for (std::size_t i = 0; i < cand.size(); ++i) {
        acc += probs[i];
        if (u <= acc) {
          next = cand[i];
          break;
        }
      }
    }
    out.push_back(next);
  }
  return out;
}

template class Network<float>;
template class Network<double>;
template double masked_nll<float>(const RowMat<float>&,
                                  std::span<const TokenId>, const MaskSet*);
template double masked_nll<double>(const RowMat<double>&,
                                   std::span<const TokenId>, const MaskSet*);
template RowMat<float> masked_nll_logit_grads<float>(const RowMat<float>&,
                                                     std::span<const TokenId>,
                                                     const MaskSet*);
template RowMat<double> masked_nll_logit_grads<double>(
    const RowMat<double>&, std::span<const TokenId>, const MaskSet*);

}  // namespace hapax
