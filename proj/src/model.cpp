#include "hapax/model.hpp"

#include <cmath>
#include <random>

namespace hapax {

const char* position_scheme_name(PositionScheme s) {
  return s == PositionScheme::learned_absolute ? "learned_absolute" : "rotary";
}

PositionScheme position_scheme_from_name(std::string_view name) {
  if (name == "learned_absolute") return PositionScheme::learned_absolute;
  if (name == "rotary") return PositionScheme::rotary;
  throw ConfigError("unknown position scheme: " + std::string(name));
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
  if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
  if (d_model != n_heads * d_head)
    throw ConfigError("d_model (" + std::to_string(d_model) +
                      ") != n_heads * d_head (" +
                      std::to_string(n_heads * d_head) + ")");
  if (context_len < 2) throw ConfigError("context_len must be >= 2");
  if (vocab_size < 3) throw ConfigError("vocab_size must be >= 3");
  if (!(layernorm_eps > 0)) throw ConfigError("layernorm_eps must be > 0");
  if (position_scheme == PositionScheme::rotary && d_head % 2 != 0)
    throw ConfigError("rotary positions require an even d_head");
}

bool ModelConfig::same_architecture(const ModelConfig& o) const {
  return n_layers == o.n_layers && n_heads == o.n_heads &&
         d_model == o.d_model && d_head == o.d_head &&
         vocab_size == o.vocab_size && context_len == o.context_len &&
         position_scheme == o.position_scheme &&
         layernorm_eps == o.layernorm_eps &&
         tied_embeddings == o.tied_embeddings;
}

void ModelConfig::to_kv(KvFile& kv, const std::string& prefix) const {
  kv.set_u64(prefix + "n_layers", n_layers);
  kv.set_u64(prefix + "n_heads", n_heads);
  kv.set_u64(prefix + "d_model", d_model);
  kv.set_u64(prefix + "d_head", d_head);
  kv.set_u64(prefix + "vocab_size", vocab_size);
  kv.set_u64(prefix + "context_len", context_len);
  kv.set(prefix + "position_scheme", position_scheme_name(position_scheme));
  kv.set_f64(prefix + "layernorm_eps", layernorm_eps);
  kv.set_u64(prefix + "init_seed", init_seed);
  kv.set_bool(prefix + "tied_embeddings", tied_embeddings);
}

ModelConfig ModelConfig::from_kv(const KvFile& kv, const std::string& prefix) {
  ModelConfig c;
  c.n_layers = static_cast<std::uint32_t>(kv.get_u64(prefix + "n_layers"));
  c.n_heads = static_cast<std::uint32_t>(kv.get_u64(prefix + "n_heads"));
  c.d_model = static_cast<std::uint32_t>(kv.get_u64(prefix + "d_model"));
  c.d_head = static_cast<std::uint32_t>(kv.get_u64(prefix + "d_head"));
  c.vocab_size = static_cast<std::uint32_t>(kv.get_u64(prefix + "vocab_size"));
  c.context_len =
      static_cast<std::uint32_t>(kv.get_u64(prefix + "context_len"));
  c.position_scheme =
      position_scheme_from_name(kv.get(prefix + "position_scheme"));
  c.layernorm_eps = static_cast<float>(kv.get_f64(prefix + "layernorm_eps"));
  c.init_seed = kv.get_u64(prefix + "init_seed");
  c.tied_embeddings = kv.get_bool_or(prefix + "tied_embeddings", false);
  c.validate();
  return c;
}

template <typename Real>
ModelParams<Real> make_params(const ModelConfig& config) {
  config.validate();
  ModelParams<Real> p;
  p.config = config;
  const auto d = config.d_model;
  const auto m = config.d_mlp();
  p.wte = RowMat<Real>::Zero(config.vocab_size, d);
  if (config.position_scheme == PositionScheme::learned_absolute)
    p.wpe = RowMat<Real>::Zero(config.context_len, d);
  p.layers.resize(config.n_layers);
  for (auto& lp : p.layers) {
    lp.ln1_g = RowMat<Real>::Zero(1, d);
    lp.ln1_b = RowMat<Real>::Zero(1, d);
    lp.wq = RowMat<Real>::Zero(d, d);
    lp.wk = RowMat<Real>::Zero(d, d);
    lp.wv = RowMat<Real>::Zero(d, d);
    lp.wo = RowMat<Real>::Zero(d, d);
    lp.bq = RowMat<Real>::Zero(1, d);
    lp.bk = RowMat<Real>::Zero(1, d);
    lp.bv = RowMat<Real>::Zero(1, d);
    lp.bo = RowMat<Real>::Zero(1, d);
    lp.ln2_g = RowMat<Real>::Zero(1, d);
    lp.ln2_b = RowMat<Real>::Zero(1, d);
    lp.w_fc_in = RowMat<Real>::Zero(d, m);
    lp.b_fc_in = RowMat<Real>::Zero(1, m);
    lp.w_fc_out = RowMat<Real>::Zero(m, d);
    lp.b_fc_out = RowMat<Real>::Zero(1, d);
  }
  p.lnf_g = RowMat<Real>::Zero(1, d);
  p.lnf_b = RowMat<Real>::Zero(1, d);
  if (!config.tied_embeddings)
    p.w_unembed = RowMat<Real>::Zero(d, config.vocab_size);
  return p;
}

namespace {

std::string_view leaf_name(const std::string& name) {
  auto dot = name.rfind('.');
  return dot == std::string::npos
             ? std::string_view(name)
             : std::string_view(name).substr(dot + 1);
}

}  // namespace

template <typename Real>
ModelParams<Real> init_params(const ModelConfig& config) {
  ModelParams<Real> p = make_params<Real>(config);
  auto rng = make_rng(config.init_seed, "init");
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double emb_std = 1.0 / std::sqrt(double(config.d_model));
  p.visit([&](const std::string& name, RowMat<Real>& mat) {
    auto leaf = leaf_name(name);
    if (leaf.substr(0, 2) == "ln") {
      if (leaf.size() >= 2 && leaf[leaf.size() - 1] == 'g')
        mat.setConstant(Real(1));
      // layernorm biases stay zero
      return;
    }
    if (leaf[0] == 'b') return;  // biases stay zero
    double std_dev = (leaf == "wte" || leaf == "wpe")
                         ? emb_std
                         : 1.0 / std::sqrt(double(mat.rows()));
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      for (Eigen::Index j = 0; j < mat.cols(); ++j)
        mat(i, j) = Real(gauss(rng) * std_dev);
  });
  return p;
}

template <typename Real>
ModelParams<Real> zeros_like(const ModelParams<Real>& p) {
  return make_params<Real>(p.config);
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out = make_params<To>(p.config);
  auto copy = [](const RowMat<From>& src, RowMat<To>& dst) {
    dst = src.template cast<To>();
  };
  copy(p.wte, out.wte);
  if (p.wpe.size() > 0) copy(p.wpe, out.wpe);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    copy(p.layers[l].ln1_g, out.layers[l].ln1_g);
    copy(p.layers[l].ln1_b, out.layers[l].ln1_b);
    copy(p.layers[l].wq, out.layers[l].wq);
    copy(p.layers[l].wk, out.layers[l].wk);
    copy(p.layers[l].wv, out.layers[l].wv);
    copy(p.layers[l].wo, out.layers[l].wo);
    copy(p.layers[l].bq, out.layers[l].bq);
    copy(p.layers[l].bk, out.layers[l].bk);
    copy(p.layers[l].bv, out.layers[l].bv);
    copy(p.layers[l].bo, out.layers[l].bo);
    copy(p.layers[l].ln2_g, out.layers[l].ln2_g);
    copy(p.layers[l].ln2_b, out.layers[l].ln2_b);
    copy(p.layers[l].w_fc_in, out.layers[l].w_fc_in);
    copy(p.layers[l].b_fc_in, out.layers[l].b_fc_in);
    copy(p.layers[l].w_fc_out, out.layers[l].w_fc_out);
    copy(p.layers[l].b_fc_out, out.layers[l].b_fc_out);
  }
  copy(p.lnf_g, out.lnf_g);
  copy(p.lnf_b, out.lnf_b);
  if (p.w_unembed.size() > 0) copy(p.w_unembed, out.w_unembed);
  return out;
}

std::uint64_t params_checksum(const ModelParams<float>& p) {
  std::uint64_t h = 1469598103934665603ull;
  p.visit([&](const std::string& name, const RowMat<float>& m) {
    h = fnv1a(name, h);
    h = fnv1a(m.data(), sizeof(float) * m.size(), h);
  });
  return h;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> make_params<float>(const ModelConfig&);
template ModelParams<double> make_params<double>(const ModelConfig&);
template ModelParams<float> init_params<float>(const ModelConfig&);
template ModelParams<double> init_params<double>(const ModelConfig&);
template ModelParams<float> zeros_like<float>(const ModelParams<float>&);
template ModelParams<double> zeros_like<double>(const ModelParams<double>&);
template ModelParams<double> cast_params<double, float>(
    const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(
    const ModelParams<double>&);

}  // namespace hapax
