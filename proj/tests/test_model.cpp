#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "hapax/checkpoint.hpp"
#include "hapax/network.hpp"
#include "test_support.hpp"

using namespace hapax;
using namespace hapax::testing;

namespace {

ModelConfig tiny_config(std::uint64_t seed = 1) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 32;
  c.d_head = 16;
  c.vocab_size = 20;
  c.context_len = 16;
  c.init_seed = seed;
  return c;
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n,
                                   std::uint32_t vocab) {
  std::uniform_int_distribution<TokenId> pick(0, vocab - 1);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = pick(rng);
  return t;
}

bool logits_equal_bits(const RowMat<float>& a, const RowMat<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0;
}

bool row_equal_bits(const RowMat<float>& a, const RowMat<float>& b,
                    Eigen::Index r) {
  return std::memcmp(a.data() + r * a.cols(), b.data() + r * b.cols(),
                     sizeof(float) * a.cols()) == 0;
}

}  // namespace

TEST_CASE("init is deterministic per seed and matches the declared scale") {
  auto a = init_params<float>(tiny_config(5));
  auto b = init_params<float>(tiny_config(5));
  CHECK(params_checksum(a) == params_checksum(b));
  auto c = init_params<float>(tiny_config(6));
  CHECK(params_checksum(a) != params_checksum(c));

  // Mean |entry| of Q over 10 seeds within 3 sigma of the N(0, 1/d) value.
  const double sigma = 1.0 / std::sqrt(32.0);
  const double expected = sigma * std::sqrt(2.0 / M_PI);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = init_params<double>(tiny_config(seed));
    sum += p.layers[0].wq.array().abs().sum();
    n += p.layers[0].wq.size();
  }
  double mean = sum / double(n);
  double tol = 3.0 * sigma * std::sqrt(1.0 - 2.0 / M_PI) / std::sqrt(double(n));
  CHECK(std::abs(mean - expected) < tol);
}

TEST_CASE("attention rows are causal and stochastic") {
  auto cfg = tiny_config();
  auto params = init_params<float>(cfg);
  Network<float> net(cfg);
  std::mt19937_64 rng(2);
  for (int it = 0; it < 5; ++it) {
    auto toks = random_tokens(rng, 12, cfg.vocab_size);
    net.forward(params, toks);
    for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
      for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
        const auto& a = net.attention(l, h);
        for (Eigen::Index t = 0; t < a.rows(); ++t) {
          CHECK(a.row(t).sum() == doctest::Approx(1.0).epsilon(1e-5));
          for (Eigen::Index j = t + 1; j < a.cols(); ++j)
            CHECK(a(t, j) == 0.0f);
        }
      }
    }
  }
}

TEST_CASE("logit causality: later tokens never affect earlier logits") {
  for (auto scheme :
       {PositionScheme::learned_absolute, PositionScheme::rotary}) {
    auto cfg = tiny_config();
    cfg.position_scheme = scheme;
    auto params = init_params<float>(cfg);
    Network<float> net(cfg);
    std::mt19937_64 rng(3);
    auto toks = random_tokens(rng, 10, cfg.vocab_size);
    RowMat<float> base = net.forward(params, toks);
    // Perturb the last token.
    auto toks2 = toks;
    toks2.back() = (toks2.back() + 1) % cfg.vocab_size;
    RowMat<float> changed = net.forward(params, toks2);
    for (Eigen::Index r = 0; r + 1 < base.rows(); ++r)
      CHECK(row_equal_bits(base, changed, r));
    CHECK_FALSE(row_equal_bits(base, changed, base.rows() - 1));
    // Perturb a middle token: earlier rows unchanged.
    auto toks3 = toks;
    toks3[4] = (toks3[4] + 3) % cfg.vocab_size;
    RowMat<float> mid = net.forward(params, toks3);
    for (Eigen::Index r = 0; r < 4; ++r) CHECK(row_equal_bits(base, mid, r));
  }
}

TEST_CASE("identity interventions reproduce clean logits bit-exactly") {
  auto cfg = tiny_config(9);
  auto params = init_params<float>(cfg);
  Network<float> net(cfg);
  std::mt19937_64 rng(4);
  for (int it = 0; it < 100; ++it) {
    auto toks = random_tokens(rng, 2 + it % 14, cfg.vocab_size);
    RowMat<float> clean = net.forward(params, toks);
    const std::uint32_t t_len = static_cast<std::uint32_t>(toks.size());
    std::uint32_t layer = it % cfg.n_layers;
    std::uint32_t head = it % cfg.n_heads;

    std::vector<std::uint32_t> all(t_len);
    for (std::uint32_t i = 0; i < t_len; ++i) all[i] = i;

    // Capture the head's own activation and the layer's own output.
    Eigen::MatrixXd own_z =
        net.head_outputs(layer)
            .middleCols(head * cfg.d_head, cfg.d_head)
            .cast<double>();
    Eigen::MatrixXd own_layer = net.layer_output(layer).cast<double>();

    Intervention ab = Intervention::ablate(layer, head, all, own_z);
    RowMat<float> ablated = net.forward(params, toks, {&ab, 1});
    CHECK(logits_equal_bits(clean, ablated));

    Intervention pa = Intervention::patch(layer, all, own_layer);
    RowMat<float> patched = net.forward(params, toks, {&pa, 1});
    CHECK(logits_equal_bits(clean, patched));
  }
}

TEST_CASE("interventions change logits when not identity, and validate") {
  auto cfg = tiny_config(9);
  auto params = init_params<float>(cfg);
  Network<float> net(cfg);
  std::vector<TokenId> toks{1, 2, 3, 4, 5};
  RowMat<float> clean = net.forward(params, toks);

  Intervention zero_head = Intervention::ablate(
      0, 0, {4}, Eigen::MatrixXd::Zero(1, cfg.d_head));
  RowMat<float> z = net.forward(params, toks, {&zero_head, 1});
  CHECK_FALSE(logits_equal_bits(clean, z));
  // Earlier positions untouched by a final-position ablation.
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(row_equal_bits(clean, z, r));

  Intervention bad = Intervention::ablate(
      9, 0, {0}, Eigen::MatrixXd::Zero(1, cfg.d_head));
  CHECK_THROWS_AS(net.forward(params, toks, {&bad, 1}), ConfigError);
  Intervention bad2 = Intervention::ablate(
      0, 0, {99}, Eigen::MatrixXd::Zero(1, cfg.d_head));
  CHECK_THROWS_AS(net.forward(params, toks, {&bad2, 1}), ConfigError);
  Intervention bad3 =
      Intervention::patch(0, {0}, Eigen::MatrixXd::Zero(1, 7));
  CHECK_THROWS_AS(net.forward(params, toks, {&bad3, 1}), ConfigError);
}

TEST_CASE("masked loss worked examples") {
  // Probability ~1 on every unmasked target: loss 0.
  RowMat<double> logits = RowMat<double>::Zero(3, 4);
  std::vector<TokenId> toks{0, 2, 1};
  logits(0, 2) = 1000.0;
  logits(1, 1) = 1000.0;
  CHECK(masked_nll<double>(logits, toks, nullptr) == 0.0);

  // Uniform logits: loss = ln V.
  RowMat<double> uni = RowMat<double>::Constant(3, 7, 0.42);
  CHECK(masked_nll<double>(uni, toks, nullptr) ==
        doctest::Approx(std::log(7.0)).epsilon(1e-12));

  // Two-position toy against a high-precision oracle.
  RowMat<double> toy(2, 3);
  toy.row(0) << 1.5, -0.5, 0.25;
  toy.row(1) << 0.0, 0.0, 0.0;
  std::vector<TokenId> toy_toks{0, 2};
  CHECK(masked_nll<double>(toy, toy_toks, nullptr) ==
        doctest::Approx(1.60195186380280167).epsilon(1e-14));

  // All predictable positions masked: structured error.
  MaskSet all;
  all.window_len = 3;
  all.flags = {0, 0, 1, 1};
  all.count = 2;
  CHECK_THROWS_WITH_AS(masked_nll<double>(uni, toks, &all),
                       "empty unmasked set", EvalError);
}

TEST_CASE("generate modes") {
  auto cfg = tiny_config(11);
  cfg.vocab_size = 4;
  auto params = init_params<float>(cfg);
  std::vector<TokenId> prompt{1, 2};

  SampleConfig greedy;
  CHECK(generate(params, prompt, 0, greedy) == prompt);
  auto g1 = generate(params, prompt, 8, greedy);
  auto g2 = generate(params, prompt, 8, greedy);
  CHECK(g1 == g2);
  CHECK(g1.size() == 10);

  SampleConfig temp;
  temp.mode = SampleConfig::Mode::temperature;
  temp.temperature = 1e9;
  // Near-infinite temperature approaches the uniform distribution.
  std::array<std::uint64_t, 4> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    temp.seed = std::uint64_t(i);
    auto out = generate(params, prompt, 1, temp);
    ++counts[out.back()];
  }
  double chi2 = 0.0;
  for (auto c : counts) {
    double diff = double(c) - draws / 4.0;
    chi2 += diff * diff / (draws / 4.0);
  }
  CHECK(chi2 < 16.27);  // dof 3, p = 0.001

  SampleConfig topk;
  topk.mode = SampleConfig::Mode::top_k;
  topk.k = 1;
  topk.seed = 3;
  // top-1 sampling is greedy.
  CHECK(generate(params, prompt, 8, topk) == g1);

  SampleConfig tempsame;
  tempsame.mode = SampleConfig::Mode::temperature;
  tempsame.temperature = 0.8;
  tempsame.seed = 123;
  CHECK(generate(params, prompt, 16, tempsame) ==
        generate(params, prompt, 16, tempsame));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  auto dir = std::filesystem::temp_directory_path() / "hapax_ckpt_test";
  std::filesystem::remove_all(dir);
  auto cfg = tiny_config(21);
  auto params = init_params<float>(cfg);
  AdamState optim = AdamState::zeros(cfg);
  optim.steps = 7;
  optim.m.wte.setConstant(0.25f);
  optim.v.layers[1].wo.setConstant(0.125f);

  save_checkpoint(dir, params, 4200, 77, &optim);
  auto loaded = load_checkpoint(dir);
  CHECK(loaded.meta.step == 4200);
  CHECK(loaded.meta.seed == 77);
  CHECK(loaded.meta.config.same_architecture(cfg));
  CHECK(loaded.meta.config.init_seed == cfg.init_seed);
  CHECK(params_checksum(loaded.params) == params_checksum(params));
  REQUIRE(loaded.optim.has_value());
  CHECK(loaded.optim->steps == 7);
  CHECK(params_checksum(loaded.optim->m) == params_checksum(optim.m));
  CHECK(params_checksum(loaded.optim->v) == params_checksum(optim.v));

  // Same forward bits after reload.
  Network<float> net(cfg);
  std::vector<TokenId> toks{3, 1, 4, 1, 5};
  RowMat<float> a = net.forward(params, toks);
  RowMat<float> b = net.forward(loaded.params, toks);
  CHECK(logits_equal_bits(a, b));

  // Embedding matrix loader.
  Eigen::MatrixXf wte = load_embedding_matrix(dir);
  CHECK(wte.rows() == cfg.vocab_size);
  CHECK((wte - params.wte).norm() == 0.0f);
}

TEST_CASE("checkpoint shape and truncation errors") {
  auto dir = std::filesystem::temp_directory_path() / "hapax_ckpt_err";
  std::filesystem::remove_all(dir);
  auto cfg = tiny_config(22);
  auto params = init_params<float>(cfg);
  save_checkpoint(dir, params, 1, 0, nullptr);

  // Manifest declaring a different shape: shape mismatch on load.
  KvFile kv = KvFile::read(dir / "manifest.txt");
  kv.set("config.d_model", "64");
  kv.set("config.d_head", "32");
  kv.write(dir / "manifest.txt");
  CHECK_THROWS_AS(load_checkpoint(dir), FormatError);

  // Restore manifest, truncate the blob.
  save_checkpoint(dir, params, 1, 0, nullptr);
  std::filesystem::resize_file(
      dir / "tensors.bin",
      std::filesystem::file_size(dir / "tensors.bin") - 10);
  CHECK_THROWS_AS(load_checkpoint(dir), FormatError);
}

TEST_CASE("tied embeddings share the unembedding") {
  auto cfg = tiny_config(31);
  cfg.tied_embeddings = true;
  auto params = init_params<float>(cfg);
  CHECK(params.w_unembed.size() == 0);
  Network<float> net(cfg);
  std::vector<TokenId> toks{1, 2, 3};
  const auto& logits = net.forward(params, toks);
  CHECK(logits.cols() == cfg.vocab_size);
}
