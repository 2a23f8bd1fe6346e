#include <filesystem>

#include "doctest.h"
#include "hapax/mech.hpp"
#include "hapax/text_synth.hpp"
#include "hapax/trainer.hpp"
#include "test_support.hpp"

using namespace hapax;
using namespace hapax::testing;

namespace {

ModelConfig mech_config(std::uint32_t vocab, std::uint64_t seed,
                        std::uint32_t ctx = 64) {
  ModelConfig m;
  m.n_layers = 2;
  m.n_heads = 2;
  m.d_model = 16;
  m.d_head = 8;
  m.vocab_size = vocab;
  m.context_len = ctx;
  m.init_seed = seed;
  return m;
}

// Zeroed Q/K projections give exactly uniform causal attention everywhere.
ModelParams<float> uniform_attention_model(const ModelConfig& cfg) {
  auto params = init_params<float>(cfg);
  for (auto& lp : params.layers) {
    lp.wq.setZero();
    lp.bq.setZero();
    lp.wk.setZero();
    lp.bk.setZero();
  }
  return params;
}

Vocabulary small_vocab(std::uint32_t regular) {
  std::vector<std::string> words;
  for (std::uint32_t i = 0; i < regular; ++i)
    words.push_back("v" + std::to_string(i));
  return Vocabulary::from_tokens(std::move(words));
}

}  // namespace

TEST_CASE("score primitives on synthetic attention maps") {
  const std::uint32_t s = 4;
  const std::uint32_t t_len = 2 * s - 1;

  // Perfect induction pattern: A[s+i, i+1] = 1.
  RowMat<float> perfect = RowMat<float>::Zero(t_len, t_len);
  for (std::uint32_t i = 1; i < s; ++i) perfect(s + i - 1, i) = 1.0f;
  CHECK(prefix_matching_from_attention(perfect, s) == doctest::Approx(1.0));

  // Attending only to position 1 scores zero.
  RowMat<float> first = RowMat<float>::Zero(t_len, t_len);
  first.col(0).setOnes();
  CHECK(prefix_matching_from_attention(first, s) == doctest::Approx(0.0));

  // Hard shift-by-one: previous-token score 1; diagonal scores 0.
  RowMat<float> shift = RowMat<float>::Zero(4, 4);
  for (int t = 1; t < 4; ++t) shift(t, t - 1) = 1.0f;
  CHECK(previous_token_from_attention(shift) == doctest::Approx(1.0));
  RowMat<float> diag = RowMat<float>::Identity(4, 4);
  CHECK(previous_token_from_attention(diag) == doctest::Approx(0.0));

  // Uniform causal attention over T=4: mean of 1/2, 1/3, 1/4 = 13/36.
  RowMat<float> uni = RowMat<float>::Zero(4, 4);
  for (int t = 0; t < 4; ++t)
    for (int j = 0; j <= t; ++j) uni(t, j) = 1.0f / float(t + 1);
  CHECK(previous_token_from_attention(uni) ==
        doctest::Approx(13.0 / 36.0).epsilon(1e-6));
}

TEST_CASE("uniform-attention model matches the closed-form prefix score") {
  auto vocab = small_vocab(30);
  auto cfg = mech_config(vocab.size(), 2);
  auto params = uniform_attention_model(cfg);

  const std::uint32_t s = 25;
  auto scores = prefix_matching_scores(params, vocab, 20, s, 7, 2);
  double expected = 0.0;
  for (std::uint32_t i = 1; i < s; ++i) expected += 1.0 / double(s + i);
  expected /= double(s - 1);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l)
    for (std::uint32_t h = 0; h < cfg.n_heads; ++h)
      CHECK(scores.at(l, h) == doctest::Approx(expected).epsilon(1e-6));
  CHECK(scores.max_score() == doctest::Approx(expected).epsilon(1e-6));

  // Previous-token score of uniform attention over T tokens:
  // mean over t>=2 of 1/t.
  std::vector<std::vector<TokenId>> windows{{1, 2, 3, 4}};
  auto prev = previous_token_scores(params, windows, 1);
  CHECK(prev.at(0, 0) == doctest::Approx(13.0 / 36.0).epsilon(1e-6));
}

TEST_CASE("top-k helpers on score matrices") {
  HeadScoreMatrix m;
  m.layers = 2;
  m.heads = 2;
  m.scores = {0.1, 0.9, 0.3, 0.5};
  CHECK(m.max_score() == doctest::Approx(0.9));
  CHECK(m.max_score_after_layer(0) == doctest::Approx(0.5));
  CHECK(m.top_k_mean(2) == doctest::Approx(0.7));
  auto top = m.top_k_heads(2);
  REQUIRE(top.size() == 2);
  CHECK(top[0] == std::pair<std::uint32_t, std::uint32_t>{0, 1});
  CHECK(top[1] == std::pair<std::uint32_t, std::uint32_t>{1, 1});
}

TEST_CASE("mean head activations pool over positions") {
  auto vocab = small_vocab(10);
  auto cfg = mech_config(vocab.size(), 3, 8);
  auto params = init_params<float>(cfg);

  // Corpus of one repeated window: mean equals that window's own mean.
  std::vector<TokenId> stream;
  std::vector<TokenId> window{1, 2, 3, 4, 5, 6, 7, 8};
  for (int rep = 0; rep < 16; ++rep)
    stream.insert(stream.end(), window.begin(), window.end());
  Corpus c = corpus_from_stream(std::move(stream), 10);

  auto means = mean_head_activations(params, c, 50, 9, 2);
  Network<float> net(cfg);
  net.forward(params, window);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    const auto& z = net.head_outputs(l);
    for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
      Eigen::RowVectorXf expect =
          z.middleCols(h * cfg.d_head, cfg.d_head).colwise().mean();
      CHECK((means.at(l, h) - expect).cwiseAbs().maxCoeff() < 1e-5f);
    }
  }

  // Two known windows: hand-computed average of captured activations.
  std::vector<TokenId> w2{8, 7, 6, 5, 4, 3, 2, 1};
  std::vector<TokenId> stream2 = window;
  stream2.insert(stream2.end(), w2.begin(), w2.end());
  Corpus c2 = corpus_from_stream(std::move(stream2), 10);
  auto means2 = mean_head_activations(params, c2, 4000, 10, 2);
  net.forward(params, window);
  Eigen::RowVectorXf za =
      net.head_outputs(0).middleCols(0, cfg.d_head).colwise().mean();
  net.forward(params, w2);
  Eigen::RowVectorXf zb =
      net.head_outputs(0).middleCols(0, cfg.d_head).colwise().mean();
  // Sampling with replacement over two windows: close to the 50/50 mean.
  CHECK((means2.at(0, 0) - 0.5f * (za + zb)).norm() <
        0.25f * (za.norm() + zb.norm()) / 2.0f + 1e-3f);
}

TEST_CASE("ablation scan: identity replacement and dead heads") {
  auto vocab = small_vocab(12);
  auto cfg = mech_config(vocab.size(), 4);
  auto params = init_params<float>(cfg);
  // Kill head (1,1)'s residual contribution.
  params.layers[1].wo.middleRows(cfg.d_head, cfg.d_head).setZero();

  auto prompts = gen_random_repetition(vocab, 6, 40, 5);

  SynthConfig sc;
  sc.vocab_words = 12;
  sc.target_tokens = 4000;
  sc.seed = 3;
  Corpus c = synth_corpus(sc, TokenizerScheme::word_level);
  auto means = mean_head_activations(params, c, 100, 6, 2);

  auto report = ablation_scan(params, prompts, means, 2);
  CHECK(report.n_prompts == 40);
  for (std::uint32_t l = 0; l < cfg.n_layers; ++l)
    for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
      CHECK(report.dp(l, h) >= -1.0);
      CHECK(report.dp(l, h) <= 1.0);
    }
  // Zero output slice: ablating that head cannot change anything.
  CHECK(report.dp(1, 1) == 0.0);
  CHECK(report.dacc(1, 1) == 0.0);
}

TEST_CASE("head logit lens: full-vocab k and the zero-head tie rule") {
  auto vocab = small_vocab(12);
  auto cfg = mech_config(vocab.size(), 5);
  auto params = init_params<float>(cfg);
  auto prompts = gen_random_repetition(vocab, 5, 30, 8);

  CHECK(head_logit_lens(params, 0, 0, prompts, cfg.vocab_size, 2) == 1.0);

  // Zero head output: all scores tie at 0, inclusion iff target id < k.
  auto zeroed = params;
  zeroed.layers[0].wv.middleCols(0, cfg.d_head).setZero();
  zeroed.layers[0].bv.middleCols(0, cfg.d_head).setZero();
  for (std::uint32_t k : {1u, 3u, 7u}) {
    double rate = head_logit_lens(zeroed, 0, 0, prompts, k, 2);
    double expect = 0.0;
    for (const auto& p : prompts) expect += p.target < k ? 1.0 : 0.0;
    expect /= double(prompts.size());
    CHECK(rate == doctest::Approx(expect));
  }

  // Hand-built enumeration oracle on a tiny model.
  auto small_prompts = gen_random_repetition(vocab, 4, 25, 9);
  for (std::uint32_t k : {1u, 2u, 5u}) {
    double rate = head_logit_lens(params, 1, 0, small_prompts, k, 1);
    double expect = 0.0;
    Network<float> net(cfg);
    for (const auto& p : small_prompts) {
      net.forward(params, p.tokens);
      Eigen::RowVectorXf z =
          net.head_outputs(1).row(Eigen::Index(p.tokens.size() - 1))
              .middleCols(0, cfg.d_head);
      Eigen::RowVectorXf scores =
          z * params.layers[1].wo.middleRows(0, cfg.d_head) *
          params.w_unembed;
      std::vector<TokenId> order(cfg.vocab_size);
      for (TokenId i = 0; i < cfg.vocab_size; ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
        if (scores(a) != scores(b)) return scores(a) > scores(b);
        return a < b;
      });
      for (std::uint32_t r = 0; r < k; ++r)
        if (order[r] == p.target) {
          expect += 1.0;
          break;
        }
    }
    expect /= double(small_prompts.size());
    CHECK(rate == doctest::Approx(expect));
  }
}

TEST_CASE("cross-checkpoint patching: identity and config mismatch") {
  auto vocab = small_vocab(16);
  auto cfg = mech_config(vocab.size(), 6);
  auto params = init_params<float>(cfg);

  auto self = cross_checkpoint_patch(params, params, 0, vocab, 12, 6, 3, 2);
  for (std::size_t i = 0; i < self.before.scores.size(); ++i)
    CHECK(self.after.scores[i] == self.before.scores[i]);
  CHECK(self.max_after == self.max_before);

  // Different init seeds still patch (architecture equality only).
  auto cfg2 = cfg;
  cfg2.init_seed = 99;
  auto other = init_params<float>(cfg2);
  auto cross = cross_checkpoint_patch(params, other, 0, vocab, 12, 6, 3, 2);
  CHECK(cross.before.layers == cfg.n_layers);

  auto cfg3 = cfg;
  cfg3.n_heads = 1;
  cfg3.d_head = 16;
  auto mismatch = init_params<float>(cfg3);
  CHECK_THROWS_AS(
      cross_checkpoint_patch(params, mismatch, 0, vocab, 4, 6, 3, 1),
      ConfigError);
}

TEST_CASE("score dynamics: ordering and per-entry errors") {
  auto dir = std::filesystem::temp_directory_path() / "hapax_dyn_test";
  std::filesystem::remove_all(dir);
  auto vocab = small_vocab(16);
  auto cfg = mech_config(vocab.size(), 7);
  auto params = init_params<float>(cfg);

  save_checkpoint(dir / "late", params, 300, 0, nullptr);
  save_checkpoint(dir / "early", params, 100, 0, nullptr);
  std::filesystem::create_directories(dir / "broken");

  std::vector<std::filesystem::path> ckpts{dir / "late", dir / "early",
                                           dir / "broken"};
  DynamicsArgs args;
  args.n_samples = 8;
  args.s = 6;
  args.threads = 2;
  auto series = score_dynamics(ckpts, vocab, args);
  REQUIRE(series.size() == 3);
  // Broken entry sorts first (step 0) and carries its error.
  CHECK_FALSE(series[0].ok);
  CHECK_FALSE(series[0].error.empty());
  CHECK(series[1].step == 100);
  CHECK(series[2].step == 300);
  CHECK(series[1].ok);
  // Identical parameters at both steps: identical scores.
  CHECK(series[1].scores.scores == series[2].scores.scores);

  // Single checkpoint series equals a direct call.
  std::vector<std::filesystem::path> one{dir / "late"};
  auto single = score_dynamics(one, vocab, args);
  auto direct = prefix_matching_scores(params, vocab, args.n_samples, args.s,
                                       args.seed, args.threads);
  CHECK(single[0].scores.scores == direct.scores);
}
