// Exploratory driver for sizing the desk-scale training runs; not a test.
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "hapax/evals.hpp"
#include "hapax/mech.hpp"
#include "hapax/text_synth.hpp"
#include "hapax/trainer.hpp"

using namespace hapax;

int main(int argc, char** argv) {
  std::uint32_t steps = argc > 1 ? std::uint32_t(std::atoi(argv[1])) : 600;
  MaskMode mode = argc > 2 && std::string(argv[2]) == "exact"
                      ? MaskMode::exact
                      : MaskMode::none;
  std::uint64_t tokens = argc > 3 ? std::uint64_t(std::atoll(argv[3]))
                                  : 2'000'000;

  SynthConfig sc;
  sc.vocab_words = 200;
  sc.target_tokens = tokens;
  sc.seed = 1;
  auto t0 = std::chrono::steady_clock::now();
  Corpus corpus = synth_corpus(sc, TokenizerScheme::word_level);
  auto t1 = std::chrono::steady_clock::now();
  std::printf("corpus: %zu tokens, vocab %zu (%.1fs)\n", corpus.stream.size(),
              corpus.vocab.size(),
              std::chrono::duration<double>(t1 - t0).count());
  std::printf("mask fraction (exact, ctx 128): %.3f\n",
              mask_fraction(corpus, MaskMode::exact, 128).fraction);

  ModelConfig m;
  m.n_layers = 2;
  m.n_heads = 4;
  m.d_model = 128;
  m.d_head = 32;
  m.vocab_size = corpus.vocab.size();
  m.context_len = 128;
  m.init_seed = 1;

  TrainConfig t;
  t.steps = steps;
  t.batch_size = 8;
  t.context_len = 128;
  t.lr.peak_lr = 1e-3;
  t.lr.warmup_steps = steps / 100 + 1;
  t.checkpoint_every = 10000;
  t.seed = 1;
  t.threads = 2;
  t.mask_mode = mode;

  auto dir = std::filesystem::path("pilot_out") /
             (mode == MaskMode::exact ? "hapax" : "vanilla");
  std::filesystem::remove_all(dir);
  t0 = std::chrono::steady_clock::now();
  auto res = train(t, m, corpus, dir, nullptr, nullptr, nullptr, &std::cout);
  t1 = std::chrono::steady_clock::now();
  double secs = std::chrono::duration<double>(t1 - t0).count();
  std::printf("train: %u steps in %.1fs (%.3f s/step)\n", steps, secs,
              secs / steps);
  std::printf("loss first=%.3f last=%.3f\n", res.stats.front().loss,
              res.stats.back().loss);

  auto prompts = gen_random_repetition(corpus.vocab, 25, 500, 99);
  auto rep = eval_repetition(res.params, prompts, 2);
  std::printf("random repetition acc: %.3f +- %.3f\n", rep.accuracy, rep.ci);

  auto scores = prefix_matching_scores(res.params, corpus.vocab, 200, 25, 7, 2);
  std::printf("prefix scores:\n");
  for (std::uint32_t l = 0; l < m.n_layers; ++l) {
    for (std::uint32_t h = 0; h < m.n_heads; ++h)
      std::printf("  L%uH%u=%.3f", l, h, scores.at(l, h));
    std::printf("\n");
  }
  std::vector<std::vector<TokenId>> wins;
  for (std::size_t i = 0; i < 32; ++i)
    wins.emplace_back(corpus.window(128, i).begin(),
                      corpus.window(128, i).end());
  auto prev = previous_token_scores(res.params, wins, 2);
  std::printf("prev-token scores:\n");
  for (std::uint32_t l = 0; l < m.n_layers; ++l) {
    for (std::uint32_t h = 0; h < m.n_heads; ++h)
      std::printf("  L%uH%u=%.3f", l, h, prev.at(l, h));
    std::printf("\n");
  }
  return 0;
}
