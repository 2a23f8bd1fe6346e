#include <filesystem>

#include "doctest.h"
#include "hapax/evals.hpp"
#include "hapax/text_synth.hpp"
#include "hapax/trainer.hpp"
#include "test_support.hpp"

using namespace hapax;
using namespace hapax::testing;

namespace {

// Zero parameters: layernorms emit their (zero) biases, logits are all zero,
// greedy argmax always lands on token id 0.
ModelParams<float> zero_model(std::uint32_t vocab, std::uint32_t ctx = 128) {
  ModelConfig m;
  m.n_layers = 2;
  m.n_heads = 2;
  m.d_model = 16;
  m.d_head = 8;
  m.vocab_size = vocab;
  m.context_len = ctx;
  return make_params<float>(m);
}

}  // namespace

TEST_CASE("repetition prompt structure") {
  auto p = make_repetition_prompt(std::vector<TokenId>{5, 7, 9});
  CHECK(p.tokens == std::vector<TokenId>{5, 7, 9, 5, 7});
  CHECK(p.target == 9);
  CHECK(p.s == 3);

  auto single = make_repetition_prompt(std::vector<TokenId>{4});
  CHECK(single.tokens == std::vector<TokenId>{4});
  CHECK(single.target == 4);

  auto vocab = Vocabulary::from_tokens({"a", "b", "c", "d"});
  auto prompts = gen_random_repetition(vocab, 25, 50, 3);
  CHECK(prompts.size() == 50);
  for (const auto& pr : prompts) {
    REQUIRE(pr.tokens.size() == 49);
    for (std::uint32_t i = 0; i < 24; ++i)
      CHECK(pr.tokens[25 + i] == pr.tokens[i]);
    CHECK(pr.target == pr.tokens[24]);
    for (TokenId t : pr.tokens) CHECK(t < 4);  // specials excluded
  }
  auto again = gen_random_repetition(vocab, 25, 50, 3);
  for (std::size_t i = 0; i < prompts.size(); ++i)
    CHECK(again[i].tokens == prompts[i].tokens);
  CHECK(gen_random_repetition(vocab, 25, 50, 4)[0].tokens !=
        prompts[0].tokens);
}

TEST_CASE("eval_repetition on the zero model scores chance at id 0") {
  const std::uint32_t regular = 50;
  std::vector<std::string> words;
  for (std::uint32_t i = 0; i < regular; ++i)
    words.push_back("t" + std::to_string(i));
  auto vocab = Vocabulary::from_tokens(std::move(words));
  auto params = zero_model(vocab.size());

  auto prompts = gen_random_repetition(vocab, 12, 2000, 5);
  auto report = eval_repetition(params, prompts, 2);
  CHECK(report.n == 2000);
  // Greedy always answers 0; accuracy = P(target == 0) ~ 1/50.
  double p = 1.0 / regular;
  double margin = 4.0 * std::sqrt(p * (1 - p) / 2000.0);
  CHECK(std::abs(report.accuracy - p) < margin);
  CHECK(report.ci == doctest::Approx(ci_margin(report.accuracy, 2000)));
  double mean = 0;
  for (auto b : report.per_sample) mean += b;
  CHECK(mean / 2000.0 == doctest::Approx(report.accuracy));
}

TEST_CASE("natural repetition: structure and control chance level") {
  std::mt19937_64 rng(9);
  std::vector<TokenId> stream(20'000);
  std::uniform_int_distribution<TokenId> pick(0, 29);
  for (auto& t : stream) t = pick(rng);
  Corpus c = corpus_from_stream(std::move(stream), 30);

  auto params = zero_model(c.vocab.size());
  auto rep = eval_natural_repetition(params, c, 8, 500, NaturalMode::repeated,
                                     7, 2);
  CHECK(rep.n == 500);
  auto ctrl = eval_natural_repetition(params, c, 8, 500,
                                      NaturalMode::non_repeat_control, 7, 2);
  // Uniform corpus: control accuracy ~ 1/30 for the constant-0 model.
  double p = 1.0 / 30.0;
  CHECK(std::abs(ctrl.accuracy - p) < 4.0 * std::sqrt(p * (1 - p) / 500.0));

  CHECK_THROWS_AS(
      eval_natural_repetition(params, c, 1, 10, NaturalMode::repeated, 1, 1),
      EvalError);
}

TEST_CASE("trained model: repeated prompts beat the non-repeat control") {
  SynthConfig sc;
  sc.vocab_words = 40;
  sc.target_tokens = 120'000;
  sc.seed = 31;
  Corpus c = synth_corpus(sc, TokenizerScheme::word_level);

  ModelConfig m;
  m.n_layers = 2;
  m.n_heads = 2;
  m.d_model = 64;
  m.d_head = 32;
  m.vocab_size = c.vocab.size();
  m.context_len = 64;
  m.init_seed = 3;
  TrainConfig t;
  t.steps = 350;
  t.batch_size = 8;
  t.context_len = 64;
  t.lr.peak_lr = 3e-3;
  t.lr.warmup_steps = 10;
  t.checkpoint_every = 1000;
  t.seed = 5;
  t.threads = 2;
  auto dir = std::filesystem::temp_directory_path() / "hapax_eval_train";
  std::filesystem::remove_all(dir);
  auto res = train(t, m, c, dir);

  auto repeated = eval_natural_repetition(res.params, c, 12, 300,
                                          NaturalMode::repeated, 11, 2);
  auto control = eval_natural_repetition(
      res.params, c, 12, 300, NaturalMode::non_repeat_control, 11, 2);
  CHECK(repeated.accuracy >= control.accuracy);
}

TEST_CASE("ICL template rendering matches the quoted-pair format") {
  IclTask task;
  task.name = "fr_en";
  task.kind = IclKind::translation;
  task.pairs = {{"boite de conserve", "can"}, {"chose", "object"}};
  task.validate();
  CHECK(render_demonstration(task, "boite de conserve", "can") ==
        "\"boite de conserve\" - \"can\"");
  CHECK(render_query(task, "chose") == "\"chose\" - \"");
  std::vector<std::size_t> demos{0};
  CHECK(render_icl_prompt(task, demos, 1) ==
        "\"boite de conserve\" - \"can\"\n\"chose\" - \"");
}

TEST_CASE("ICL task files round trip and validate") {
  auto dir = std::filesystem::temp_directory_path() / "hapax_task_test";
  std::filesystem::create_directories(dir);
  IclTask task;
  task.name = "country_capital";
  task.kind = IclKind::abstractive;
  task.scheme = TokenizerScheme::byte_level;
  task.pairs = {{"Greece", "Athens"}, {"China", "Beijing"},
                {"Egypt", "Cairo"}};
  write_task_file(task, dir / "cc.task");
  IclTask back = read_task_file(dir / "cc.task");
  CHECK(back.name == task.name);
  CHECK(back.kind == task.kind);
  CHECK(back.pairs == task.pairs);
  CHECK(back.template_str == task.template_str);

  IclTask bad;
  bad.name = "empty";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  IclTask bad2 = task;
  bad2.template_str = "{y} before {x}";
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
}

TEST_CASE("eval_icl: oracle model, exclusion control, determinism") {
  // Word-level vocabulary whose id 0 is the shared output word; the zero
  // model always answers id 0.
  Corpus c = build_corpus({"paris rome london berlin madrid tokyo :"},
                          TokenizerScheme::word_level, "icl");
  auto params = zero_model(c.vocab.size(), 256);

  IclTask task;
  task.name = "always_paris";
  task.kind = IclKind::abstractive;
  task.scheme = TokenizerScheme::word_level;
  task.template_str = "{x} : {y}";
  task.pairs = {{"rome", "paris"},
                {"london", "paris"},
                {"berlin", "paris"},
                {"madrid", "paris"},
                {"tokyo", "paris"}};

  auto report = eval_icl(params, c.vocab, task, 3, 64, 9, false, 2);
  CHECK(report.accuracy == 1.0);

  // Single distinct output + exclude_target: infeasible.
  CHECK_THROWS_AS(eval_icl(params, c.vocab, task, 3, 16, 9, true, 1),
                  EvalError);

  // Mixed outputs: exclusion must remove same-output demonstrations. The
  // zero model answers "paris", so accuracy equals the rate of paris
  // queries; correctness here is about the draw constraints, checked by a
  // paris-only task below.
  IclTask mixed = task;
  mixed.pairs = {{"rome", "paris"},   {"london", "paris"},
                 {"berlin", "paris"}, {"madrid", "rome"},
                 {"tokyo", "rome"},   {"oslo", "rome"},
                 {"cairo", "rome"},   {"lima", "rome"}};
  // oslo/cairo/lima are unknown words under the frozen vocab; extend corpus.
  Corpus c2 = build_corpus({"paris rome london berlin madrid tokyo oslo "
                            "cairo lima :"},
                           TokenizerScheme::word_level, "icl2");
  auto params2 = zero_model(c2.vocab.size(), 256);
  auto r1 = eval_icl(params2, c2.vocab, mixed, 3, 200, 21, true, 2);
  auto r2 = eval_icl(params2, c2.vocab, mixed, 3, 200, 21, true, 2);
  CHECK(r1.per_sample == r2.per_sample);  // seeded determinism
  auto r3 = eval_icl(params2, c2.vocab, mixed, 3, 200, 22, true, 2);
  CHECK(r1.per_sample != r3.per_sample);

  // Not enough pairs for shots+1.
  CHECK_THROWS_AS(eval_icl(params, c.vocab, task, 5, 8, 1, false, 1),
                  EvalError);
}

TEST_CASE("tld: exact arithmetic, filter soundness, scaled defaults") {
  CHECK(default_tld_positions(128) ==
        std::pair<std::uint32_t, std::uint32_t>{10, 100});
  CHECK(default_tld_positions(2048) ==
        std::pair<std::uint32_t, std::uint32_t>{50, 500});

  SynthConfig sc;
  sc.vocab_words = 32;
  sc.target_tokens = 30'000;
  sc.seed = 41;
  Corpus c = synth_corpus(sc, TokenizerScheme::word_level);
  auto params = zero_model(c.vocab.size());

  // Uniform logits: equal losses at both positions, delta exactly 0.
  auto rep = tld(params, c, 10, 100, TldFilter::all, 64, 2);
  CHECK(rep.loss_a == doctest::Approx(std::log(double(c.vocab.size())))
                          .epsilon(1e-6));
  CHECK(rep.delta == 0.0);
  CHECK(rep.delta == rep.loss_a - rep.loss_b);
  CHECK(rep.windows_retained == rep.windows_total);

  // Non-extractive filtering: every retained window must have both
  // positions unmasked per an independent mask pass.
  auto fil = tld(params, c, 10, 100, TldFilter::non_extractive, 64, 2);
  CHECK(fil.windows_retained < fil.windows_total);
  CHECK(fil.windows_retained > 0);
  const std::uint32_t ctx = params.config.context_len;
  std::uint64_t clean = 0;
  for (std::size_t w = 0; w < fil.windows_total; ++w) {
    auto naive = naive_mask_exact(c.window(ctx, w), c.vocab.doc_boundary());
    bool hit10 = false, hit100 = false;
    for (auto p : naive) {
      hit10 |= p == 10;
      hit100 |= p == 100;
    }
    if (!hit10 && !hit100) ++clean;
  }
  CHECK(clean == fil.windows_retained);

  CHECK_THROWS_AS(tld(params, c, 100, 10, TldFilter::all, 0, 1), EvalError);
  CHECK_THROWS_AS(tld(params, c, 10, 4096, TldFilter::all, 0, 1), EvalError);
}
