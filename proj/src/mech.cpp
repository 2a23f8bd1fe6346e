#include "hapax/mech.hpp"

#include <algorithm>
#include <random>

#include "hapax/checkpoint.hpp"
#include "hapax/threading.hpp"

namespace hapax {

const char* head_metric_name(HeadMetric m) {
  return m == HeadMetric::prefix_matching ? "prefix_matching"
                                          : "previous_token";
}

HeadMetric head_metric_from_name(std::string_view name) {
  if (name == "prefix_matching") return HeadMetric::prefix_matching;
  if (name == "previous_token") return HeadMetric::previous_token;
  throw ConfigError("unknown head metric: " + std::string(name));
}

double HeadScoreMatrix::max_score() const {
  double best = 0.0;
  for (double v : scores) best = std::max(best, v);
  return best;
}

double HeadScoreMatrix::max_score_after_layer(std::uint32_t layer) const {
  double best = 0.0;
  for (std::uint32_t l = layer + 1; l < layers; ++l)
    for (std::uint32_t h = 0; h < heads; ++h) best = std::max(best, at(l, h));
  return best;
}

double HeadScoreMatrix::top_k_mean(std::uint32_t k) const {
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  k = std::min<std::uint32_t>(k, sorted.size());
  if (k == 0) return 0.0;
  double sum = 0.0;
  for (std::uint32_t i = 0; i < k; ++i) sum += sorted[i];
  return sum / double(k);
}

std::vector<std::pair<std::uint32_t, std::uint32_t>>
HeadScoreMatrix::top_k_heads(std::uint32_t k) const {
  std::vector<std::pair<double, std::uint32_t>> ranked;
  for (std::uint32_t i = 0; i < scores.size(); ++i)
    ranked.emplace_back(scores[i], i);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  k = std::min<std::uint32_t>(k, ranked.size());
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::uint32_t i = 0; i < k; ++i)
    out.emplace_back(ranked[i].second / heads, ranked[i].second % heads);
  return out;
}

double prefix_matching_from_attention(const RowMat<float>& attn,
                                      std::uint32_t s) {
  if (s < 2) throw EvalError("prefix matching needs s >= 2");
  const auto t_len = static_cast<std::uint32_t>(attn.rows());
  if (t_len != 2 * s - 1)
    throw EvalError("attention map rows != 2s-1");
  double sum = 0.0;
  // 1-based A_{s+i, i+1} for i = 1..s-1 -> 0-based (s+i-1, i).
  for (std::uint32_t i = 1; i < s; ++i) sum += double(attn(s + i - 1, i));
  return sum / double(s - 1);
}

double previous_token_from_attention(const RowMat<float>& attn) {
  const auto t_len = static_cast<std::uint32_t>(attn.rows());
  if (t_len < 2) throw EvalError("previous-token score needs T >= 2");
  double sum = 0.0;
  for (std::uint32_t t = 1; t < t_len; ++t) sum += double(attn(t, t - 1));
  return sum / double(t_len - 1);
}

namespace {

HeadScoreMatrix zero_scores(const ModelConfig& config, HeadMetric metric) {
  HeadScoreMatrix m;
  m.layers = config.n_layers;
  m.heads = config.n_heads;
  m.metric = metric;
  m.scores.assign(std::size_t(m.layers) * m.heads, 0.0);
  return m;
}

// Accumulates per-head scores over prompts in deterministic chunk order.
template <typename ScoreFn>
HeadScoreMatrix mean_head_scores(const ModelParams<float>& params,
                                 std::size_t n, unsigned threads,
                                 HeadMetric metric, ScoreFn&& score_one) {
  HeadScoreMatrix out = zero_scores(params.config, metric);
  const std::size_t cells = out.scores.size();
  unsigned workers = std::max(1u, threads);
  std::vector<std::vector<double>> partial(
      workers, std::vector<double>(cells, 0.0));
  parallel_chunks(n, workers,
                  [&](unsigned tid, std::size_t begin, std::size_t end) {
                    Network<float> net(params.config);
                    for (std::size_t i = begin; i < end; ++i)
                      score_one(net, i, partial[tid]);
                  });
  for (const auto& part : partial)
    for (std::size_t c = 0; c < cells; ++c) out.scores[c] += part[c];
  for (auto& v : out.scores) v /= double(n);
  return out;
}

}  // namespace

HeadScoreMatrix prefix_matching_scores(const ModelParams<float>& params,
                                       const Vocabulary& vocab,
                                       std::uint32_t n_samples,
                                       std::uint32_t s, std::uint64_t seed,
                                       unsigned threads) {
  if (2 * s - 1 > params.config.context_len)
    throw EvalError("repetition prompt longer than model context");
  auto prompts = gen_random_repetition(vocab, s, n_samples, seed);
  auto out = mean_head_scores(
      params, prompts.size(), threads, HeadMetric::prefix_matching,
      [&](Network<float>& net, std::size_t i, std::vector<double>& acc) {
        net.forward(params, prompts[i].tokens);
        for (std::uint32_t l = 0; l < params.config.n_layers; ++l)
          for (std::uint32_t h = 0; h < params.config.n_heads; ++h)
            acc[std::size_t(l) * params.config.n_heads + h] +=
                prefix_matching_from_attention(net.attention(l, h), s);
      });
  out.n_samples = n_samples;
  out.s = s;
  return out;
}

HeadScoreMatrix previous_token_scores(
    const ModelParams<float>& params,
    std::span<const std::vector<TokenId>> windows, unsigned threads) {
  if (windows.empty()) throw EvalError("previous_token_scores needs windows");
  for (const auto& w : windows)
    if (w.size() < 2) throw EvalError("previous-token windows need length >= 2");
  auto out = mean_head_scores(
      params, windows.size(), threads, HeadMetric::previous_token,
      [&](Network<float>& net, std::size_t i, std::vector<double>& acc) {
        net.forward(params, windows[i]);
        for (std::uint32_t l = 0; l < params.config.n_layers; ++l)
          for (std::uint32_t h = 0; h < params.config.n_heads; ++h)
            acc[std::size_t(l) * params.config.n_heads + h] +=
                previous_token_from_attention(net.attention(l, h));
      });
  out.n_samples = static_cast<std::uint32_t>(windows.size());
  return out;
}

MeanActivations mean_head_activations(const ModelParams<float>& params,
                                      const Corpus& corpus,
                                      std::uint64_t n_samples,
                                      std::uint64_t seed, unsigned threads) {
  const auto& cfg = params.config;
  const std::size_t windows = corpus.num_windows(cfg.context_len);
  if (windows == 0)
    throw EvalError("corpus shorter than one context window");
  if (n_samples == 0) throw EvalError("n_samples must be >= 1");

  // Sampled window indices (with replacement), fixed up front.
  std::vector<std::size_t> picks(n_samples);
  {
    auto rng = make_rng(seed, "mean_activations");
    std::uniform_int_distribution<std::size_t> pick(0, windows - 1);
    for (auto& p : picks) p = pick(rng);
  }

  MeanActivations out;
  out.layers = cfg.n_layers;
  out.heads = cfg.n_heads;
  out.d_head = cfg.d_head;
  out.n_samples = n_samples;
  out.reference = corpus.source;
  const std::size_t cells = std::size_t(cfg.n_layers) * cfg.n_heads;

  unsigned workers = std::max(1u, threads);
  std::vector<Eigen::MatrixXd> partial(
      workers, Eigen::MatrixXd::Zero(cells, cfg.d_head));
  parallel_chunks(
      n_samples, workers, [&](unsigned tid, std::size_t begin,
                              std::size_t end) {
        Network<float> net(cfg);
        for (std::size_t i = begin; i < end; ++i) {
          auto win = corpus.window(cfg.context_len, picks[i]);
          net.forward(params, win);
          for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
            const auto& z = net.head_outputs(l);
            for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
              partial[tid].row(std::size_t(l) * cfg.n_heads + h) +=
                  z.middleCols(h * cfg.d_head, cfg.d_head)
                      .colwise()
                      .sum()
                      .cast<double>();
            }
          }
        }
      });
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(cells, cfg.d_head);
  for (const auto& part : partial) total += part;
  total /= double(n_samples) * double(cfg.context_len);
  out.means = total.cast<float>();
  return out;
}

AblationReport ablation_scan(const ModelParams<float>& params,
                             std::span<const RepetitionPrompt> prompts,
                             const MeanActivations& means, unsigned threads) {
  const auto& cfg = params.config;
  if (means.layers != cfg.n_layers || means.heads != cfg.n_heads ||
      means.d_head != cfg.d_head)
    throw EvalError("mean activations do not match the model shape");
  if (prompts.empty()) throw EvalError("ablation_scan needs prompts");

  AblationReport report;
  report.layers = cfg.n_layers;
  report.heads = cfg.n_heads;
  report.n_prompts = prompts.size();
  report.reference = means.reference;
  const std::size_t cells = std::size_t(cfg.n_layers) * cfg.n_heads;
  report.delta_p.assign(cells, 0.0);
  report.delta_acc.assign(cells, 0.0);

  unsigned workers = std::max(1u, threads);
  std::vector<std::vector<double>> dp(workers,
                                      std::vector<double>(cells, 0.0));
  std::vector<std::vector<double>> dacc(workers,
                                        std::vector<double>(cells, 0.0));

  parallel_chunks(
      prompts.size(), workers,
      [&](unsigned tid, std::size_t begin, std::size_t end) {
        Network<float> net(cfg);
        Network<float> abl(cfg);
        for (std::size_t i = begin; i < end; ++i) {
          const auto& prompt = prompts[i];
          const std::uint32_t last =
              static_cast<std::uint32_t>(prompt.tokens.size() - 1);
          // Shared clean run.
          const auto& logits = net.forward(params, prompt.tokens);
          auto prob_of_target = [&](const RowMat<float>& lg) {
            auto row = lg.row(Eigen::Index(last));
            float mx = row.maxCoeff();
            double sum = 0.0;
            for (Eigen::Index c = 0; c < row.cols(); ++c)
              sum += std::exp(double(row(c) - mx));
            return std::exp(double(row(prompt.target) - mx)) / sum;
          };
          double p_clean = prob_of_target(logits);
          bool acc_clean =
              argmax_lowest(row_span(logits, Eigen::Index(last))) ==
              prompt.target;

          for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
            for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
              Intervention iv = Intervention::ablate(
                  l, h, {last}, means.at(l, h).cast<double>());
              const auto& lg = abl.forward(params, prompt.tokens, {&iv, 1});
              double p_abl = prob_of_target(lg);
              bool acc_abl =
                  argmax_lowest(row_span(lg, Eigen::Index(last))) ==
                  prompt.target;
              std::size_t c = std::size_t(l) * cfg.n_heads + h;
              dp[tid][c] += p_clean - p_abl;
              dacc[tid][c] +=
                  (acc_clean ? 1.0 : 0.0) - (acc_abl ? 1.0 : 0.0);
            }
          }
        }
      });
  for (unsigned w = 0; w < workers; ++w)
    for (std::size_t c = 0; c < cells; ++c) {
      report.delta_p[c] += dp[w][c] / double(prompts.size());
      report.delta_acc[c] += dacc[w][c] / double(prompts.size());
    }
  return report;
}

double head_logit_lens(const ModelParams<float>& params, std::uint32_t layer,
                       std::uint32_t head,
                       std::span<const RepetitionPrompt> prompts,
                       std::uint32_t k, unsigned threads) {
  const auto& cfg = params.config;
  if (layer >= cfg.n_layers || head >= cfg.n_heads)
    throw EvalError("head_logit_lens: layer/head out of range");
  if (k < 1) throw EvalError("head_logit_lens: k must be >= 1");
  if (prompts.empty()) throw EvalError("head_logit_lens needs prompts");
  k = std::min(k, cfg.vocab_size);

  // Head's residual write-out through the unembedding: [d_head, vocab].
  const auto& wo = params.layers[layer].wo;
  Eigen::MatrixXf slice = wo.middleRows(head * cfg.d_head, cfg.d_head);
  Eigen::MatrixXf proj;
  if (params.w_unembed.size() > 0)
    proj = slice * params.w_unembed;
  else
    proj = slice * params.wte.transpose();

  std::vector<std::uint8_t> hits(prompts.size(), 0);
  parallel_chunks(
      prompts.size(), threads,
      [&](unsigned, std::size_t begin, std::size_t end) {
        Network<float> net(cfg);
        for (std::size_t i = begin; i < end; ++i) {
          const auto& prompt = prompts[i];
          const auto last = Eigen::Index(prompt.tokens.size() - 1);
          net.forward(params, prompt.tokens);
          Eigen::RowVectorXf z = net.head_outputs(layer).row(last).middleCols(
              head * cfg.d_head, cfg.d_head);
          Eigen::RowVectorXf scores = z * proj;
          // Rank of the target under (score desc, id asc); include when the
          // target lands in the first k.
          float target_score = scores(prompt.target);
          std::uint32_t rank = 0;
          for (std::uint32_t v = 0; v < cfg.vocab_size; ++v) {
            if (v == prompt.target) continue;
            if (scores(v) > target_score ||
                (scores(v) == target_score && v < prompt.target))
              ++rank;
          }
          hits[i] = rank < k ? 1 : 0;
        }
      });
  std::uint64_t total = 0;
  for (auto h : hits) total += h;
  return double(total) / double(prompts.size());
}

PatchResult cross_checkpoint_patch(const ModelParams<float>& source,
                                   const ModelParams<float>& target,
                                   std::uint32_t layer, const Vocabulary& vocab,
                                   std::uint32_t n_samples, std::uint32_t s,
                                   std::uint64_t seed, unsigned threads) {
  if (!source.config.same_architecture(target.config))
    throw ConfigError(
        "cross_checkpoint_patch: source/target model configs differ");
  const auto& cfg = target.config;
  if (layer >= cfg.n_layers)
    throw ConfigError("cross_checkpoint_patch: layer out of range");
  if (2 * s - 1 > cfg.context_len)
    throw EvalError("repetition prompt longer than model context");

  auto prompts = gen_random_repetition(vocab, s, n_samples, seed);
  const std::size_t cells = std::size_t(cfg.n_layers) * cfg.n_heads;
  unsigned workers = std::max(1u, threads);
  std::vector<std::vector<double>> before(workers,
                                          std::vector<double>(cells, 0.0));
  std::vector<std::vector<double>> after(workers,
                                         std::vector<double>(cells, 0.0));

  parallel_chunks(
      prompts.size(), workers,
      [&](unsigned tid, std::size_t begin, std::size_t end) {
        Network<float> src_net(cfg);
        Network<float> tgt_net(cfg);
        const std::uint32_t t_len = 2 * s - 1;
        std::vector<std::uint32_t> all_positions(t_len);
        for (std::uint32_t t = 0; t < t_len; ++t) all_positions[t] = t;
        for (std::size_t i = begin; i < end; ++i) {
          const auto& toks = prompts[i].tokens;
          // Clean target run.
          tgt_net.forward(target, toks);
          for (std::uint32_t l = 0; l < cfg.n_layers; ++l)
            for (std::uint32_t h = 0; h < cfg.n_heads; ++h)
              before[tid][std::size_t(l) * cfg.n_heads + h] +=
                  prefix_matching_from_attention(tgt_net.attention(l, h), s);
          // Source capture, then patched target run.
          src_net.forward(source, toks);
          Intervention iv = Intervention::patch(
              layer, all_positions,
              src_net.layer_output(layer).cast<double>());
          tgt_net.forward(target, toks, {&iv, 1});
          for (std::uint32_t l = 0; l < cfg.n_layers; ++l)
            for (std::uint32_t h = 0; h < cfg.n_heads; ++h)
              after[tid][std::size_t(l) * cfg.n_heads + h] +=
                  prefix_matching_from_attention(tgt_net.attention(l, h), s);
        }
      });

  PatchResult result;
  result.layer = layer;
  result.before = zero_scores(cfg, HeadMetric::prefix_matching);
  result.after = zero_scores(cfg, HeadMetric::prefix_matching);
  result.before.n_samples = result.after.n_samples = n_samples;
  result.before.s = result.after.s = s;
  for (unsigned w = 0; w < workers; ++w)
    for (std::size_t c = 0; c < cells; ++c) {
      result.before.scores[c] += before[w][c] / double(prompts.size());
      result.after.scores[c] += after[w][c] / double(prompts.size());
    }
  result.max_before = result.before.max_score_after_layer(layer);
  result.max_after = result.after.max_score_after_layer(layer);
  return result;
}

std::vector<DynamicsEntry> score_dynamics(
    std::span<const std::filesystem::path> checkpoints, const Vocabulary& vocab,
    const DynamicsArgs& args) {
  if (checkpoints.empty())
    throw ConfigError("score_dynamics needs at least one checkpoint");
  std::vector<DynamicsEntry> series;
  for (const auto& path : checkpoints) {
    DynamicsEntry entry;
    entry.checkpoint = path;
    try {
      LoadedCheckpoint ckpt = load_checkpoint(path);
      entry.step = ckpt.meta.step;
      if (args.metric == HeadMetric::prefix_matching) {
        entry.scores =
            prefix_matching_scores(ckpt.params, vocab, args.n_samples, args.s,
                                   args.seed, args.threads);
      } else {
        if (args.corpus == nullptr)
          throw ConfigError("previous_token dynamics need a corpus");
        std::vector<std::vector<TokenId>> windows;
        const auto ctx = ckpt.params.config.context_len;
        std::size_t available = args.corpus->num_windows(ctx);
        if (available == 0)
          throw EvalError("corpus shorter than one context window");
        auto rng = make_rng(args.seed, "dynamics.windows");
        std::uniform_int_distribution<std::size_t> pick(0, available - 1);
        for (std::uint32_t i = 0; i < args.n_windows; ++i) {
          auto w = args.corpus->window(ctx, pick(rng));
          windows.emplace_back(w.begin(), w.end());
        }
        entry.scores =
            previous_token_scores(ckpt.params, windows, args.threads);
      }
      entry.ok = true;
    } catch (const std::exception& e) {
      entry.ok = false;
      entry.error = e.what();
    }
    series.push_back(std::move(entry));
  }
  std::stable_sort(series.begin(), series.end(),
                   [](const DynamicsEntry& a, const DynamicsEntry& b) {
                     return a.step < b.step;
                   });
  return series;
}

}  // namespace hapax
