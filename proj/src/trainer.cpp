#include "hapax/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "hapax/csvio.hpp"
#include "hapax/threading.hpp"

namespace hapax {

double LrSchedule::at(std::uint64_t step, std::uint64_t total_steps) const {
  if (warmup_steps > 0 && step <= warmup_steps)
    return peak_lr * double(step) / double(warmup_steps);
  if (decay == Decay::constant) return peak_lr;
  double span = double(total_steps > warmup_steps ? total_steps - warmup_steps
                                                  : 1);
  double progress = double(step - warmup_steps) / span;
  progress = std::min(1.0, std::max(0.0, progress));
  double min_lr = peak_lr * min_lr_ratio;
  return min_lr + 0.5 * (peak_lr - min_lr) * (1.0 + std::cos(M_PI * progress));
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (context_len < 2) throw ConfigError("context_len must be >= 2");
  if (!(lr.peak_lr > 0)) throw ConfigError("peak_lr must be > 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
}

void adam_step(ModelParams<float>& params, const ModelParams<float>& grads,
               AdamState& state, const AdamConfig& cfg, double lr,
               std::uint64_t update_index) {
  const float b1 = float(cfg.beta1);
  const float b2 = float(cfg.beta2);
  const float eps = float(cfg.eps);
  const float c1 = 1.0f - std::pow(b1, float(update_index));
  const float c2 = 1.0f - std::pow(b2, float(update_index));
  const float step_lr = float(lr);

  // Walk all four tensor sets in lockstep visit order.
  std::vector<RowMat<float>*> pm, gm, mm, vm;
  params.visit([&](const std::string&, RowMat<float>& t) { pm.push_back(&t); });
  const_cast<ModelParams<float>&>(grads).visit(
      [&](const std::string&, RowMat<float>& t) { gm.push_back(&t); });
  state.m.visit([&](const std::string&, RowMat<float>& t) { mm.push_back(&t); });
  state.v.visit([&](const std::string&, RowMat<float>& t) { vm.push_back(&t); });
  if (pm.size() != gm.size() || pm.size() != mm.size() ||
      pm.size() != vm.size())
    throw ConfigError("adam_step: mismatched parameter sets");

  for (std::size_t i = 0; i < pm.size(); ++i) {
    auto& p = *pm[i];
    const auto& g = *gm[i];
    auto& m = *mm[i];
    auto& v = *vm[i];
    m = b1 * m + (1.0f - b1) * g;
    v *= b2;
    v.array() += (1.0f - b2) * g.array().square();
    p.array() -= step_lr * (m.array() / c1) /
                 ((v.array() / c2).sqrt() + eps);
  }
}

double prefix_penalty_from_attention(
    const std::vector<std::vector<RowMat<float>>>& attention,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> pairs,
    double lambda) {
  if (lambda == 0.0 || pairs.empty()) return 0.0;
  std::size_t cells = 0;
  double sum = 0.0;
  for (const auto& layer : attention) {
    for (const auto& a : layer) {
      double head_sum = 0.0;
      for (auto [r, c] : pairs) head_sum += double(a(r, c));
      sum += head_sum / double(pairs.size());
      ++cells;
    }
  }
  if (cells == 0) return 0.0;
  return lambda * sum / double(cells);
}

ReinitReport reinit_induction_heads(ModelParams<float>& params,
                                    AdamState* optim, float threshold,
                                    bool reinit_optimizer,
                                    const HeadScoreMatrix& scores,
                                    std::uint64_t seed) {
  const auto& cfg = params.config;
  if (scores.layers != cfg.n_layers || scores.heads != cfg.n_heads)
    throw ConfigError("reinit: score matrix does not match the model");
  ReinitReport report;
  auto rng = make_rng(seed, "reinit");
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double std_dev = 1.0 / std::sqrt(double(cfg.d_model));
  const auto dh = cfg.d_head;

  auto redraw = [&](RowMat<float>& m, Eigen::Index col0, Eigen::Index ncols) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = col0; c < col0 + ncols; ++c)
        m(r, c) = float(gauss(rng) * std_dev);
  };

  for (std::uint32_t l = 0; l < cfg.n_layers; ++l) {
    for (std::uint32_t h = 0; h < cfg.n_heads; ++h) {
      if (!(scores.at(l, h) > threshold)) continue;
      report.reinitialized.push_back({l, h, scores.at(l, h)});
      auto& lp = params.layers[l];
      const Eigen::Index c0 = Eigen::Index(h) * dh;
      redraw(lp.wq, c0, dh);
      redraw(lp.wk, c0, dh);
      redraw(lp.wv, c0, dh);
      lp.bq.middleCols(c0, dh).setZero();
      lp.bk.middleCols(c0, dh).setZero();
      lp.bv.middleCols(c0, dh).setZero();
      // Output projection reads this head's rows.
      for (Eigen::Index r = c0; r < c0 + dh; ++r)
        for (Eigen::Index c = 0; c < lp.wo.cols(); ++c)
          lp.wo(r, c) = float(gauss(rng) * std_dev);

      if (optim && reinit_optimizer) {
        for (auto* st : {&optim->m, &optim->v}) {
          auto& ol = st->layers[l];
          ol.wq.middleCols(c0, dh).setZero();
          ol.wk.middleCols(c0, dh).setZero();
          ol.wv.middleCols(c0, dh).setZero();
          ol.bq.middleCols(c0, dh).setZero();
          ol.bk.middleCols(c0, dh).setZero();
          ol.bv.middleCols(c0, dh).setZero();
          ol.wo.middleRows(c0, dh).setZero();
        }
      }
    }
  }
  return report;
}

namespace {

struct PenaltySetup {
  bool enabled = false;
  PenaltyConfig cfg;
  std::uint32_t synthetic_s = 0;
};

std::string checkpoint_dir_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06llu",
                static_cast<unsigned long long>(step));
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const ModelConfig& model_cfg,
                  const Corpus& corpus, const std::filesystem::path& out_dir,
                  const PenaltyConfig* penalty, const ReinitPolicy* reinit,
                  const EmbeddingTable* thresholded_emb, std::ostream* log) {
  cfg.validate();
  model_cfg.validate();
  if (model_cfg.vocab_size != corpus.vocab.size())
    throw ConfigError("model vocab_size " +
                      std::to_string(model_cfg.vocab_size) +
                      " != corpus vocabulary size " +
                      std::to_string(corpus.vocab.size()));
  if (cfg.context_len > model_cfg.context_len)
    throw ConfigError("training context_len exceeds model context_len");

  PenaltySetup pen;
  if (penalty && penalty->lambda > 0.0) {
    pen.enabled = true;
    pen.cfg = *penalty;
    if (pen.cfg.source == PenaltyConfig::Source::in_batch_masked_positions &&
        cfg.mask_mode == MaskMode::none)
      throw ConfigError(
          "in-batch prefix penalty needs a mask mode to supply positions");
    pen.synthetic_s =
        std::min<std::uint32_t>(pen.cfg.s, (cfg.context_len + 1) / 2);
    if (pen.synthetic_s < 2) pen.synthetic_s = 2;
  }

  std::optional<ThresholdedMasker> thresholded;
  if (cfg.mask_mode == MaskMode::thresholded) {
    if (!thresholded_emb)
      throw ConfigError(
          "thresholded masking needs a frozen embedding table "
          "(--emb-checkpoint)");
    thresholded.emplace(*thresholded_emb,
                        ThresholdConfig{cfg.tau, cfg.neighbor_cap},
                        corpus.vocab.doc_boundary());
  }
  ExactMasker exact(corpus.vocab.doc_boundary());

  ModelParams<float> params = init_params<float>(model_cfg);
  AdamState optim = AdamState::zeros(model_cfg);
  WindowBatcher batcher(corpus, cfg.context_len, cfg.batch_size, cfg.seed);

  std::filesystem::create_directories(out_dir);
  const auto ckpt_root = out_dir / "checkpoints";
  CsvWriter stats_csv(out_dir / "train_stats.csv",
                      {"step", "loss", "unmasked_tokens", "masked_fraction",
                       "lr", "l_pm"});
  CsvWriter window_csv(out_dir / "window_hashes.csv",
                       {"step", "window_hash"});

  TrainResult result;
  result.checkpoints_dir = ckpt_root;

  auto save_at = [&](std::uint64_t step) {
    auto dir = ckpt_root / checkpoint_dir_name(step);
    save_checkpoint(dir, params, step, cfg.seed, &optim);
    return dir;
  };
  result.initial_checkpoint = save_at(0);

  const unsigned threads = std::max(1u, cfg.threads);
  const std::uint32_t n_layers = model_cfg.n_layers;
  const std::uint32_t n_heads = model_cfg.n_heads;
  const double head_count = double(n_layers) * double(n_heads);

  // Per-worker engines and gradient buffers, reduced in worker order.
  std::vector<std::unique_ptr<Network<float>>> nets(threads);
  std::vector<ModelParams<float>> worker_grads;
  std::vector<std::unique_ptr<ExactMasker>> worker_exact(threads);
  std::vector<std::unique_ptr<ThresholdedMasker>> worker_thresh(threads);
  for (unsigned t = 0; t < threads; ++t) {
    nets[t] = std::make_unique<Network<float>>(model_cfg);
    worker_grads.push_back(make_params<float>(model_cfg));
    worker_exact[t] =
        std::make_unique<ExactMasker>(corpus.vocab.doc_boundary());
    if (thresholded)
      worker_thresh[t] = std::make_unique<ThresholdedMasker>(
          *thresholded_emb, ThresholdConfig{cfg.tau, cfg.neighbor_cap},
          corpus.vocab.doc_boundary());
  }
  ModelParams<float> grads = make_params<float>(model_cfg);

  std::vector<std::span<const TokenId>> batch;
  std::uint64_t updates_done = 0;

  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    batcher.next_batch(batch);
    const double lr = cfg.lr.at(step, cfg.steps);

    std::uint64_t window_hash = 1469598103934665603ull;
    for (auto w : batch)
      window_hash = fnv1a(w.data(), w.size_bytes(), window_hash);
    {
      char hex[24];
      std::snprintf(hex, sizeof(hex), "%016llx",
                    static_cast<unsigned long long>(window_hash));
      window_csv.row({std::to_string(step), hex});
    }

    // Masks and penalty pairs, serial (the scanner is O(T) per window).
    const std::size_t b = batch.size();
    std::vector<MaskSet> masks(b);
    std::vector<MaskMatches> matches(b);
    std::uint64_t masked_total = 0;
    std::uint64_t unmasked_targets = 0;
    std::size_t retained = 0;
    std::vector<std::uint8_t> use_window(b, 1);
    std::size_t total_pairs = 0;
    const bool want_matches =
        pen.enabled &&
        pen.cfg.source == PenaltyConfig::Source::in_batch_masked_positions;
    for (std::size_t i = 0; i < b; ++i) {
      if (cfg.mask_mode == MaskMode::exact) {
        masks[i] = exact.mask(batch[i], want_matches ? &matches[i] : nullptr);
      } else if (cfg.mask_mode == MaskMode::thresholded) {
        masks[i] =
            thresholded->mask(batch[i], want_matches ? &matches[i] : nullptr);
      } else {
        masks[i].window_len = static_cast<std::uint32_t>(batch[i].size());
        masks[i].flags.assign(batch[i].size() + 1, 0);
      }
      masked_total += masks[i].count;
      if (masks[i].unmasked_targets() == 0) {
        use_window[i] = 0;
        if (log)
          *log << "step " << step << ": window " << i
               << " fully masked; skipped\n";
        continue;
      }
      unmasked_targets += masks[i].unmasked_targets();
      total_pairs += matches[i].position.size();
      ++retained;
    }

    double l_pm = 0.0;
    if (retained == 0) {
      if (log)
        *log << "step " << step
             << ": empty unmasked batch; step skipped (no update)\n";
      continue;
    }

    const float data_scale = 1.0f / float(retained);
    const double pair_coeff =
        (want_matches && total_pairs > 0)
            ? pen.cfg.lambda / (head_count * double(total_pairs))
            : 0.0;

    std::vector<double> worker_loss(threads, 0.0);
    std::vector<double> worker_pm(threads, 0.0);
    for (auto& wg : worker_grads) wg.set_zero();

    parallel_chunks(b, threads, [&](unsigned tid, std::size_t begin,
                                    std::size_t end) {
      auto& net = *nets[tid];
      std::vector<Network<float>::AttnAddend> addends;
      for (std::size_t i = begin; i < end; ++i) {
        if (!use_window[i]) continue;
        net.forward(params, batch[i]);
        addends.clear();
        if (pair_coeff > 0.0 && !matches[i].position.empty()) {
          // Masked position j attends back to the continuation i+1 of its
          // earliest match: attention index (j-1, i) 0-based.
          for (std::size_t p = 0; p < matches[i].position.size(); ++p) {
            const std::uint32_t row = matches[i].position[p] - 1;
            const std::uint32_t col = matches[i].match[p];
            for (std::uint32_t l = 0; l < n_layers; ++l)
              for (std::uint32_t h = 0; h < n_heads; ++h) {
                worker_pm[tid] += double(net.attention(l, h)(row, col)) *
                                  pair_coeff;
                addends.push_back({l, h, row, col, float(pair_coeff)});
              }
          }
        }
        double loss =
            net.backward(params, batch[i],
                         cfg.mask_mode == MaskMode::none ? nullptr : &masks[i],
                         worker_grads[tid], data_scale, addends);
        worker_loss[tid] += loss;
      }
    });

    grads.set_zero();
    {
      std::vector<RowMat<float>*> dst;
      grads.visit(
          [&](const std::string&, RowMat<float>& t) { dst.push_back(&t); });
      for (unsigned t = 0; t < threads; ++t) {
        std::vector<RowMat<float>*> src;
        worker_grads[t].visit(
            [&](const std::string&, RowMat<float>& m) { src.push_back(&m); });
        for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += *src[i];
      }
    }

    double batch_loss = 0.0;
    for (unsigned t = 0; t < threads; ++t) {
      batch_loss += worker_loss[t];
      l_pm += worker_pm[t];
    }
    batch_loss /= double(retained);

    // Synthetic penalty pass: separate forward on a generated repetition
    // prompt; only attention gradients flow.
    if (pen.enabled &&
        pen.cfg.source == PenaltyConfig::Source::synthetic_repetition) {
      auto prompts = gen_random_repetition(corpus.vocab, pen.synthetic_s, 1,
                                           substream(cfg.seed, "penalty", step));
      const auto& toks = prompts[0].tokens;
      const std::uint32_t s = pen.synthetic_s;
      const double coeff =
          pen.cfg.lambda / (head_count * double(s - 1));
      auto& net = *nets[0];
      net.forward(params, toks);
      std::vector<Network<float>::AttnAddend> addends;
      for (std::uint32_t i = 1; i < s; ++i) {
        const std::uint32_t row = s + i - 1;
        const std::uint32_t col = i;
        for (std::uint32_t l = 0; l < n_layers; ++l)
          for (std::uint32_t h = 0; h < n_heads; ++h) {
            l_pm += double(net.attention(l, h)(row, col)) * coeff;
            addends.push_back({l, h, row, col, float(coeff)});
          }
      }
      net.backward(params, toks, nullptr, grads, 0.0f, addends);
    }

    const double total_loss = batch_loss + l_pm;
    if (!std::isfinite(total_loss))
      throw Error("training diverged (non-finite loss) at step " +
                  std::to_string(step));

    adam_step(params, grads, optim, cfg.adam, lr, ++updates_done);
    optim.steps = updates_done;

    TrainStatsRow row;
    row.step = step;
    row.loss = total_loss;
    row.unmasked_tokens = unmasked_targets;
    row.masked_fraction =
        double(masked_total) / double(b * cfg.context_len);
    row.lr = lr;
    row.l_pm = l_pm;
    result.stats.push_back(row);
    stats_csv.row({std::to_string(row.step), CsvWriter::num(row.loss),
                   std::to_string(row.unmasked_tokens),
                   CsvWriter::num(row.masked_fraction), CsvWriter::num(row.lr),
                   CsvWriter::num(row.l_pm)});

    if (reinit && step % reinit->every == 0 && step != cfg.steps) {
      auto scores = prefix_matching_scores(
          params, corpus.vocab, reinit->n_samples,
          std::min<std::uint32_t>(reinit->s, (cfg.context_len + 1) / 2),
          substream(cfg.seed, "reinit.scores", step), threads);
      auto report = reinit_induction_heads(params, &optim, reinit->threshold,
                                           reinit->reinit_optimizer, scores,
                                           substream(cfg.seed, "reinit", step));
      if (log && !report.reinitialized.empty()) {
        *log << "step " << step << ": reinitialized";
        for (const auto& e : report.reinitialized)
          *log << " L" << e.layer << "H" << e.head << "(score "
               << e.score << ")";
        *log << "\n";
      }
    }

    if (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
      auto dir = save_at(step);
      if (step == cfg.steps) result.final_checkpoint = dir;
      if (log)
        *log << "step " << step << ": loss " << total_loss << " lr " << lr
             << " (checkpoint saved)\n";
    }
  }

  stats_csv.flush();
  window_csv.flush();
  result.params = std::move(params);
  result.optim = std::move(optim);
  return result;
}

}  // namespace hapax
