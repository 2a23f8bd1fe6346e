#include "hapax/evals.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "hapax/threading.hpp"

namespace hapax {

RepetitionPrompt make_repetition_prompt(std::span<const TokenId> first_half) {
  if (first_half.empty())
    throw EvalError("repetition prompt needs at least one token");
  RepetitionPrompt p;
  p.s = static_cast<std::uint32_t>(first_half.size());
  p.target = first_half[p.s - 1];
  p.tokens.reserve(2 * p.s - 1);
  p.tokens.assign(first_half.begin(), first_half.end());
  p.tokens.insert(p.tokens.end(), first_half.begin(), first_half.end() - 1);
  return p;
}

std::vector<RepetitionPrompt> gen_random_repetition(const Vocabulary& vocab,
                                                    std::uint32_t s,
                                                    std::uint32_t n,
                                                    std::uint64_t seed) {
  if (s < 1) throw EvalError("repetition half-length s must be >= 1");
  if (vocab.regular_size() < 1)
    throw EvalError("vocabulary has no regular tokens");
  std::vector<RepetitionPrompt> prompts;
  prompts.reserve(n);
  std::uniform_int_distribution<TokenId> pick(
      0, static_cast<TokenId>(vocab.regular_size() - 1));
  for (std::uint32_t i = 0; i < n; ++i) {
    auto rng = make_rng(seed, "eval.repetition", i);
    std::vector<TokenId> half(s);
    for (auto& t : half) t = pick(rng);
    prompts.push_back(make_repetition_prompt(half));
  }
  return prompts;
}

EvalReport EvalReport::from_bits(std::vector<std::uint8_t> bits) {
  EvalReport r;
  r.n = bits.size();
  std::uint64_t correct = 0;
  for (auto b : bits) correct += b ? 1 : 0;
  r.accuracy = r.n ? double(correct) / double(r.n) : 0.0;
  r.ci = r.n ? ci_margin(r.accuracy, r.n) : 0.0;
  r.per_sample = std::move(bits);
  return r;
}

namespace {

// Greedy next-token prediction at the final prompt position.
TokenId predict_next(Network<float>& net, const ModelParams<float>& params,
                     std::span<const TokenId> prompt) {
  const auto& logits = net.forward(params, prompt);
  return argmax_lowest(row_span(logits, Eigen::Index(prompt.size() - 1)));
}

std::vector<std::uint8_t> score_prompts(
    const ModelParams<float>& params,
    std::span<const RepetitionPrompt> prompts, unsigned threads) {
  std::vector<std::uint8_t> bits(prompts.size(), 0);
  parallel_chunks(prompts.size(), threads,
                  [&](unsigned, std::size_t begin, std::size_t end) {
                    Network<float> net(params.config);
                    for (std::size_t i = begin; i < end; ++i) {
                      TokenId got = predict_next(net, params,
                                                 prompts[i].tokens);
                      bits[i] = got == prompts[i].target ? 1 : 0;
                    }
                  });
  return bits;
}

}  // namespace

EvalReport eval_repetition(const ModelParams<float>& params,
                           std::span<const RepetitionPrompt> prompts,
                           unsigned threads) {
  for (const auto& p : prompts)
    if (p.tokens.size() > params.config.context_len)
      throw EvalError("repetition prompt longer than model context");
  return EvalReport::from_bits(score_prompts(params, prompts, threads));
}

EvalReport eval_natural_repetition(const ModelParams<float>& params,
                                   const Corpus& corpus, std::uint32_t s,
                                   std::uint32_t n, NaturalMode mode,
                                   std::uint64_t seed, unsigned threads) {
  if (s < 2) throw EvalError("natural repetition needs s >= 2");
  if (corpus.stream.size() < s)
    throw EvalError("corpus too short for span length s");
  if (2 * s - 1 > params.config.context_len)
    throw EvalError("repetition prompt longer than model context");

  // Contiguous spans without special tokens.
  std::vector<std::uint8_t> bits(n, 0);
  std::vector<std::vector<TokenId>> spans(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto rng = make_rng(seed, "eval.natural", i);
    std::uniform_int_distribution<std::size_t> pick(
        0, corpus.stream.size() - s);
    bool found = false;
    for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
      std::size_t start = pick(rng);
      bool clean = true;
      for (std::size_t j = 0; j < s; ++j)
        if (corpus.vocab.is_special(corpus.stream[start + j])) {
          clean = false;
          break;
        }
      if (!clean) continue;
      spans[i].assign(corpus.stream.begin() + start,
                      corpus.stream.begin() + start + s);
      found = true;
    }
    if (!found)
      throw EvalError(
          "could not draw a special-free span; corpus too fragmented");
  }

  parallel_chunks(std::size_t(n), threads,
                  [&](unsigned, std::size_t begin, std::size_t end) {
                    Network<float> net(params.config);
                    for (std::size_t i = begin; i < end; ++i) {
                      const auto& span_toks = spans[i];
                      TokenId target = span_toks[s - 1];
                      TokenId got;
                      if (mode == NaturalMode::repeated) {
                        auto prompt = make_repetition_prompt(span_toks);
                        got = predict_next(net, params, prompt.tokens);
                      } else {
                        std::span<const TokenId> prefix(span_toks.data(),
                                                        s - 1);
                        got = predict_next(net, params, prefix);
                      }
                      bits[i] = got == target ? 1 : 0;
                    }
                  });
  return EvalReport::from_bits(std::move(bits));
}

const char* icl_kind_name(IclKind k) {
  switch (k) {
    case IclKind::extractive:
      return "extractive";
    case IclKind::abstractive:
      return "abstractive";
    case IclKind::translation:
      return "translation";
  }
  return "?";
}

IclKind icl_kind_from_name(std::string_view name) {
  if (name == "extractive") return IclKind::extractive;
  if (name == "abstractive") return IclKind::abstractive;
  if (name == "translation") return IclKind::translation;
  throw ConfigError("unknown task kind: " + std::string(name));
}

void IclTask::validate() const {
  if (pairs.empty()) throw ConfigError("task '" + name + "' has no pairs");
  for (const auto& [x, y] : pairs)
    if (y.empty())
      throw ConfigError("task '" + name + "' has an empty output for input '" +
                        x + "'");
  if (template_str.find("{x}") == std::string::npos ||
      template_str.find("{y}") == std::string::npos)
    throw ConfigError("task template must contain {x} and {y}");
  if (template_str.find("{y}") < template_str.find("{x}"))
    throw ConfigError("task template must place {x} before {y}");
}

IclTask read_task_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  IclTask task;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto colon = line.find(':');
    if (colon == std::string::npos)
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected 'key: value'");
    std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value.front() == ' ') value.erase(0, 1);
    if (key == "name") {
      task.name = value;
    } else if (key == "kind") {
      task.kind = icl_kind_from_name(value);
    } else if (key == "scheme") {
      task.scheme = scheme_from_name(value);
    } else if (key == "template") {
      task.template_str = value;
    } else if (key == "pair") {
      auto tab = value.find('\t');
      if (tab == std::string::npos)
        throw FormatError(path.string() + ":" + std::to_string(lineno) +
                          ": pair needs a tab between input and output");
      task.pairs.emplace_back(value.substr(0, tab), value.substr(tab + 1));
    } else {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
    }
  }
  if (task.name.empty()) task.name = path.stem().string();
  task.validate();
  return task;
}

void write_task_file(const IclTask& task, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << "name: " << task.name << "\n";
  out << "kind: " << icl_kind_name(task.kind) << "\n";
  out << "scheme: " << scheme_name(task.scheme) << "\n";
  out << "template: " << task.template_str << "\n";
  for (const auto& [x, y] : task.pairs)
    out << "pair: " << x << "\t" << y << "\n";
  if (!out) throw FormatError("write failed: " + path.string());
}

namespace {

std::string substitute(const std::string& tmpl, const std::string& key,
                       const std::string& value) {
  std::string out = tmpl;
  auto pos = out.find(key);
  while (pos != std::string::npos) {
    out.replace(pos, key.size(), value);
    pos = out.find(key, pos + value.size());
  }
  return out;
}

}  // namespace

std::string render_demonstration(const IclTask& task, const std::string& x,
                                 const std::string& y) {
  return substitute(substitute(task.template_str, "{x}", x), "{y}", y);
}

std::string render_query(const IclTask& task, const std::string& x) {
  std::string line = task.template_str.substr(0, task.template_str.find("{y}"));
  return substitute(line, "{x}", x);
}

std::string render_icl_prompt(const IclTask& task,
                              std::span<const std::size_t> demo_indices,
                              std::size_t query_index) {
  std::string prompt;
  for (std::size_t idx : demo_indices) {
    prompt += render_demonstration(task, task.pairs[idx].first,
                                   task.pairs[idx].second);
    prompt += '\n';
  }
  prompt += render_query(task, task.pairs[query_index].first);
  return prompt;
}

EvalReport eval_icl(const ModelParams<float>& params, const Vocabulary& vocab,
                    const IclTask& task, std::uint32_t shots,
                    std::uint32_t n_trials, std::uint64_t seed,
                    bool exclude_target, unsigned threads) {
  task.validate();
  if (task.pairs.size() < shots + 1)
    throw EvalError("task '" + task.name + "' has " +
                    std::to_string(task.pairs.size()) +
                    " pairs; need at least shots+1 = " +
                    std::to_string(shots + 1));
  if (exclude_target) {
    // Feasibility: some query must leave `shots` pairs with a different
    // output string.
    bool feasible = false;
    for (std::size_t q = 0; q < task.pairs.size() && !feasible; ++q) {
      std::size_t other = 0;
      for (std::size_t i = 0; i < task.pairs.size(); ++i)
        if (task.pairs[i].second != task.pairs[q].second) ++other;
      if (other >= shots) feasible = true;
    }
    if (!feasible)
      throw EvalError("exclude_target infeasible for task '" + task.name +
                      "': not enough pairs with a different output");
  }

  // Pre-draw demonstration sets so trials are independent of thread layout.
  struct Trial {
    std::vector<std::size_t> demos;
    std::size_t query = 0;
  };
  std::vector<Trial> trials(n_trials);
  for (std::uint32_t t = 0; t < n_trials; ++t) {
    auto rng = make_rng(seed, "eval.icl", t);
    std::uniform_int_distribution<std::size_t> pick(0,
                                                    task.pairs.size() - 1);
    Trial& trial = trials[t];
    trial.query = pick(rng);
    const std::string& target_out = task.pairs[trial.query].second;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < task.pairs.size(); ++i) {
      if (i == trial.query) continue;
      if (exclude_target && task.pairs[i].second == target_out) continue;
      pool.push_back(i);
    }
    if (pool.size() < shots) {
      if (!exclude_target)
        throw EvalError("not enough demonstration pairs for task '" +
                        task.name + "'");
      // Resample the query; some other item must be feasible.
      bool ok = false;
      for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
        trial.query = pick(rng);
        pool.clear();
        for (std::size_t i = 0; i < task.pairs.size(); ++i) {
          if (i == trial.query) continue;
          if (task.pairs[i].second == task.pairs[trial.query].second) continue;
          pool.push_back(i);
        }
        ok = pool.size() >= shots;
      }
      if (!ok)
        throw EvalError("exclude_target resampling failed for task '" +
                        task.name + "'");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    trial.demos.assign(pool.begin(), pool.begin() + shots);
  }

  std::vector<std::uint8_t> bits(n_trials, 0);
  parallel_chunks(
      std::size_t(n_trials), threads,
      [&](unsigned, std::size_t begin, std::size_t end) {
        Network<float> net(params.config);
        for (std::size_t t = begin; t < end; ++t) {
          const Trial& trial = trials[t];
          std::string prompt =
              render_icl_prompt(task, trial.demos, trial.query);
          std::vector<TokenId> prompt_toks =
              tokenize(prompt, task.scheme, vocab);
          std::vector<TokenId> target_toks =
              tokenize(task.pairs[trial.query].second, task.scheme, vocab);
          if (prompt_toks.empty() || target_toks.empty())
            throw EvalError("task '" + task.name +
                            "' produced an empty prompt or target");
          // Keep the most recent context when the prompt overflows.
          if (prompt_toks.size() > params.config.context_len)
            prompt_toks.erase(prompt_toks.begin(),
                              prompt_toks.end() - params.config.context_len);
          TokenId got = predict_next(net, params, prompt_toks);
          bits[t] = got == target_toks[0] ? 1 : 0;
        }
      });
  return EvalReport::from_bits(std::move(bits));
}

std::pair<std::uint32_t, std::uint32_t> default_tld_positions(
    std::uint32_t context_len) {
  if (context_len < 512) return {10, 100};
  return {50, 500};
}

TldReport tld(const ModelParams<float>& params, const Corpus& corpus,
              std::uint32_t pos_a, std::uint32_t pos_b, TldFilter filter,
              std::uint64_t max_windows, unsigned threads) {
  const std::uint32_t ctx = params.config.context_len;
  if (pos_a < 2 || pos_b < 2)
    throw EvalError("tld positions must be >= 2 (position 1 has no context)");
  if (pos_a >= pos_b) throw EvalError("tld requires pos_a < pos_b");
  if (pos_b > ctx)
    throw EvalError("tld pos_b " + std::to_string(pos_b) +
                    " exceeds model context " + std::to_string(ctx));
  std::size_t windows = corpus.num_windows(ctx);
  if (windows == 0) throw EvalError("corpus shorter than one context window");
  if (max_windows > 0) windows = std::min<std::size_t>(windows, max_windows);

  TldReport report;
  report.pos_a = pos_a;
  report.pos_b = pos_b;
  report.filter = filter;
  report.windows_total = windows;

  std::vector<std::uint8_t> keep(windows, 1);
  if (filter == TldFilter::non_extractive) {
    ExactMasker masker(corpus.vocab.doc_boundary());
    for (std::size_t w = 0; w < windows; ++w) {
      MaskSet m = masker.mask(corpus.window(ctx, w));
      keep[w] = (!m.is_masked(pos_a) && !m.is_masked(pos_b)) ? 1 : 0;
    }
  }

  std::vector<double> la(windows, 0.0), lb(windows, 0.0);
  parallel_chunks(windows, threads,
                  [&](unsigned, std::size_t begin, std::size_t end) {
                    Network<float> net(params.config);
                    for (std::size_t w = begin; w < end; ++w) {
                      if (!keep[w]) continue;
                      auto win = corpus.window(ctx, w);
                      const auto& logits = net.forward(params, win);
                      auto nll = [&](std::uint32_t pos) {
                        auto row = logits.row(Eigen::Index(pos - 2));
                        float mx = row.maxCoeff();
                        double sum = 0.0;
                        for (Eigen::Index c = 0; c < row.cols(); ++c)
                          sum += std::exp(double(row(c) - mx));
                        return double(mx) + std::log(sum) -
                               double(row(win[pos - 1]));
                      };
                      la[w] = nll(pos_a);
                      lb[w] = nll(pos_b);
                    }
                  });

  double sum_a = 0.0, sum_b = 0.0;
  for (std::size_t w = 0; w < windows; ++w) {
    if (!keep[w]) continue;
    sum_a += la[w];
    sum_b += lb[w];
    ++report.windows_retained;
  }
  if (report.windows_retained == 0)
    throw EvalError("tld: no windows survive the non_extractive filter (0 of " +
                    std::to_string(windows) + ")");
  report.loss_a = sum_a / double(report.windows_retained);
  report.loss_b = sum_b / double(report.windows_retained);
  report.delta = report.loss_a - report.loss_b;
  return report;
}

}  // namespace hapax
