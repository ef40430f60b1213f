#include "hfprune/evaluation.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "hfprune/digest.h"
#include "hfprune/error.h"
#include "hfprune/forward.h"
#include "hfprune/numerics.h"
#include "hfprune/parallel.h"
#include "hfprune/scoring.h"

namespace hfprune {

namespace {

double sorted_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum;
}

void check_corpus(const Model& model, const TokenCorpus& corpus, const char* what) {
  if (corpus.empty()) throw RangeError(std::string(what) + " is empty");
  if (corpus.max_token() >= model.config.vocab_size) {
    throw ShapeError(std::string(what) + " token " + std::to_string(corpus.max_token()) +
                     " is outside the model vocabulary of " + std::to_string(model.config.vocab_size));
  }
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t m = i; m <= j; ++m) ranks[idx[m]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double perplexity(const Model& model, const TokenCorpus& corpus) {
  check_corpus(model, corpus, "perplexity corpus");
  if (corpus.seq_len() < 2) throw RangeError("perplexity corpus needs sequences of at least two tokens");
  std::vector<std::vector<double>> nll(corpus.size());
  parallel_for(corpus.size(), [&](std::size_t s) {
    const auto seq = corpus.sequence(s);
    const Matrix logits = logits_only(model, seq);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      nll[s].push_back(cross_entropy_nats(softmax_stable(logits.row(t)), seq[t + 1]));
    }
  });
  std::vector<double> all;
  for (const auto& v : nll) all.insert(all.end(), v.begin(), v.end());
  const double n = static_cast<double>(all.size());
  return std::exp(sorted_sum(std::move(all)) / n);
}

std::string_view to_string(FidelityMode mode) {
  return mode == FidelityMode::kFinalPosition ? "final" : "all";
}

FidelityReport distribution_fidelity(const Model& original, const Model& pruned, const TokenCorpus& prompts,
                                     std::size_t k, FidelityMode mode) {
  if (original.config.vocab_size != pruned.config.vocab_size) {
    throw ShapeError("vocabulary mismatch: original has " + std::to_string(original.config.vocab_size) +
                     " tokens, pruned has " + std::to_string(pruned.config.vocab_size));
  }
  if (k < 1 || k > original.config.vocab_size) throw RangeError("top-k must lie in [1, vocab_size]");
  check_corpus(original, prompts, "prompt set");

  const std::size_t n = prompts.size(), seq = prompts.seq_len();
  const std::size_t per_prompt = mode == FidelityMode::kFinalPosition ? 1 : seq;
  std::vector<FidelityRow> rows(n * per_prompt);
  parallel_for(n, [&](std::size_t s) {
    const auto tokens = prompts.sequence(s);
    const Matrix a = logits_only(original, tokens);
    const Matrix b = logits_only(pruned, tokens);
    for (std::size_t j = 0; j < per_prompt; ++j) {
      const std::size_t t = mode == FidelityMode::kFinalPosition ? seq - 1 : j;
      const auto p = softmax_stable(a.row(t));
      const auto q = softmax_stable(b.row(t));
      rows[s * per_prompt + j] = {s, t, js_distance(p, q), topk_jaccard(p, q, k)};
    }
  });

  FidelityReport report;
  std::vector<double> js, jac;
  for (const auto& r : rows) {
    js.push_back(r.js);
    jac.push_back(r.jaccard);
  }
  const double count = static_cast<double>(rows.size());
  report.mean_js = sorted_sum(std::move(js)) / count;
  report.mean_topk_jaccard = sorted_sum(std::move(jac)) / count;
  report.k = k;
  report.prompt_count = n;
  report.positions_per_prompt = per_prompt;
  report.mode = mode;
  if (seq >= 2) {
    report.ppl_original = perplexity(original, prompts);
    report.ppl_pruned = perplexity(pruned, prompts);
  }
  report.original_digest = model_digest(original);
  report.pruned_digest = model_digest(pruned);
  report.rows = std::move(rows);
  return report;
}

std::vector<double> oracle_damage(const Model& model, const TokenCorpus& calib, CriterionKind kind,
                                  std::size_t max_neurons) {
  check_corpus(model, calib, "calibration set");
  struct Coord {
    std::size_t layer, neuron;
  };
  std::vector<Coord> coords;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    for (std::size_t i = 0; i < model.config.d_hidden[l]; ++i) coords.push_back({l, i});
  }
  if (coords.size() > max_neurons) {
    throw RangeError("model has " + std::to_string(coords.size()) + " MLP neurons; exact ablation is limited to " +
                     std::to_string(max_neurons));
  }
  std::vector<double> damage(coords.size());
  parallel_for(coords.size(), [&](std::size_t c) {
    std::vector<double> per_seq(calib.size());
    for (std::size_t s = 0; s < calib.size(); ++s) {
      per_seq[s] = std::abs(exact_ablation_delta(model, calib.sequence(s), kind, coords[c].layer, coords[c].neuron));
    }
    damage[c] = sorted_sum(std::move(per_seq)) / static_cast<double>(calib.size());
  });
  return damage;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("spearman: length mismatch");
  if (a.size() < 2) throw RangeError("spearman: need at least two observations");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double mean = 0.5 * static_cast<double>(a.size() + 1);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - mean, db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double top_bottom_gap(std::span<const double> scores, std::span<const double> damage) {
  if (scores.size() != damage.size()) throw ShapeError("top_bottom_gap: length mismatch");
  const std::size_t decile = std::max<std::size_t>(1, scores.size() / 10);
  if (scores.size() < 2 * decile) throw RangeError("top_bottom_gap: too few neurons");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double bottom = 0.0, top = 0.0;
  for (std::size_t i = 0; i < decile; ++i) {
    bottom += damage[idx[i]];
    top += damage[idx[idx.size() - 1 - i]];
  }
  return (top - bottom) / static_cast<double>(decile);
}

ScoringQuality scoring_quality(const Model& model, const TokenCorpus& calib, CriterionKind kind,
                               std::size_t max_neurons) {
  ScoringQuality q;
  q.damage = oracle_damage(model, calib, kind, max_neurons);
  const auto report = accumulate_scores(model, calib, kind);
  for (const auto& layer : report.layers) q.scores.insert(q.scores.end(), layer.begin(), layer.end());
  q.spearman = spearman(q.scores, q.damage);
  q.top_bottom_gap = top_bottom_gap(q.scores, q.damage);
  return q;
}

double prefill_seconds(const Model& model, std::span<const TokenId> tokens) {
  const auto start = std::chrono::steady_clock::now();
  const Matrix logits = logits_only(model, tokens);
  const auto stop = std::chrono::steady_clock::now();
  (void)logits;
  return std::chrono::duration<double>(stop - start).count();
}

}  // namespace hfprune
