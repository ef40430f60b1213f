#include "hfprune/scoring.h"

#include <algorithm>
#include <cmath>

#include "hfprune/backprop.h"
#include "hfprune/digest.h"
#include "hfprune/error.h"
#include "hfprune/forward.h"
#include "hfprune/parallel.h"

namespace hfprune {

namespace {

void check_neuron(const Model& model, std::span<const TokenId> tokens, std::size_t layer, std::size_t neuron) {
  if (layer >= model.layers.size()) throw RangeError("layer " + std::to_string(layer) + " out of range");
  if (neuron >= model.config.d_hidden[layer]) {
    throw RangeError("neuron " + std::to_string(neuron) + " out of range for layer " + std::to_string(layer));
  }
  check_tokens(model.config, tokens);
}

// Per-neuron contributions of one sequence, flattened across layers.
std::vector<double> sequence_contributions(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                                           const ScoringOptions& options, std::size_t total_neurons) {
  auto fwd = forward(model, tokens);
  const auto targets = next_token_targets(tokens);
  CriterionInputs<float> inputs;
  if (kind == CriterionKind::kCrossEntropy) inputs.targets = targets;
  if (kind == CriterionKind::kSelfDistill) inputs.teacher_logits = &fwd.logits;
  auto crit = evaluate(kind, fwd.logits, inputs);
  if (options.criterion_scale != 1.0) {
    for (float& g : crit.grad_logits.data()) g = static_cast<float>(g * options.criterion_scale);
  }
  const auto grads = backward_to_hidden(model, fwd.cache, crit.grad_logits);

  std::vector<double> out(total_neurons, 0.0);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& g = grads.layers[l];
    const auto& h = fwd.cache.layers[l].h;
    for (std::size_t i = 0; i < h.cols(); ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < h.rows(); ++t) {
        const double gh = static_cast<double>(g(t, i)) * h(t, i);
        acc += options.aggregation == Aggregation::kAbsPerPosition ? std::abs(gh) : gh;
      }
      out[offset + i] = std::abs(acc);
    }
    offset += h.cols();
  }
  return out;
}

}  // namespace

std::string_view to_string(Aggregation aggregation) {
  return aggregation == Aggregation::kAbsPerPosition ? "abs-pos" : "abs-seq";
}

Aggregation parse_aggregation(std::string_view name) {
  if (name == "abs-pos") return Aggregation::kAbsPerPosition;
  if (name == "abs-seq") return Aggregation::kAbsPerSequence;
  throw RangeError("unknown aggregation '" + std::string(name) + "' (expected abs-pos or abs-seq)");
}

double ImportanceReport::max_score() const {
  double mx = 0.0;
  for (const auto& layer : layers) {
    for (const double s : layer) mx = std::max(mx, s);
  }
  return mx;
}

ImportanceReport accumulate_scores(const Model& model, const CalibrationSet& calib, CriterionKind kind,
                                   const ScoringOptions& options) {
  if (calib.empty()) throw RangeError("calibration set is empty");
  if (calib.max_token() >= model.config.vocab_size) {
    throw ShapeError("calibration token " + std::to_string(calib.max_token()) + " is outside the model vocabulary of " +
                     std::to_string(model.config.vocab_size));
  }
  if (calib.seq_len() > model.config.max_seq) {
    throw ShapeError("calibration sequence length " + std::to_string(calib.seq_len()) + " exceeds max_seq " +
                     std::to_string(model.config.max_seq));
  }
  if (!(options.criterion_scale > 0.0)) throw RangeError("criterion scale must be positive");

  std::size_t total_neurons = 0;
  for (const auto dh : model.config.d_hidden) total_neurons += dh;

  const std::size_t n = calib.size();
  std::vector<std::vector<double>> per_sequence(n);
  parallel_for(n, [&](std::size_t s) {
    per_sequence[s] = sequence_contributions(model, calib.sequence(s), kind, options, total_neurons);
  });

  ImportanceReport report;
  report.criterion = kind;
  report.aggregation = options.aggregation;
  report.token_count = static_cast<std::uint64_t>(n) * calib.seq_len();
  report.sequence_count = n;
  report.calib_digest = corpus_digest(calib);
  report.model_digest = model_digest(model);
  report.toolkit_version = std::string(toolkit_version());

  const double normalizer = static_cast<double>(report.token_count);
  std::vector<double> column(n);
  std::size_t offset = 0;
  for (const auto dh : model.config.d_hidden) {
    std::vector<double> scores(dh);
    for (std::size_t i = 0; i < dh; ++i) {
      for (std::size_t s = 0; s < n; ++s) column[s] = per_sequence[s][offset + i];
      std::sort(column.begin(), column.end());
      double sum = 0.0;
      for (const double c : column) sum += c;
      scores[i] = sum / normalizer;
    }
    report.layers.push_back(std::move(scores));
    offset += dh;
  }
  return report;
}

double taylor_estimate_delta(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                             std::size_t layer, std::size_t neuron) {
  check_neuron(model, tokens, layer, neuron);
  ActivationCacheD cache;
  const MatrixD logits = run_forward<double>(model, tokens, {}, &cache);
  const auto targets = next_token_targets(tokens);
  CriterionInputs<double> inputs;
  if (kind == CriterionKind::kCrossEntropy) inputs.targets = targets;
  if (kind == CriterionKind::kSelfDistill) inputs.teacher_logits = &logits;
  const auto crit = evaluate(kind, logits, inputs);
  const auto grads = backward_to_hidden(model, cache, crit.grad_logits);
  const auto& g = grads.layers[layer];
  const auto& h = cache.layers[layer].h;
  double acc = 0.0;
  for (std::size_t t = 0; t < h.rows(); ++t) acc += g(t, neuron) * h(t, neuron);
  return -acc;
}

double exact_scaled_ablation_delta(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                                   std::size_t layer, std::size_t neuron, double epsilon) {
  check_neuron(model, tokens, layer, neuron);
  const double keep = 1.0 - epsilon;
  ForwardOptions<double> options;
  options.hidden_hook = [&](std::size_t l, MatrixD& h) {
    if (l != layer) return;
    for (std::size_t t = 0; t < h.rows(); ++t) h(t, neuron) = epsilon == 1.0 ? 0.0 : h(t, neuron) * keep;
  };
  return reference_criterion(model, tokens, kind, options) - reference_criterion(model, tokens, kind);
}

double exact_ablation_delta(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                            std::size_t layer, std::size_t neuron) {
  return exact_scaled_ablation_delta(model, tokens, kind, layer, neuron, 1.0);
}

}  // namespace hfprune
