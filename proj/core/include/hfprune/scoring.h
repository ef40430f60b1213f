#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hfprune/criteria.h"
#include "hfprune/model.h"
#include "hfprune/model_io.h"

namespace hfprune {

// Calibration data: N fixed-length token sequences.
using CalibrationSet = TokenCorpus;

enum class Aggregation {
  kAbsPerPosition,  // Σ_t |g_t · h_t|
  kAbsPerSequence,  // |Σ_t g_t · h_t|
};

std::string_view to_string(Aggregation aggregation);
// "abs-pos" or "abs-seq".
Aggregation parse_aggregation(std::string_view name);

struct ScoringOptions {
  Aggregation aggregation = Aggregation::kAbsPerPosition;
  // Positive factor applied to the criterion before differentiation (e.g.
  // 1/ln 2 to express a nats criterion in bits). Scores scale linearly.
  double criterion_scale = 1.0;
};

struct ImportanceReport {
  CriterionKind criterion = CriterionKind::kEntropy;
  Aggregation aggregation = Aggregation::kAbsPerPosition;
  std::string normalizer = "positions";
  std::uint64_t token_count = 0;
  std::uint64_t sequence_count = 0;
  std::string calib_digest;
  std::string model_digest;
  std::string toolkit_version;
  std::vector<std::vector<double>> layers;  // layers[l][i] ≥ 0

  double max_score() const;
  bool operator==(const ImportanceReport&) const = default;
};

// Per layer and neuron: (1 / total positions) · Σ_sequences Σ_t |∂C/∂h_i · h_i|,
// one backward pass per sequence. Sequences run on the worker pool; per-neuron
// contributions are summed in sorted order, so the result does not depend on
// worker count or sequence order. For SD the teacher is the model itself.
ImportanceReport accumulate_scores(const Model& model, const CalibrationSet& calib, CriterionKind kind,
                                   const ScoringOptions& options = {});

// Signed first-order estimate −Σ_t ∂C/∂h_i(t) · h_i(t) of zeroing neuron i at
// every position (double precision).
double taylor_estimate_delta(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                             std::size_t layer, std::size_t neuron);

// Exact C(h_i = 0) − C(h_i) by re-running the forward with the neuron masked.
double exact_ablation_delta(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                            std::size_t layer, std::size_t neuron);

// Exact C(h_i → (1 − ε) h_i) − C(h_i).
double exact_scaled_ablation_delta(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                                   std::size_t layer, std::size_t neuron, double epsilon);

}  // namespace hfprune
