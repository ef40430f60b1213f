#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hfprune/criteria.h"
#include "hfprune/model.h"
#include "hfprune/model_io.h"

namespace hfprune {

// exp(mean −ln p(next token)) over every position that has a successor.
double perplexity(const Model& model, const TokenCorpus& corpus);

enum class FidelityMode { kFinalPosition, kAllPositions };

std::string_view to_string(FidelityMode mode);

struct FidelityRow {
  std::size_t prompt = 0;
  std::size_t position = 0;
  double js = 0.0;
  double jaccard = 0.0;
};

struct FidelityReport {
  double mean_js = 0.0;
  double mean_topk_jaccard = 0.0;
  std::size_t k = 15;
  std::size_t prompt_count = 0;
  std::size_t positions_per_prompt = 0;
  double ppl_original = 0.0;
  double ppl_pruned = 0.0;
  FidelityMode mode = FidelityMode::kFinalPosition;
  std::string log_base = "2";
  std::string original_digest;
  std::string pruned_digest;
  std::vector<FidelityRow> rows;  // prompt-major order
};

// Compares the next-token distributions of two models on the same prompts
// (JS distance, top-k Jaccard) and reports both perplexities on the prompts.
// Means are permutation-invariant: per-row values are summed in sorted order.
FidelityReport distribution_fidelity(const Model& original, const Model& pruned, const TokenCorpus& prompts,
                                     std::size_t k = 15, FidelityMode mode = FidelityMode::kFinalPosition);

// Mean over calibration sequences of |exact_ablation_delta| for every neuron,
// flattened layer-major. Throws RangeError above max_neurons total neurons.
std::vector<double> oracle_damage(const Model& model, const TokenCorpus& calib, CriterionKind kind,
                                  std::size_t max_neurons = 4096);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

// Mean damage of the top-decile-by-score neurons minus the bottom decile.
double top_bottom_gap(std::span<const double> scores, std::span<const double> damage);

struct ScoringQuality {
  double spearman = 0.0;
  double top_bottom_gap = 0.0;
  std::vector<double> scores;  // flattened importance scores
  std::vector<double> damage;  // flattened oracle damage
};

ScoringQuality scoring_quality(const Model& model, const TokenCorpus& calib, CriterionKind kind,
                               std::size_t max_neurons = 4096);

// Informational wall-clock time of one prefill; never asserted on.
double prefill_seconds(const Model& model, std::span<const TokenId> tokens);

}  // namespace hfprune
