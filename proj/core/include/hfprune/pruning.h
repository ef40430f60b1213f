#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hfprune/model.h"
#include "hfprune/scoring.h"

namespace hfprune {

struct LayerPlan {
  std::vector<std::uint32_t> removed;  // sorted ascending
  std::vector<std::uint32_t> kept;     // sorted ascending

  bool operator==(const LayerPlan&) const = default;
};

struct PrunePlan {
  double rho = 0.0;  // fraction of hidden neurons removed per layer
  std::string report_digest;
  std::vector<LayerPlan> layers;

  bool operator==(const PrunePlan&) const = default;
};

// k = ⌊rho · d_hidden⌋. Throws RangeError unless 0 ≤ rho < 1.
std::size_t prune_count(double rho, std::size_t d_hidden);

// Removes the k lowest-scoring neurons of every layer; equal scores remove the
// lower index first.
PrunePlan make_plan(std::span<const std::vector<double>> layer_scores, double rho);
PrunePlan make_plan(const ImportanceReport& report, double rho);

// Uniformly random removal sets of the same sizes (evaluation baseline).
PrunePlan make_random_plan(const ModelConfig& config, double rho, std::uint64_t seed);

// Structural surgery: deletes rows of gate/up and columns of down for every
// removed neuron. All other tensors are copied unchanged.
Model apply_plan(const Model& model, const PrunePlan& plan);

// MLP prune fraction that removes overall_ratio of all parameters:
// overall_ratio · total / mlp, clamped to [0, 1). Throws InfeasibleError when
// the target exceeds the MLP parameter count.
double rho_from_overall(const Model& model, double overall_ratio);

}  // namespace hfprune
