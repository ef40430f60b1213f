#include "hfprune/pruning.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "hfprune/digest.h"
#include "hfprune/error.h"
#include "hfprune/reports.h"

namespace hfprune {

namespace {

void check_rho(double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw RangeError("prune ratio " + std::to_string(rho) + " is outside [0, 1)");
}

LayerPlan plan_from_order(const std::vector<std::uint32_t>& order, std::size_t k) {
  LayerPlan lp;
  lp.removed.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  lp.kept.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(lp.removed.begin(), lp.removed.end());
  std::sort(lp.kept.begin(), lp.kept.end());
  return lp;
}

}  // namespace

std::size_t prune_count(double rho, std::size_t d_hidden) {
  check_rho(rho);
  // The small slack keeps decimal ratios such as 0.29 · 100 from flooring to 28.
  const auto k = static_cast<std::size_t>(std::floor(rho * static_cast<double>(d_hidden) + 1e-9));
  // ⌊rho · d⌋ ≤ d − 1 for rho < 1.
  return d_hidden == 0 ? 0 : std::min(k, d_hidden - 1);
}

PrunePlan make_plan(std::span<const std::vector<double>> layer_scores, double rho) {
  check_rho(rho);
  PrunePlan plan;
  plan.rho = rho;
  for (const auto& scores : layer_scores) {
    std::vector<std::uint32_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return scores[a] < scores[b]; });
    plan.layers.push_back(plan_from_order(order, prune_count(rho, scores.size())));
  }
  return plan;
}

PrunePlan make_plan(const ImportanceReport& report, double rho) {
  PrunePlan plan = make_plan(std::span<const std::vector<double>>(report.layers), rho);
  plan.report_digest = report_digest(report);
  return plan;
}

PrunePlan make_random_plan(const ModelConfig& config, double rho, std::uint64_t seed) {
  check_rho(rho);
  std::mt19937_64 rng(seed);
  PrunePlan plan;
  plan.rho = rho;
  plan.report_digest = "random:" + std::to_string(seed);
  for (const auto dh : config.d_hidden) {
    std::vector<std::uint32_t> order(dh);
    std::iota(order.begin(), order.end(), 0u);
    std::shuffle(order.begin(), order.end(), rng);
    plan.layers.push_back(plan_from_order(order, prune_count(rho, dh)));
  }
  return plan;
}

Model apply_plan(const Model& model, const PrunePlan& plan) {
  if (plan.layers.size() != model.layers.size()) {
    throw ShapeError("prune plan has " + std::to_string(plan.layers.size()) + " layers, model has " +
                     std::to_string(model.layers.size()));
  }
  Model out = model;
  const std::size_t d = model.config.d_model;
  for (std::size_t l = 0; l < plan.layers.size(); ++l) {
    const auto& lp = plan.layers[l];
    const std::size_t dh = model.config.d_hidden[l];
    if (lp.removed.size() + lp.kept.size() != dh) {
      throw ShapeError("prune plan layer " + std::to_string(l) + " covers " +
                       std::to_string(lp.removed.size() + lp.kept.size()) + " neurons, model has " + std::to_string(dh));
    }
    std::vector<bool> seen(dh, false);
    for (const auto idx : lp.removed) {
      if (idx >= dh || seen[idx]) throw ShapeError("prune plan layer " + std::to_string(l) + " has an invalid index");
      seen[idx] = true;
    }
    for (const auto idx : lp.kept) {
      if (idx >= dh || seen[idx]) throw ShapeError("prune plan layer " + std::to_string(l) + " has an invalid index");
      seen[idx] = true;
    }
    if (lp.kept.empty()) throw ShapeError("prune plan layer " + std::to_string(l) + " removes every neuron");
    if (lp.removed.empty()) continue;

    const auto& src = model.layers[l];
    auto& dst = out.layers[l];
    const std::size_t kept = lp.kept.size();
    Matrix gate(kept, d), up(kept, d), down(d, kept);
    for (std::size_t j = 0; j < kept; ++j) {
      const auto i = lp.kept[j];
      std::copy(src.gate.row(i).begin(), src.gate.row(i).end(), gate.row(j).begin());
      std::copy(src.up.row(i).begin(), src.up.row(i).end(), up.row(j).begin());
      for (std::size_t r = 0; r < d; ++r) down(r, j) = src.down(r, i);
    }
    dst.gate = std::move(gate);
    dst.up = std::move(up);
    dst.down = std::move(down);
    out.config.d_hidden[l] = static_cast<std::uint32_t>(kept);
  }
  out.validate();
  return out;
}

double rho_from_overall(const Model& model, double overall_ratio) {
  if (!(overall_ratio >= 0.0 && overall_ratio < 1.0)) {
    throw RangeError("overall ratio " + std::to_string(overall_ratio) + " is outside [0, 1)");
  }
  const auto counts = param_counts(model);
  const double target = overall_ratio * static_cast<double>(counts.total);
  if (target > static_cast<double>(counts.mlp)) {
    throw InfeasibleError("overall ratio " + std::to_string(overall_ratio) + " needs " + std::to_string(target) +
                          " parameters but the MLPs hold only " + std::to_string(counts.mlp));
  }
  const double rho = target / static_cast<double>(counts.mlp);
  return std::min(rho, std::nextafter(1.0, 0.0));
}

}  // namespace hfprune
