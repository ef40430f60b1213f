#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "hfprune/criteria.h"
#include "hfprune/forward.h"
#include "hfprune/model.h"

namespace hfprune {

// layers[l](t, i) = ∂C/∂h_i at position t of layer l.
template <std::floating_point T>
struct BasicHiddenGradients {
  std::vector<BasicMatrix<T>> layers;
};

using HiddenGradients = BasicHiddenGradients<float>;
using HiddenGradientsD = BasicHiddenGradients<double>;

// Reverse sweep from ∂C/∂logits to every layer's hidden activation. The sweep
// runs through the head, the final norm and each block's residual stream
// (attention and MLP paths), so the gradient for layer l includes every
// downstream route from h^l to the logits. No weight gradients are formed.
template <std::floating_point T>
BasicHiddenGradients<T> backward_to_hidden(const Model& model, const BasicActivationCache<T>& cache,
                                           const BasicMatrix<T>& grad_logits);

// Criterion value of a double-precision forward with optional edits. For SD
// the teacher is the unedited model on the same tokens; for CE the targets
// are the next tokens.
double reference_criterion(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                           const ForwardOptions<double>& options = {});

// Central difference (C(h + εe) − C(h − εe)) / 2ε, where e perturbs one hidden
// activation (layer, position, neuron) and everything downstream is recomputed
// in double precision.
double finite_diff_hidden(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                          std::size_t layer, std::size_t neuron, std::size_t position, double epsilon);

// |a − b| / max(|a|, |b|); zero when both are exactly zero.
double relative_error(double a, double b);

struct GradCheckOptions {
  std::size_t samples = 200;
  double epsilon = 1e-3;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
};

struct GradCheckSample {
  std::size_t layer = 0, neuron = 0, position = 0;
  double analytic = 0.0, numeric = 0.0, rel_error = 0.0;
};

struct GradCheckResult {
  std::vector<GradCheckSample> samples;
  GradCheckSample worst;
  double max_rel_error = 0.0;
  bool passed = false;
};

using HiddenBackwardFn = std::function<HiddenGradients(const Model&, const ActivationCache&, const Matrix&)>;

// Compares analytic hidden gradients against finite_diff_hidden at randomly
// sampled (layer, neuron, position) coordinates. `backward` defaults to
// backward_to_hidden<float>; tests substitute corrupted versions.
GradCheckResult gradient_check(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                               const GradCheckOptions& options, const HiddenBackwardFn& backward = {});

}  // namespace hfprune
