#include "hfprune/backprop.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "hfprune/error.h"
#include "hfprune/numerics.h"
#include "hfprune/parallel.h"

namespace hfprune {

namespace {

template <std::floating_point T>
BasicMatrix<T> sum(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  BasicMatrix<T> out(a.rows(), a.cols());
  auto da = a.data();
  auto db = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(static_cast<double>(da[i]) + db[i]);
  return out;
}

template <std::floating_point T>
BasicMatrix<T> hadamard(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  BasicMatrix<T> out(a.rows(), a.cols());
  auto da = a.data();
  auto db = b.data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(static_cast<double>(da[i]) * db[i]);
  return out;
}

template <std::floating_point T>
void check_cache(const Model& model, const BasicActivationCache<T>& cache, const BasicMatrix<T>& grad_logits) {
  const auto& cfg = model.config;
  if (cache.layers.size() != model.layers.size()) throw ShapeError("backward: cache layer count differs from model");
  const std::size_t seq = cache.x_final.rows();
  if (seq == 0 || cache.x_final.cols() != cfg.d_model) throw ShapeError("backward: cache does not match model width");
  if (grad_logits.rows() != seq || grad_logits.cols() != cfg.vocab_size) {
    throw ShapeError("backward: grad_logits is " + std::to_string(grad_logits.rows()) + "x" +
                     std::to_string(grad_logits.cols()) + ", expected " + std::to_string(seq) + "x" +
                     std::to_string(cfg.vocab_size));
  }
  for (std::size_t l = 0; l < cache.layers.size(); ++l) {
    const auto& h = cache.layers[l].h;
    if (h.rows() != seq || h.cols() != cfg.d_hidden[l]) {
      throw ShapeError("backward: cached hidden activation of layer " + std::to_string(l) + " has the wrong shape");
    }
  }
}

}  // namespace

template <std::floating_point T>
BasicHiddenGradients<T> backward_to_hidden(const Model& model, const BasicActivationCache<T>& cache,
                                           const BasicMatrix<T>& grad_logits) {
  check_cache(model, cache, grad_logits);
  const auto& cfg = model.config;
  const std::size_t n_layers = model.layers.size();
  BasicHiddenGradients<T> out;
  out.layers.resize(n_layers);

  // d/d(residual stream) entering the final norm.
  BasicMatrix<T> dx = rmsnorm_backward(cache.x_final, model.final_norm, cfg.rms_eps, matmul(grad_logits, model.head()));

  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& lw = model.layers[l];
    const auto& lc = cache.layers[l];

    // x_out = x_mid + h · downᵀ
    out.layers[l] = matmul(dx, lw.down);
    if (l == 0) break;
    const auto& dh = out.layers[l];

    // h = silu(gate) ⊙ up, gate/up = mlp_in · Wᵀ, mlp_in = rmsnorm(x_mid)
    const BasicMatrix<T> dgate = silu_backward(lc.gate, hadamard(dh, lc.up));
    const BasicMatrix<T> dup = hadamard(dh, silu(lc.gate));
    const BasicMatrix<T> dm = sum(matmul(dgate, lw.gate), matmul(dup, lw.up));
    const BasicMatrix<T> dx_mid = sum(dx, rmsnorm_backward(lc.x_mid, lw.mlp_norm, cfg.rms_eps, dm));

    // x_mid = x_in + attn(rope(a·Wqᵀ), rope(a·Wkᵀ), a·Wvᵀ) · Woᵀ, a = rmsnorm(x_in)
    const BasicMatrix<T> d_attn = matmul(dx_mid, lw.wo);
    auto g = causal_attention_backward<T>(lc.q, lc.k, lc.v, lc.probs, d_attn, cfg.n_heads);
    rope_apply(g.dq, cfg.n_heads, cfg.rope_theta, /*inverse=*/true);
    rope_apply(g.dk, cfg.n_heads, cfg.rope_theta, /*inverse=*/true);
    const BasicMatrix<T> da = sum(sum(matmul(g.dq, lw.wq), matmul(g.dk, lw.wk)), matmul(g.dv, lw.wv));
    dx = sum(dx_mid, rmsnorm_backward(lc.x_in, lw.attn_norm, cfg.rms_eps, da));
  }
  return out;
}

double reference_criterion(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                           const ForwardOptions<double>& options) {
  const MatrixD logits = forward_reference(model, tokens, options);
  CriterionInputs<double> inputs;
  std::vector<TokenId> targets;
  MatrixD teacher;
  if (kind == CriterionKind::kCrossEntropy) {
    targets = next_token_targets(tokens);
    inputs.targets = targets;
  } else if (kind == CriterionKind::kSelfDistill) {
    teacher = forward_reference(model, tokens);
    inputs.teacher_logits = &teacher;
  }
  return evaluate(kind, logits, inputs).value;
}

double finite_diff_hidden(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                          std::size_t layer, std::size_t neuron, std::size_t position, double epsilon) {
  if (layer >= model.layers.size()) throw RangeError("finite_diff_hidden: layer " + std::to_string(layer) + " out of range");
  if (neuron >= model.config.d_hidden[layer]) {
    throw RangeError("finite_diff_hidden: neuron " + std::to_string(neuron) + " out of range");
  }
  if (position >= tokens.size()) throw RangeError("finite_diff_hidden: position " + std::to_string(position) + " out of range");
  if (!(epsilon > 0.0)) throw RangeError("finite_diff_hidden: epsilon must be positive");

  auto perturbed = [&](double delta) {
    ForwardOptions<double> options;
    options.hidden_hook = [&](std::size_t l, MatrixD& h) {
      if (l == layer) h(position, neuron) += delta;
    };
    return reference_criterion(model, tokens, kind, options);
  };
  return (perturbed(epsilon) - perturbed(-epsilon)) / (2.0 * epsilon);
}

double relative_error(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

GradCheckResult gradient_check(const Model& model, std::span<const TokenId> tokens, CriterionKind kind,
                               const GradCheckOptions& options, const HiddenBackwardFn& backward) {
  if (options.samples == 0) throw RangeError("gradient check needs at least one sample");
  if (!(options.epsilon > 0.0)) throw RangeError("gradient check epsilon must be positive");

  auto fwd = forward(model, tokens);
  const auto targets = next_token_targets(tokens);
  CriterionInputs<float> inputs;
  if (kind == CriterionKind::kCrossEntropy) inputs.targets = targets;
  if (kind == CriterionKind::kSelfDistill) inputs.teacher_logits = &fwd.logits;
  const auto crit = evaluate(kind, fwd.logits, inputs);
  const HiddenGradients grads =
      backward ? backward(model, fwd.cache, crit.grad_logits) : backward_to_hidden(model, fwd.cache, crit.grad_logits);

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick_layer(0, model.layers.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_pos(0, tokens.size() - 1);
  result.samples.resize(options.samples);
  for (auto& s : result.samples) {
    s.layer = pick_layer(rng);
    s.position = pick_pos(rng);
    s.neuron = std::uniform_int_distribution<std::size_t>(0, model.config.d_hidden[s.layer] - 1)(rng);
  }
  parallel_for(result.samples.size(), [&](std::size_t i) {
    auto& s = result.samples[i];
    s.analytic = grads.layers.at(s.layer)(s.position, s.neuron);
    s.numeric = finite_diff_hidden(model, tokens, kind, s.layer, s.neuron, s.position, options.epsilon);
    s.rel_error = relative_error(s.analytic, s.numeric);
  });
  result.worst = result.samples.front();
  for (const auto& s : result.samples) {
    if (s.rel_error > result.worst.rel_error) result.worst = s;
  }
  result.max_rel_error = result.worst.rel_error;
  result.passed = result.max_rel_error <= options.tolerance;
  return result;
}

template BasicHiddenGradients<float> backward_to_hidden(const Model&, const BasicActivationCache<float>&,
                                                        const BasicMatrix<float>&);
template BasicHiddenGradients<double> backward_to_hidden(const Model&, const BasicActivationCache<double>&,
                                                         const BasicMatrix<double>&);

}  // namespace hfprune
