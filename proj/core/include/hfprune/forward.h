#pragma once

#include <functional>
#include <span>
#include <vector>

#include "hfprune/matrix.h"
#include "hfprune/model.h"

namespace hfprune {

// Intermediates of one transformer block, in forward order.
template <std::floating_point T>
struct LayerCache {
  BasicMatrix<T> x_in;     // residual stream entering the block
  BasicMatrix<T> attn_in;  // rmsnorm(x_in)
  BasicMatrix<T> q, k, v;  // projections; q and k after rotary embedding
  std::vector<BasicMatrix<T>> probs;  // causal attention probabilities per head
  BasicMatrix<T> x_mid;    // residual stream after attention
  BasicMatrix<T> mlp_in;   // rmsnorm(x_mid)
  BasicMatrix<T> gate, up; // pre-activation projections
  BasicMatrix<T> h;        // SiLU(gate) ⊙ up, the prunable hidden neurons
};

template <std::floating_point T>
struct BasicActivationCache {
  std::vector<LayerCache<T>> layers;
  BasicMatrix<T> x_final;  // residual stream entering the final norm
  BasicMatrix<T> logits;

  std::size_t seq_len() const { return logits.rows(); }
  std::size_t byte_size() const;
};

using ActivationCache = BasicActivationCache<float>;
using ActivationCacheD = BasicActivationCache<double>;

// Called with each layer's hidden activation right after it is computed and
// before the down projection; edits are seen by everything downstream.
template <std::floating_point T>
using HiddenHook = std::function<void(std::size_t layer, BasicMatrix<T>& h)>;

template <std::floating_point T>
struct ForwardOptions {
  HiddenHook<T> hidden_hook;
  // Layers whose MLP contribution to the residual stream is dropped entirely.
  std::vector<std::size_t> skip_mlp_layers;
};

// Runs the full-sequence forward pass at activation precision T. When `cache`
// is non-null it receives every intermediate needed by the backward sweep.
template <std::floating_point T>
BasicMatrix<T> run_forward(const Model& model, std::span<const TokenId> tokens, const ForwardOptions<T>& options,
                           BasicActivationCache<T>* cache);

struct ForwardResult {
  Matrix logits;  // T×V
  ActivationCache cache;
};

ForwardResult forward(const Model& model, std::span<const TokenId> tokens);

// Same computation as forward() without retaining intermediates.
Matrix logits_only(const Model& model, std::span<const TokenId> tokens, const ForwardOptions<float>& options = {});

// Double-precision forward used by the finite-difference and ablation oracles.
MatrixD forward_reference(const Model& model, std::span<const TokenId> tokens,
                          const ForwardOptions<double>& options = {});

// Throws RangeError for an empty / too long sequence or an out-of-vocabulary id.
void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens);

}  // namespace hfprune
