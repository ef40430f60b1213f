#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hfprune/matrix.h"

namespace hfprune {

using TokenId = std::uint32_t;

struct ModelConfig {
  std::uint32_t d_model = 0;
  std::uint32_t n_layers = 0;
  std::uint32_t n_heads = 0;
  std::uint32_t vocab_size = 0;
  std::uint32_t max_seq = 0;
  float rope_theta = 10000.0f;
  float rms_eps = 1e-5f;
  bool tied = false;
  std::vector<std::uint32_t> d_hidden;  // one entry per layer

  std::uint32_t head_dim() const { return n_heads == 0 ? 0 : d_model / n_heads; }

  // Throws ShapeError naming the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Projection weights are stored [out_features × in_features], so a hidden
// neuron i owns row i of gate/up and column i of down.
struct LayerWeights {
  Matrix wq, wk, wv, wo;   // d_model × d_model
  Matrix gate, up;         // d_hidden × d_model
  Matrix down;             // d_model × d_hidden
  std::vector<float> attn_norm, mlp_norm;  // d_model

  bool operator==(const LayerWeights&) const = default;
};

struct Model {
  ModelConfig config;
  Matrix embedding;  // vocab × d_model
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;
  Matrix lm_head;  // vocab × d_model; empty when config.tied

  const Matrix& head() const { return config.tied ? embedding : lm_head; }

  // Checks every tensor against the config. Throws ShapeError / NumericError.
  void validate() const;

  bool operator==(const Model&) const = default;
};

struct ParamCounts {
  std::uint64_t total = 0;
  std::uint64_t mlp = 0;
  std::vector<std::uint64_t> per_layer_mlp;
};

// MLP counts cover gate, up and down only. A tied head is counted once.
ParamCounts param_counts(const Model& model);

struct RandomModelOptions {
  std::uint64_t seed = 0;
  // Multiplies the 1/sqrt(fan_in) standard deviation of projection weights.
  float weight_scale = 1.0f;
  // Standard deviation of embedding (and untied head) entries.
  float embedding_scale = 1.0f;
};

// Gaussian-initialized model for tests, benchmarks and synthetic runs.
Model make_random_model(const ModelConfig& config, const RandomModelOptions& options = {});

// Config helper: uniform hidden width across layers.
ModelConfig make_config(std::uint32_t d_model, std::uint32_t n_layers, std::uint32_t n_heads,
                        std::uint32_t d_hidden, std::uint32_t vocab_size, std::uint32_t max_seq,
                        bool tied = false);

}  // namespace hfprune
