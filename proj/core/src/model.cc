#include "hfprune/model.h"

#include <cmath>
#include <random>
#include <string>

#include "hfprune/error.h"

namespace hfprune {

namespace {

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                     std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

void expect_length(std::span<const float> v, std::size_t n, const std::string& name) {
  if (v.size() != n) {
    throw ShapeError(name + ": expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
  }
}

void expect_finite(std::span<const float> v, const std::string& name) {
  for (const float x : v) {
    if (!std::isfinite(x)) throw NumericError(name + ": non-finite weight");
  }
}

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (float& x : m.data()) x = static_cast<float>(dist(rng));
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0) throw ShapeError("config: d_model must be positive");
  if (n_heads == 0 || d_model % n_heads != 0) throw ShapeError("config: d_model not divisible by n_heads");
  if (head_dim() % 2 != 0) throw ShapeError("config: head dimension must be even for rotary embeddings");
  if (vocab_size < 2) throw ShapeError("config: vocab_size must be at least 2");
  if (max_seq == 0) throw ShapeError("config: max_seq must be positive");
  if (!(rope_theta > 0.0f) || !std::isfinite(rope_theta)) throw ShapeError("config: rope_theta must be positive");
  if (!(rms_eps > 0.0f) || !std::isfinite(rms_eps)) throw ShapeError("config: rms_eps must be positive");
  if (d_hidden.size() != n_layers) throw ShapeError("config: d_hidden list length differs from n_layers");
  for (std::size_t l = 0; l < d_hidden.size(); ++l) {
    if (d_hidden[l] == 0) throw ShapeError("config: d_hidden of layer " + std::to_string(l) + " is zero");
  }
}

void Model::validate() const {
  config.validate();
  const std::size_t d = config.d_model, v = config.vocab_size;
  expect_shape(embedding, v, d, "embedding");
  expect_finite(embedding.data(), "embedding");
  if (layers.size() != config.n_layers) throw ShapeError("model: layer count differs from config");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& lw = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    const std::size_t dh = config.d_hidden[l];
    expect_shape(lw.wq, d, d, p + "attn.wq");
    expect_shape(lw.wk, d, d, p + "attn.wk");
    expect_shape(lw.wv, d, d, p + "attn.wv");
    expect_shape(lw.wo, d, d, p + "attn.wo");
    expect_shape(lw.gate, dh, d, p + "mlp.gate");
    expect_shape(lw.up, dh, d, p + "mlp.up");
    expect_shape(lw.down, d, dh, p + "mlp.down");
    expect_length(lw.attn_norm, d, p + "attn_norm");
    expect_length(lw.mlp_norm, d, p + "mlp_norm");
    for (const Matrix* m : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.gate, &lw.up, &lw.down}) {
      expect_finite(m->data(), p + "weights");
    }
  }
  expect_length(final_norm, d, "final_norm");
  if (config.tied) {
    if (!lm_head.empty()) throw ShapeError("lm_head: must be empty for a tied model");
  } else {
    expect_shape(lm_head, v, d, "lm_head");
    expect_finite(lm_head.data(), "lm_head");
  }
}

ParamCounts param_counts(const Model& model) {
  ParamCounts counts;
  const std::uint64_t d = model.config.d_model, v = model.config.vocab_size;
  counts.total = v * d + d;  // embedding + final norm
  if (!model.config.tied) counts.total += v * d;
  for (const auto& lw : model.layers) {
    const std::uint64_t mlp = lw.gate.size() + lw.up.size() + lw.down.size();
    counts.per_layer_mlp.push_back(mlp);
    counts.mlp += mlp;
    counts.total += mlp + lw.wq.size() + lw.wk.size() + lw.wv.size() + lw.wo.size() + lw.attn_norm.size() +
                    lw.mlp_norm.size();
  }
  return counts;
}

ModelConfig make_config(std::uint32_t d_model, std::uint32_t n_layers, std::uint32_t n_heads,
                        std::uint32_t d_hidden, std::uint32_t vocab_size, std::uint32_t max_seq, bool tied) {
  ModelConfig c;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.vocab_size = vocab_size;
  c.max_seq = max_seq;
  c.tied = tied;
  c.d_hidden.assign(n_layers, d_hidden);
  return c;
}

Model make_random_model(const ModelConfig& config, const RandomModelOptions& options) {
  config.validate();
  std::mt19937_64 rng(options.seed);
  const std::size_t d = config.d_model, v = config.vocab_size;
  const double scale = options.weight_scale;

  Model m;
  m.config = config;
  m.embedding = gaussian(v, d, options.embedding_scale, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::size_t dh = config.d_hidden[l];
    LayerWeights lw;
    lw.wq = gaussian(d, d, scale / std::sqrt(double(d)), rng);
    lw.wk = gaussian(d, d, scale / std::sqrt(double(d)), rng);
    lw.wv = gaussian(d, d, scale / std::sqrt(double(d)), rng);
    lw.wo = gaussian(d, d, scale / std::sqrt(double(d)), rng);
    lw.gate = gaussian(dh, d, scale / std::sqrt(double(d)), rng);
    lw.up = gaussian(dh, d, scale / std::sqrt(double(d)), rng);
    lw.down = gaussian(d, dh, scale / std::sqrt(double(dh)), rng);
    std::normal_distribution<double> jitter(1.0, 0.1);
    lw.attn_norm.resize(d);
    lw.mlp_norm.resize(d);
    for (auto& x : lw.attn_norm) x = static_cast<float>(jitter(rng));
    for (auto& x : lw.mlp_norm) x = static_cast<float>(jitter(rng));
    m.layers.push_back(std::move(lw));
  }
  m.final_norm.assign(d, 1.0f);
  if (!config.tied) m.lm_head = gaussian(v, d, options.embedding_scale / std::sqrt(double(d)), rng);
  return m;
}

}  // namespace hfprune
