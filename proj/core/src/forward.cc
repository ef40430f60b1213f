#include "hfprune/forward.h"

#include <algorithm>
#include <string>

#include "hfprune/error.h"
#include "hfprune/numerics.h"

namespace hfprune {

namespace {

template <std::floating_point T>
std::size_t matrix_bytes(const BasicMatrix<T>& m) {
  return m.size() * sizeof(T);
}

template <std::floating_point T>
void add_inplace(BasicMatrix<T>& dst, const BasicMatrix<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(static_cast<double>(d[i]) + s[i]);
}

}  // namespace

template <std::floating_point T>
std::size_t BasicActivationCache<T>::byte_size() const {
  std::size_t total = matrix_bytes(x_final) + matrix_bytes(logits);
  for (const auto& l : layers) {
    total += matrix_bytes(l.x_in) + matrix_bytes(l.attn_in) + matrix_bytes(l.q) + matrix_bytes(l.k) +
             matrix_bytes(l.v) + matrix_bytes(l.x_mid) + matrix_bytes(l.mlp_in) + matrix_bytes(l.gate) +
             matrix_bytes(l.up) + matrix_bytes(l.h);
    for (const auto& p : l.probs) total += matrix_bytes(p);
  }
  return total;
}

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw RangeError("token sequence is empty");
  if (tokens.size() > config.max_seq) {
    throw RangeError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                     std::to_string(config.max_seq));
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= config.vocab_size) {
      throw RangeError("token id " + std::to_string(tokens[t]) + " at position " + std::to_string(t) +
                       " is outside the vocabulary of " + std::to_string(config.vocab_size));
    }
  }
}

template <std::floating_point T>
BasicMatrix<T> run_forward(const Model& model, std::span<const TokenId> tokens, const ForwardOptions<T>& options,
                           BasicActivationCache<T>* cache) {
  const auto& cfg = model.config;
  check_tokens(cfg, tokens);
  const std::size_t seq = tokens.size(), d = cfg.d_model;

  BasicMatrix<T> x(seq, d);
  for (std::size_t t = 0; t < seq; ++t) {
    const auto src = model.embedding.row(tokens[t]);
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }
  if (cache) {
    cache->layers.clear();
    cache->layers.reserve(model.layers.size());
  }

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& lw = model.layers[l];
    LayerCache<T> lc;

    BasicMatrix<T> a = rmsnorm(x, lw.attn_norm, cfg.rms_eps);
    BasicMatrix<T> q = matmul_bt(a, lw.wq);
    BasicMatrix<T> k = matmul_bt(a, lw.wk);
    BasicMatrix<T> v = matmul_bt(a, lw.wv);
    rope_apply(q, cfg.n_heads, cfg.rope_theta);
    rope_apply(k, cfg.n_heads, cfg.rope_theta);
    auto attn = causal_attention(q, k, v, cfg.n_heads, cache != nullptr);
    BasicMatrix<T> x_mid = x;
    add_inplace(x_mid, matmul_bt(attn.out, lw.wo));

    BasicMatrix<T> m = rmsnorm(x_mid, lw.mlp_norm, cfg.rms_eps);
    BasicMatrix<T> gate = matmul_bt(m, lw.gate);
    BasicMatrix<T> up = matmul_bt(m, lw.up);
    BasicMatrix<T> h = silu(gate);
    {
      auto hd = h.data();
      auto ud = up.data();
      for (std::size_t i = 0; i < hd.size(); ++i) hd[i] = static_cast<T>(static_cast<double>(hd[i]) * ud[i]);
    }
    if (options.hidden_hook) options.hidden_hook(l, h);

    BasicMatrix<T> x_out = x_mid;
    const bool skip = std::find(options.skip_mlp_layers.begin(), options.skip_mlp_layers.end(), l) !=
                      options.skip_mlp_layers.end();
    if (!skip) add_inplace(x_out, matmul_bt(h, lw.down));

    if (cache) {
      lc.x_in = std::move(x);
      lc.attn_in = std::move(a);
      lc.q = std::move(q);
      lc.k = std::move(k);
      lc.v = std::move(v);
      lc.probs = std::move(attn.probs);
      lc.x_mid = std::move(x_mid);
      lc.mlp_in = std::move(m);
      lc.gate = std::move(gate);
      lc.up = std::move(up);
      lc.h = std::move(h);
      cache->layers.push_back(std::move(lc));
    }
    x = std::move(x_out);
  }

  BasicMatrix<T> f = rmsnorm(x, model.final_norm, cfg.rms_eps);
  BasicMatrix<T> logits = matmul_bt(f, model.head());
  if (cache) {
    cache->x_final = std::move(x);
    cache->logits = logits;
  }
  return logits;
}

ForwardResult forward(const Model& model, std::span<const TokenId> tokens) {
  ForwardResult result;
  result.logits = run_forward<float>(model, tokens, {}, &result.cache);
  return result;
}

Matrix logits_only(const Model& model, std::span<const TokenId> tokens, const ForwardOptions<float>& options) {
  return run_forward<float>(model, tokens, options, nullptr);
}

MatrixD forward_reference(const Model& model, std::span<const TokenId> tokens, const ForwardOptions<double>& options) {
  return run_forward<double>(model, tokens, options, nullptr);
}

template struct BasicActivationCache<float>;
template struct BasicActivationCache<double>;
template Matrix run_forward(const Model&, std::span<const TokenId>, const ForwardOptions<float>&,
                            BasicActivationCache<float>*);
template MatrixD run_forward(const Model&, std::span<const TokenId>, const ForwardOptions<double>&,
                             BasicActivationCache<double>*);

}  // namespace hfprune
