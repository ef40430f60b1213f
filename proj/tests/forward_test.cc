#include <gtest/gtest.h>

#include "hfprune/error.h"
#include "hfprune/forward.h"
#include "hfprune/numerics.h"
#include "support/generators.h"

namespace hfprune {
namespace {

using testing::Gen;

Model zero_model(const ModelConfig& c) {
  Model m = make_random_model(c);
  const auto zero = [](Matrix& x) { std::fill(x.data().begin(), x.data().end(), 0.0f); };
  zero(m.embedding);
  for (auto& L : m.layers) {
    for (Matrix* x : {&L.wq, &L.wk, &L.wv, &L.wo, &L.gate, &L.up, &L.down}) zero(*x);
    std::fill(L.attn_norm.begin(), L.attn_norm.end(), 1.0f);
    std::fill(L.mlp_norm.begin(), L.mlp_norm.end(), 1.0f);
  }
  std::fill(m.final_norm.begin(), m.final_norm.end(), 1.0f);
  if (!c.tied) zero(m.lm_head);
  return m;
}

TEST(ParamCounts, SmallUntiedExample) {
  const Model m = make_random_model(make_config(4, 1, 2, 8, 10, 4));
  const auto c = param_counts(m);
  EXPECT_EQ(c.mlp, 96u);
  // embed 40 + attention 64 + mlp 96 + norms 8 + final 4 + head 40
  EXPECT_EQ(c.total, 252u);
}

TEST(ParamCounts, TiedHeadCountedOnce) {
  const Model untied = make_random_model(make_config(4, 1, 2, 8, 10, 4, false));
  const Model tied = make_random_model(make_config(4, 1, 2, 8, 10, 4, true));
  EXPECT_EQ(param_counts(untied).total - param_counts(tied).total, 40u);
}

TEST(ModelConfig, ValidationFailures) {
  EXPECT_THROW(make_config(0, 1, 1, 4, 8, 4).validate(), ShapeError);
  EXPECT_THROW(make_config(12, 1, 5, 4, 8, 4).validate(), ShapeError);
  EXPECT_THROW(make_config(8, 1, 2, 4, 1, 4).validate(), ShapeError);
  ModelConfig c = make_config(8, 2, 2, 4, 8, 4);
  c.d_hidden.pop_back();
  EXPECT_THROW(c.validate(), ShapeError);
}

TEST(RandomModel, SeedDeterminesWeights) {
  const auto c = make_config(8, 2, 2, 16, 12, 8);
  RandomModelOptions a, b;
  a.seed = b.seed = 5;
  EXPECT_EQ(make_random_model(c, a), make_random_model(c, b));
  b.seed = 6;
  EXPECT_NE(make_random_model(c, a), make_random_model(c, b));
}

TEST(Forward, ZeroWeightModelGivesZeroLogits) {
  for (bool tied : {false, true}) {
    const Model m = zero_model(make_config(8, 2, 2, 16, 12, 8, tied));
    const std::vector<TokenId> tokens{1, 5, 3, 11};
    const Matrix logits = forward(m, tokens).logits;
    for (float v : logits.data()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Forward, RowsAreValidDistributions) {
  RandomModelOptions o;
  o.seed = 3;
  const Model m = make_random_model(make_config(32, 2, 4, 64, 64, 16), o);
  Gen g(3);
  const auto tokens = g.tokens(8, 64);
  const Matrix logits = forward(m, tokens).logits;
  ASSERT_EQ(logits.rows(), 8u);
  ASSERT_EQ(logits.cols(), 64u);
  for (std::size_t t = 0; t < 8; ++t) {
    const auto p = softmax_stable(logits.row(t));
    EXPECT_NO_THROW(ProbVector(std::vector<float>(p.values().begin(), p.values().end())));
  }
}

TEST(Forward, SharedPrefixGivesIdenticalLogits) {
  Gen g(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Model m = g.model();
    const std::size_t len = 2 + g.index(10), prefix = 1 + g.index(len - 1);
    auto a = g.tokens(len, m.config.vocab_size);
    auto b = g.tokens(len, m.config.vocab_size);
    std::copy(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(prefix), b.begin());
    const Matrix la = logits_only(m, a), lb = logits_only(m, b);
    for (std::size_t t = 0; t < prefix; ++t)
      for (std::size_t v = 0; v < la.cols(); ++v) EXPECT_EQ(la(t, v), lb(t, v));
  }
}

TEST(Forward, LogitsOnlyEqualsForwardExactly) {
  Gen g(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Model m = g.model();
    const auto tokens = g.tokens(1 + g.index(12), m.config.vocab_size);
    EXPECT_EQ(logits_only(m, tokens), forward(m, tokens).logits);
  }
}

TEST(Forward, ReferenceAgreesWithFloatPath) {
  Gen g(6);
  for (int trial = 0; trial < 10; ++trial) {
    const Model m = g.model();
    const auto tokens = g.tokens(1 + g.index(12), m.config.vocab_size);
    const Matrix f = logits_only(m, tokens);
    const MatrixD d = forward_reference(m, tokens);
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f.data()[i], d.data()[i], 1e-4);
  }
}

TEST(Forward, CacheReproducesHiddenActivations) {
  Gen g(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Model m = g.model();
    const auto tokens = g.tokens(1 + g.index(12), m.config.vocab_size);
    const auto result = forward(m, tokens);
    ASSERT_EQ(result.cache.layers.size(), m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto& c = result.cache.layers[l];
      const Matrix mlp_in = rmsnorm(c.x_mid, m.layers[l].mlp_norm, m.config.rms_eps);
      const Matrix gate = matmul_bt(mlp_in, m.layers[l].gate);
      const Matrix up = matmul_bt(mlp_in, m.layers[l].up);
      for (std::size_t i = 0; i < c.h.size(); ++i) {
        const double expect = static_cast<double>(gate.data()[i]) /
                              (1.0 + std::exp(-static_cast<double>(gate.data()[i]))) * up.data()[i];
        EXPECT_NEAR(c.h.data()[i], expect, 1e-6);
      }
    }
  }
}

TEST(Forward, HookEditsPropagateDownstream) {
  Gen g(8);
  const Model m = g.model();
  const auto tokens = g.tokens(6, m.config.vocab_size);
  ForwardOptions<float> opts;
  opts.hidden_hook = [](std::size_t, Matrix& h) { std::fill(h.data().begin(), h.data().end(), 0.0f); };
  ForwardOptions<float> skip;
  for (std::size_t l = 0; l < m.layers.size(); ++l) skip.skip_mlp_layers.push_back(l);
  EXPECT_EQ(logits_only(m, tokens, opts), logits_only(m, tokens, skip));
  EXPECT_NE(logits_only(m, tokens, opts), logits_only(m, tokens));
}

TEST(Forward, CacheSizeIsReported) {
  Gen g(9);
  const Model m = g.model();
  const auto result = forward(m, g.tokens(8, m.config.vocab_size));
  EXPECT_GT(result.cache.byte_size(), result.logits.size() * sizeof(float));
}

TEST(Forward, BadTokensThrow) {
  const Model m = make_random_model(make_config(8, 1, 2, 8, 10, 4));
  EXPECT_THROW(logits_only(m, std::vector<TokenId>{}), RangeError);
  EXPECT_THROW(logits_only(m, std::vector<TokenId>{1, 2, 3, 4, 5}), RangeError);
  EXPECT_THROW(logits_only(m, std::vector<TokenId>{1, 10}), RangeError);
}

}  // namespace
}  // namespace hfprune
