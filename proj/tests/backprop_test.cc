#include <gtest/gtest.h>

#include <algorithm>

#include "hfprune/backprop.h"
#include "hfprune/error.h"
#include "support/generators.h"

namespace hfprune {
namespace {

using testing::Gen;

Model tiny_model(std::uint64_t seed, std::uint32_t layers = 2) {
  RandomModelOptions o;
  o.seed = seed;
  return make_random_model(make_config(32, layers, 4, 64, 64, 16), o);
}

MatrixD criterion_grad(const Model& m, std::span<const TokenId> tokens, CriterionKind kind, ActivationCacheD& cache) {
  const MatrixD logits = run_forward<double>(m, tokens, {}, &cache);
  const auto targets = next_token_targets(tokens);
  CriterionInputs<double> in;
  in.targets = targets;
  in.teacher_logits = &logits;
  return evaluate(kind, logits, in).grad_logits;
}

TEST(Backprop, ZeroUpstreamGivesExactZeros) {
  const Model m = tiny_model(1);
  Gen g(1);
  const auto fwd = forward(m, g.tokens(6, 64));
  const auto grads = backward_to_hidden(m, fwd.cache, Matrix(6, 64, 0.0f));
  ASSERT_EQ(grads.layers.size(), 2u);
  for (const auto& l : grads.layers)
    for (float v : l.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Backprop, IsLinearInUpstreamGradient) {
  Gen g(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Model m = g.model();
    const auto tokens = g.tokens(1 + g.index(8), m.config.vocab_size);
    ActivationCacheD cache;
    run_forward<double>(m, tokens, {}, &cache);
    const MatrixD a = g.matrix<double>(tokens.size(), m.config.vocab_size);
    const MatrixD b = g.matrix<double>(tokens.size(), m.config.vocab_size);
    const double alpha = g.normal(), beta = g.normal();
    MatrixD mix(a.rows(), a.cols());
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
    const auto ga = backward_to_hidden(m, cache, a), gb = backward_to_hidden(m, cache, b);
    const auto gm = backward_to_hidden(m, cache, mix);
    for (std::size_t l = 0; l < gm.layers.size(); ++l)
      for (std::size_t i = 0; i < gm.layers[l].size(); ++i) {
        const double expect = alpha * ga.layers[l].data()[i] + beta * gb.layers[l].data()[i];
        EXPECT_NEAR(gm.layers[l].data()[i], expect, 1e-10 * (1.0 + std::abs(expect)));
      }
  }
}

// One layer, one token: attention is the identity on v, so
// ∂C/∂h = W_downᵀ · (rmsnorm backward at x_final) · W_headᵀ · ∂C/∂logits.
TEST(Backprop, SingleLayerSingleTokenChain) {
  Gen g(3);
  for (int trial = 0; trial < 5; ++trial) {
    RandomModelOptions o;
    o.seed = g.seed();
    const Model m = make_random_model(make_config(8, 1, 2, 12, 16, 4), o);
    const std::vector<TokenId> tokens{static_cast<TokenId>(g.index(16))};
    ActivationCacheD cache;
    const MatrixD grad_logits = criterion_grad(m, tokens, CriterionKind::kEntropy, cache);
    const auto grads = backward_to_hidden(m, cache, grad_logits);

    const MatrixD head = m.head().cast<double>();
    MatrixD d_norm(1, 8);
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t v = 0; v < 16; ++v) d_norm(0, c) += grad_logits(0, v) * head(v, c);
    // rmsnorm backward written out for one row.
    const auto& x = cache.x_final;
    double ms = 0.0;
    for (std::size_t c = 0; c < 8; ++c) ms += x(0, c) * x(0, c);
    ms = ms / 8.0 + static_cast<double>(m.config.rms_eps);
    const double inv = 1.0 / std::sqrt(ms);
    double dot = 0.0;
    for (std::size_t c = 0; c < 8; ++c) dot += d_norm(0, c) * m.final_norm[c] * x(0, c);
    std::vector<double> dx(8);
    for (std::size_t c = 0; c < 8; ++c) dx[c] = inv * d_norm(0, c) * m.final_norm[c] - inv * inv * inv * x(0, c) * dot / 8.0;
    for (std::size_t i = 0; i < 12; ++i) {
      double expect = 0.0;
      for (std::size_t c = 0; c < 8; ++c) expect += dx[c] * m.layers[0].down(c, i);
      EXPECT_NEAR(grads.layers[0](0, i), expect, 1e-12 + 1e-9 * std::abs(expect));
      const double fd = finite_diff_hidden(m, tokens, CriterionKind::kEntropy, 0, i, 0, 1e-3);
      EXPECT_LE(testing::mixed_error(grads.layers[0](0, i), fd), 1e-3);
    }
  }
}

TEST(Backprop, FullNetworkMatchesFiniteDifferences) {
  for (auto kind : {CriterionKind::kEntropy, CriterionKind::kCrossEntropy}) {
    const Model m = tiny_model(4);
    const auto tokens = testing::random_sequence(8, 64, 4);
    GradCheckOptions o;
    o.samples = 200;
    const auto r = gradient_check(m, tokens, kind, o);
    EXPECT_EQ(r.samples.size(), 200u);
    EXPECT_TRUE(r.passed) << to_string(kind) << " max relative error " << r.max_rel_error;
    EXPECT_LE(r.max_rel_error, 1e-3);
  }
}

TEST(Backprop, SampleCoordinatesCoverBothLayers) {
  const Model m = tiny_model(5);
  const auto tokens = testing::random_sequence(8, 64, 5);
  GradCheckOptions o;
  o.samples = 50;
  const auto r = gradient_check(m, tokens, CriterionKind::kEntropy, o);
  const auto in_layer = [&](std::size_t l) {
    return std::any_of(r.samples.begin(), r.samples.end(), [l](const auto& s) { return s.layer == l; });
  };
  EXPECT_TRUE(in_layer(0));
  EXPECT_TRUE(in_layer(1));
}

TEST(Backprop, CorruptedBackwardIsCaughtInTheRightLayer) {
  const Model m = tiny_model(6);
  const auto tokens = testing::random_sequence(8, 64, 6);
  const HiddenBackwardFn broken = [](const Model& model, const ActivationCache& c, const Matrix& g) {
    auto grads = backward_to_hidden(model, c, g);
    for (float& v : grads.layers[0].data()) v = -v;
    return grads;
  };
  GradCheckOptions o;
  o.samples = 100;
  const auto r = gradient_check(m, tokens, CriterionKind::kEntropy, o, broken);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst.layer, 0u);
}

TEST(Backprop, GradCheckRejectsZeroSamples) {
  const Model m = tiny_model(7);
  GradCheckOptions o;
  o.samples = 0;
  EXPECT_THROW(gradient_check(m, make_random_corpus(1, 4, 64, 1).ids(), CriterionKind::kEntropy, o), RangeError);
}

TEST(Backprop, SelfDistillGradientVanishes) {
  const Model m = tiny_model(8);
  const auto tokens = testing::random_sequence(8, 64, 8);
  ActivationCacheD cache;
  const auto grads = backward_to_hidden(m, cache, criterion_grad(m, tokens, CriterionKind::kSelfDistill, cache));
  for (const auto& l : grads.layers)
    for (double v : l.data()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(finite_diff_hidden(m, tokens, CriterionKind::kSelfDistill, 1, 3, 5, 1e-3), 0.0, 1e-9);
}

TEST(FiniteDiff, ZeroHeadGivesZero) {
  Model m = tiny_model(9);
  std::fill(m.lm_head.data().begin(), m.lm_head.data().end(), 0.0f);
  const auto tokens = testing::random_sequence(6, 64, 9);
  EXPECT_EQ(finite_diff_hidden(m, tokens, CriterionKind::kEntropy, 0, 7, 2, 1e-3), 0.0);
}

// The central difference has an O(ε²) remainder: doubling ε multiplies the
// deviation from the exact derivative by about four.
TEST(FiniteDiff, RemainderIsSecondOrder) {
  const Model m = tiny_model(10);
  const auto tokens = testing::random_sequence(8, 64, 10);
  ActivationCacheD cache;
  const auto grads = backward_to_hidden(m, cache, criterion_grad(m, tokens, CriterionKind::kEntropy, cache));
  Gen g(10);
  int second_order = 0, trials = 0;
  for (; trials < 30; ++trials) {
    const std::size_t l = g.index(2), i = g.index(64), t = g.index(8);
    const double exact = grads.layers[l](t, i);
    const double r1 = std::abs(finite_diff_hidden(m, tokens, CriterionKind::kEntropy, l, i, t, 0.05) - exact);
    const double r2 = std::abs(finite_diff_hidden(m, tokens, CriterionKind::kEntropy, l, i, t, 0.1) - exact);
    const double ratio = r2 / r1;
    if (ratio > 3.0 && ratio < 5.0) ++second_order;
  }
  EXPECT_GE(second_order, 24) << "of " << trials;
}

TEST(FiniteDiff, ArgumentChecks) {
  const Model m = tiny_model(11);
  const auto tokens = testing::random_sequence(4, 64, 1);
  EXPECT_THROW(finite_diff_hidden(m, tokens, CriterionKind::kEntropy, 2, 0, 0, 1e-3), RangeError);
  EXPECT_THROW(finite_diff_hidden(m, tokens, CriterionKind::kEntropy, 0, 64, 0, 1e-3), RangeError);
  EXPECT_THROW(finite_diff_hidden(m, tokens, CriterionKind::kEntropy, 0, 0, 4, 1e-3), RangeError);
  EXPECT_THROW(finite_diff_hidden(m, tokens, CriterionKind::kEntropy, 0, 0, 0, 0.0), RangeError);
}

TEST(Backprop, MismatchedCacheThrows) {
  const Model a = tiny_model(12, 2), b = tiny_model(12, 1);
  const auto fwd = forward(a, make_random_corpus(1, 4, 64, 1).ids());
  EXPECT_THROW(backward_to_hidden(b, fwd.cache, fwd.logits), ShapeError);
  EXPECT_THROW(backward_to_hidden(a, fwd.cache, Matrix(3, 64)), ShapeError);
}

TEST(RelativeError, Definition) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1.0, 0.5), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(-2.0, 2.0), 2.0);
}

}  // namespace
}  // namespace hfprune
