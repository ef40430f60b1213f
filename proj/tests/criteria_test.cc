#include <gtest/gtest.h>

#include "hfprune/criteria.h"
#include "hfprune/error.h"
#include "hfprune/numerics.h"
#include "support/generators.h"

namespace hfprune {
namespace {

using testing::central_diff;
using testing::Gen;
using testing::mixed_error;

TEST(Criteria, NamesRoundTrip) {
  for (auto k : {CriterionKind::kEntropy, CriterionKind::kCrossEntropy, CriterionKind::kSelfDistill}) {
    EXPECT_EQ(parse_criterion(to_string(k)), k);
  }
  EXPECT_EQ(parse_criterion("IE"), CriterionKind::kEntropy);
  EXPECT_THROW(parse_criterion("mse"), RangeError);
}

TEST(Criteria, OnlyCrossEntropyNeedsLabels) {
  EXPECT_FALSE(requires_labels(CriterionKind::kEntropy));
  EXPECT_TRUE(requires_labels(CriterionKind::kCrossEntropy));
  EXPECT_FALSE(requires_labels(CriterionKind::kSelfDistill));
}

TEST(Criteria, NextTokenTargets) {
  const std::vector<TokenId> tokens{4, 7, 1};
  EXPECT_EQ(next_token_targets(tokens), (std::vector<TokenId>{7, 1, kIgnoreTarget}));
}

TEST(Criteria, EntropyOfUniformLogits) {
  const MatrixD logits(3, 8, 0.25);
  const auto c = evaluate(CriterionKind::kEntropy, logits);
  EXPECT_NEAR(c.value, 3.0, 1e-12);
  EXPECT_EQ(c.counted_positions, 3u);
  for (double v : c.grad_logits.data()) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Criteria, SelfDistillAgainstItselfIsFlat) {
  Gen g(1);
  const MatrixD logits = g.matrix<double>(5, 12, 3.0);
  CriterionInputs<double> in;
  in.teacher_logits = &logits;
  const auto c = evaluate(CriterionKind::kSelfDistill, logits, in);
  EXPECT_NEAR(c.value, 0.0, 1e-15);
  for (double v : c.grad_logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(Criteria, CrossEntropySaturatedAtTargets) {
  const std::vector<TokenId> tokens{0, 1, 2, 3};
  const auto targets = next_token_targets(tokens);
  MatrixD logits(4, 4, 0.0);
  for (std::size_t t = 0; t < 3; ++t) logits(t, targets[t]) = 60.0;
  CriterionInputs<double> in;
  in.targets = targets;
  const auto c = evaluate(CriterionKind::kCrossEntropy, logits, in);
  EXPECT_EQ(c.counted_positions, 3u);
  EXPECT_NEAR(c.value, 0.0, 1e-12);
  for (double v : c.grad_logits.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  EXPECT_EQ(c.per_position_values[3], 0.0);
}

TEST(Criteria, MissingInputsThrow) {
  const MatrixD logits(2, 4, 0.0);
  EXPECT_THROW(evaluate(CriterionKind::kCrossEntropy, logits), RangeError);
  EXPECT_THROW(evaluate(CriterionKind::kSelfDistill, logits), RangeError);
  const std::vector<TokenId> short_targets{1};
  CriterionInputs<double> in;
  in.targets = short_targets;
  EXPECT_THROW(evaluate(CriterionKind::kCrossEntropy, logits, in), ShapeError);
  const MatrixD wrong(3, 4, 0.0);
  CriterionInputs<double> sd;
  sd.teacher_logits = &wrong;
  EXPECT_THROW(evaluate(CriterionKind::kSelfDistill, logits, sd), ShapeError);
}

// grad_logits differentiates the sequence mean, for every kind.
TEST(Criteria, GradientMatchesFiniteDifferencesOfSequenceValue) {
  Gen g(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + g.index(4), v = 2 + g.index(10);
    const auto kind = static_cast<CriterionKind>(g.index(3));
    const MatrixD logits = g.matrix<double>(rows, v, 2.0);
    const MatrixD teacher = g.matrix<double>(rows, v, 2.0);
    const auto tokens = g.tokens(rows, static_cast<std::uint32_t>(v));
    const auto targets = next_token_targets(tokens);
    CriterionInputs<double> in;
    in.targets = targets;
    in.teacher_logits = &teacher;
    if (kind == CriterionKind::kCrossEntropy && rows == 1) continue;
    const auto c = evaluate(kind, logits, in);
    const auto f = [&](const std::vector<double>& x) { return evaluate(kind, MatrixD(rows, v, x), in).value; };
    const std::vector<double> x(logits.data().begin(), logits.data().end());
    const std::size_t i = g.index(x.size());
    EXPECT_LE(mixed_error(c.grad_logits.data()[i], central_diff(f, x, i)), 1e-3)
        << to_string(kind) << " element " << i;
  }
}

}  // namespace
}  // namespace hfprune
