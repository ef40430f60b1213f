#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "hfprune/backprop.h"
#include "hfprune/digest.h"
#include "hfprune/error.h"
#include "hfprune/scoring.h"
#include "support/generators.h"

namespace hfprune {
namespace {

using testing::Gen;

Model tiny_model(std::uint64_t seed, float weight_scale = 1.0f) {
  RandomModelOptions o;
  o.seed = seed;
  o.weight_scale = weight_scale;
  return make_random_model(make_config(16, 2, 2, 24, 32, 16), o);
}

std::vector<std::size_t> argsort(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return idx;
}

class ThreadsEnv {
 public:
  explicit ThreadsEnv(const char* value) {
    if (const char* old = std::getenv("HFPRUNE_THREADS")) saved_ = old;
    setenv("HFPRUNE_THREADS", value, 1);
  }
  ~ThreadsEnv() {
    if (saved_.empty()) {
      unsetenv("HFPRUNE_THREADS");
    } else {
      setenv("HFPRUNE_THREADS", saved_.c_str(), 1);
    }
  }

 private:
  std::string saved_;
};

TEST(Aggregation, NamesRoundTrip) {
  EXPECT_EQ(parse_aggregation("abs-pos"), Aggregation::kAbsPerPosition);
  EXPECT_EQ(parse_aggregation(to_string(Aggregation::kAbsPerSequence)), Aggregation::kAbsPerSequence);
  EXPECT_THROW(parse_aggregation("sum"), RangeError);
}

TEST(Scoring, ReportShapeAndMetadata) {
  const Model m = tiny_model(1);
  const auto calib = make_random_corpus(6, 5, 32, 1);
  const auto r = accumulate_scores(m, calib, CriterionKind::kEntropy);
  ASSERT_EQ(r.layers.size(), 2u);
  EXPECT_EQ(r.layers[0].size(), 24u);
  EXPECT_EQ(r.token_count, 30u);
  EXPECT_EQ(r.sequence_count, 6u);
  EXPECT_EQ(r.normalizer, "positions");
  EXPECT_EQ(r.model_digest, model_digest(m));
  EXPECT_EQ(r.calib_digest, corpus_digest(calib));
  for (const auto& l : r.layers)
    for (double s : l) EXPECT_GE(s, 0.0);
}

TEST(Scoring, MatchesDirectRecomputation) {
  const Model m = tiny_model(2);
  const auto calib = make_random_corpus(1, 4, 32, 2);
  for (auto agg : {Aggregation::kAbsPerPosition, Aggregation::kAbsPerSequence}) {
    ScoringOptions o;
    o.aggregation = agg;
    const auto r = accumulate_scores(m, calib, CriterionKind::kEntropy, o);
    const auto fwd = forward(m, calib.sequence(0));
    const auto crit = evaluate(CriterionKind::kEntropy, fwd.logits);
    const auto grads = backward_to_hidden(m, fwd.cache, crit.grad_logits);
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t i = 0; i < 24; ++i) {
        double pos = 0.0, seq = 0.0;
        for (std::size_t t = 0; t < 4; ++t) {
          const double gh = static_cast<double>(grads.layers[l](t, i)) * fwd.cache.layers[l].h(t, i);
          pos += std::abs(gh);
          seq += gh;
        }
        const double expect = (agg == Aggregation::kAbsPerPosition ? pos : std::abs(seq)) / 4.0;
        EXPECT_NEAR(r.layers[l][i], expect, 1e-6);
      }
  }
}

TEST(Scoring, DeadNeuronScoresExactlyZero) {
  Model m = tiny_model(3);
  // Zeroing a row of up silences the neuron at every position.
  auto row = m.layers[1].up.row(7);
  std::fill(row.begin(), row.end(), 0.0f);
  const auto calib = make_random_corpus(4, 6, 32, 3);
  for (auto kind : {CriterionKind::kEntropy, CriterionKind::kCrossEntropy, CriterionKind::kSelfDistill}) {
    EXPECT_EQ(accumulate_scores(m, calib, kind).layers[1][7], 0.0) << to_string(kind);
  }
  EXPECT_EQ(taylor_estimate_delta(m, calib.sequence(0), CriterionKind::kEntropy, 1, 7), 0.0);
  EXPECT_EQ(exact_ablation_delta(m, calib.sequence(0), CriterionKind::kEntropy, 1, 7), 0.0);
}

TEST(Scoring, SelfDistillScoresVanish) {
  Gen g(4);
  for (int trial = 0; trial < 5; ++trial) {
    const Model m = g.model();
    const auto calib = make_random_corpus(4, 6, m.config.vocab_size, g.seed());
    EXPECT_LE(accumulate_scores(m, calib, CriterionKind::kSelfDistill).max_score(), 1e-6);
    EXPECT_GT(accumulate_scores(m, calib, CriterionKind::kEntropy).max_score(), 0.0);
  }
}

TEST(Scoring, InvariantToSequenceOrder) {
  const Model m = tiny_model(5);
  const auto calib = make_random_corpus(9, 6, 32, 5);
  Gen g(5);
  std::vector<std::size_t> order(9);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), g.engine());
  std::vector<TokenId> ids;
  for (auto s : order) ids.insert(ids.end(), calib.sequence(s).begin(), calib.sequence(s).end());
  const TokenCorpus shuffled(6, ids);
  const auto a = accumulate_scores(m, calib, CriterionKind::kEntropy);
  const auto b = accumulate_scores(m, shuffled, CriterionKind::kEntropy);
  EXPECT_EQ(a.layers, b.layers);
}

TEST(Scoring, InvariantToDuplicatingTheCalibrationSet) {
  const Model m = tiny_model(6);
  const auto calib = make_random_corpus(5, 6, 32, 6);
  std::vector<TokenId> ids(calib.ids().begin(), calib.ids().end());
  ids.insert(ids.end(), calib.ids().begin(), calib.ids().end());
  const auto a = accumulate_scores(m, calib, CriterionKind::kCrossEntropy);
  const auto b = accumulate_scores(m, TokenCorpus(6, ids), CriterionKind::kCrossEntropy);
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (std::size_t i = 0; i < a.layers[l].size(); ++i)
      EXPECT_NEAR(b.layers[l][i], a.layers[l][i], 1e-12 * (1.0 + a.layers[l][i]));
}

TEST(Scoring, InvariantToWorkerCount) {
  const Model m = tiny_model(7);
  const auto calib = make_random_corpus(11, 6, 32, 7);
  ImportanceReport one, four;
  {
    ThreadsEnv env("1");
    one = accumulate_scores(m, calib, CriterionKind::kEntropy);
  }
  {
    ThreadsEnv env("4");
    four = accumulate_scores(m, calib, CriterionKind::kEntropy);
  }
  EXPECT_EQ(one, four);
}

TEST(Scoring, CriterionScaleIsLinearAndPreservesRanking) {
  const Model m = tiny_model(8);
  const auto calib = make_random_corpus(4, 8, 32, 8);
  const auto base = accumulate_scores(m, calib, CriterionKind::kEntropy);
  for (double factor : {2.0, 0.5}) {
    ScoringOptions o;
    o.criterion_scale = factor;
    const auto scaled = accumulate_scores(m, calib, CriterionKind::kEntropy, o);
    for (std::size_t l = 0; l < base.layers.size(); ++l) {
      for (std::size_t i = 0; i < base.layers[l].size(); ++i) EXPECT_EQ(scaled.layers[l][i], factor * base.layers[l][i]);
      EXPECT_EQ(argsort(scaled.layers[l]), argsort(base.layers[l]));
    }
  }
  ScoringOptions o;
  o.criterion_scale = std::log(2.0);
  const auto nats = accumulate_scores(m, calib, CriterionKind::kEntropy, o);
  for (std::size_t l = 0; l < base.layers.size(); ++l) {
    for (std::size_t i = 0; i < base.layers[l].size(); ++i)
      EXPECT_NEAR(nats.layers[l][i], std::log(2.0) * base.layers[l][i], 1e-5 * base.layers[l][i] + 1e-30);
    const auto a = argsort(nats.layers[l]), b = argsort(base.layers[l]);
    // Only swaps between scores equal to within float rounding are allowed.
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (a[j] != b[j]) EXPECT_NEAR(base.layers[l][a[j]], base.layers[l][b[j]], 1e-5 * base.layers[l][b[j]]);
    }
  }
}

TEST(Scoring, InputErrors) {
  const Model m = tiny_model(9);
  EXPECT_THROW(accumulate_scores(m, TokenCorpus(), CriterionKind::kEntropy), RangeError);
  EXPECT_THROW(accumulate_scores(m, TokenCorpus(2, {0, 1, 2, 32}), CriterionKind::kEntropy), ShapeError);
  EXPECT_THROW(accumulate_scores(m, make_random_corpus(1, 17, 2, 1), CriterionKind::kEntropy), ShapeError);
  ScoringOptions o;
  o.criterion_scale = 0.0;
  EXPECT_THROW(accumulate_scores(m, make_random_corpus(1, 4, 32, 1), CriterionKind::kEntropy, o), RangeError);
}

// Halving ε in h → (1 − ε)h quarters |exact − ε·estimate| when the estimate
// is first-order exact.
TEST(Taylor, ScaledAblationResidualIsSecondOrder) {
  const Model m = tiny_model(10);
  const auto calib = make_random_corpus(4, 8, 32, 10);
  Gen g(10);
  int ok = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t l = g.index(2), i = g.index(24);
    const auto seq = calib.sequence(g.index(4));
    const double est = taylor_estimate_delta(m, seq, CriterionKind::kEntropy, l, i);
    const double e = 1e-2;
    const double r1 = std::abs(exact_scaled_ablation_delta(m, seq, CriterionKind::kEntropy, l, i, e) - e * est);
    const double r2 = std::abs(exact_scaled_ablation_delta(m, seq, CriterionKind::kEntropy, l, i, e / 2) - e / 2 * est);
    const double ratio = r1 / r2;
    if (ratio >= 2.0 && ratio <= 8.0) ++ok;
  }
  EXPECT_GE(ok, 27);
}

TEST(Taylor, NearLinearModelMatchesExactAblation) {
  RandomModelOptions o;
  o.seed = 11;
  o.weight_scale = 1e-2f;
  const Model m = make_random_model(make_config(16, 1, 2, 24, 32, 16), o);
  const auto seq = testing::random_sequence(8, 32, 11);
  for (std::size_t i = 0; i < 24; ++i) {
    const double est = taylor_estimate_delta(m, seq, CriterionKind::kEntropy, 0, i);
    const double exact = exact_ablation_delta(m, seq, CriterionKind::kEntropy, 0, i);
    EXPECT_LE(relative_error(est, exact), 1e-3) << "neuron " << i;
  }
}

TEST(Taylor, FullScaleAblationEqualsZeroing) {
  const Model m = tiny_model(12);
  const auto seq = testing::random_sequence(6, 32, 12);
  EXPECT_EQ(exact_scaled_ablation_delta(m, seq, CriterionKind::kEntropy, 0, 3, 1.0),
            exact_ablation_delta(m, seq, CriterionKind::kEntropy, 0, 3));
  EXPECT_EQ(exact_scaled_ablation_delta(m, seq, CriterionKind::kEntropy, 0, 3, 0.0), 0.0);
  EXPECT_THROW(exact_ablation_delta(m, seq, CriterionKind::kEntropy, 2, 0), RangeError);
  EXPECT_THROW(taylor_estimate_delta(m, seq, CriterionKind::kEntropy, 0, 24), RangeError);
}

}  // namespace
}  // namespace hfprune
