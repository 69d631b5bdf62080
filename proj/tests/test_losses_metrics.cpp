#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "unetseg/error.hpp"
#include "unetseg/grad_check.hpp"
#include "unetseg/losses.hpp"
#include "unetseg/metrics.hpp"

using namespace unetseg;
using unetseg::testing::random_tensor;

namespace {

Tensor<double> scalar_pair(double v) { return Tensor<double>(Shape{1}, std::vector<double>{v}); }

Mask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w, double density) {
  std::bernoulli_distribution on(density);
  Mask m(h, w);
  for (auto& v : m.data) v = on(rng);
  return m;
}

// Independent counting oracle: walks pixel coordinates, no shared helpers.
struct OracleCounts {
  long inter = 0, uni = 0, pred = 0, truth = 0;
};

OracleCounts oracle(const Mask& p, const Mask& t) {
  OracleCounts c;
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) {
      const int a = p.at(y, x), b = t.at(y, x);
      c.inter += a & b;
      c.uni += a | b;
      c.pred += a;
      c.truth += b;
    }
  }
  return c;
}

}  // namespace

TEST(Bce, ClosedFormValues) {
  EXPECT_NEAR(bce_with_logits(scalar_pair(0), scalar_pair(1)).item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_with_logits(scalar_pair(0), scalar_pair(0)).item(), std::log(2.0), 1e-15);
  // softplus(10) = 10 + log1p(exp(-10))
  EXPECT_NEAR(bce_with_logits(scalar_pair(-10), scalar_pair(1)).item(), 10.000045398899218, 1e-12);
}

TEST(Bce, RejectsNonBinaryTargets) {
  EXPECT_THROW(bce_with_logits(scalar_pair(0), scalar_pair(0.5)), ContractError);
  EXPECT_THROW(bce_with_logits(Tensor<double>(Shape{2}), Tensor<double>(Shape{3})), ShapeError);
}

TEST(Bce, SymmetryUnderLabelFlip) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto z = random_tensor(Shape{1, 1, 4, 4}, trial, -20, 20);
    Tensor<double> t(z.shape()), neg_z(z.shape()), flipped(z.shape());
    for (std::size_t i = 0; i < z.numel(); ++i) {
      t.mutable_data()[i] = rng() % 2;
      neg_z.mutable_data()[i] = -z.at(i);
      flipped.mutable_data()[i] = 1 - t.at(i);
    }
    EXPECT_NEAR(bce_with_logits(z, t).item(), bce_with_logits(neg_z, flipped).item(), 1e-12);
  }
}

TEST(Bce, GradCheck) {
  for (int seed = 0; seed < 20; ++seed) {
    auto z = random_tensor(Shape{1, 1, 4, 4}, seed, -4, 4);
    Tensor<double> t(z.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) t.mutable_data()[i] = (i + seed) % 2;
    auto r = grad_check([&](const auto& in) { return bce_with_logits(in[0], t); }, {z});
    EXPECT_TRUE(r.passed) << r.summary();
  }
}

TEST(SoftJaccard, LimitCases) {
  Tensor<double> z(Shape{4}, std::vector<double>{50, 50, -50, -50});
  Tensor<double> t(Shape{4}, std::vector<double>{1, 1, 0, 0});
  EXPECT_NEAR(soft_jaccard_loss(z, t).item(), 0.0, 1e-12);
  Tensor<double> all_neg(Shape{4}, -50.0);
  EXPECT_NEAR(soft_jaccard_loss(all_neg, Tensor<double>(Shape{4}, 0.0)).item(), 0.0, 1e-12);
}

TEST(SoftJaccard, MatchesScalarFormulaAndGradient) {
  for (int seed = 0; seed < 20; ++seed) {
    auto z = random_tensor(Shape{1, 1, 4, 4}, seed, -3, 3);
    Tensor<double> t(z.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) t.mutable_data()[i] = (i * 3 + seed) % 4 == 0;
    double inter = 0, sp = 0, st = 0;
    for (std::size_t i = 0; i < z.numel(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z.at(i)));
      inter += p * t.at(i);
      sp += p;
      st += t.at(i);
    }
    const double expected = 1.0 - (inter + 1.0) / (sp + st - inter + 1.0);
    EXPECT_NEAR(soft_jaccard_loss(z, t).item(), expected, 1e-12);
    auto r = grad_check([&](const auto& in) { return soft_jaccard_loss(in[0], t); }, {z});
    EXPECT_TRUE(r.passed) << r.summary();
  }
}

TEST(SoftJaccard, HardProbabilitiesWithoutSmoothingEqualOneMinusJaccard) {
  std::mt19937_64 rng(9);
  const double inf = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 200; ++trial) {
    Mask p = random_mask(rng, 6, 6, 0.4), t = random_mask(rng, 6, 6, 0.4);
    if (oracle(p, t).uni == 0) continue;
    Tensor<double> z(Shape{36}), target(Shape{36});
    for (std::size_t i = 0; i < 36; ++i) {
      z.mutable_data()[i] = p.data[i] ? inf : -inf;
      target.mutable_data()[i] = t.data[i];
    }
    EXPECT_EQ(soft_jaccard_loss(z, target, 0.0).item(), 1.0 - jaccard(p, t));
  }
}

TEST(Metrics, JaccardDiceExamples) {
  Mask a(1, 3), b(1, 3);
  a.data = {1, 1, 0};
  b.data = {0, 1, 1};
  EXPECT_DOUBLE_EQ(jaccard(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(dice(a, b), 0.5);
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(dice(a, a), 1.0);
  Mask c(1, 3);
  c.data = {0, 0, 1};
  EXPECT_EQ(jaccard(a, c), 0.0);
  EXPECT_EQ(jaccard(Mask(2, 2), Mask(2, 2)), 1.0);
  EXPECT_EQ(dice(Mask(2, 2), Mask(2, 2)), 1.0);
  EXPECT_THROW(jaccard(Mask(2, 2), Mask(2, 3)), ShapeError);
  EXPECT_THROW(dice(Mask(2, 2), Mask(3, 2)), ShapeError);
}

TEST(Metrics, DiceJaccardIdentity) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    Mask p = random_mask(rng, 8, 8, 0.3), t = random_mask(rng, 8, 8, 0.5);
    const double j = jaccard(p, t);
    EXPECT_NEAR(dice(p, t), 2 * j / (1 + j), 1e-12);
  }
}

TEST(Metrics, ThresholdJaccard) {
  const std::vector<double> single{0.8539};
  EXPECT_DOUBLE_EQ(threshold_jaccard(single), 0.8539);
  const std::vector<double> below{0.64};
  EXPECT_EQ(threshold_jaccard(below), 0.0);
  const std::vector<double> pair{0.9, 0.5};
  EXPECT_DOUBLE_EQ(threshold_jaccard(pair), 0.45);
  EXPECT_THROW(threshold_jaccard(std::vector<double>{}), ContractError);
}

TEST(Metrics, ThresholdJaccardBoundedByMean) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> js(1 + rng() % 10);
    for (auto& j : js) j = u(rng);
    const double cut = u(rng);
    double mean = 0;
    for (double j : js) mean += j;
    mean /= static_cast<double>(js.size());
    const double tj = threshold_jaccard(js, cut);
    EXPECT_GE(tj, 0.0);
    EXPECT_LE(tj, mean + 1e-15);
  }
}

TEST(Metrics, Binarize) {
  Image probs(1, 1, 3);
  probs.data = {0.49f, 0.5f, 0.51f};
  EXPECT_EQ(binarize(probs).data, (std::vector<std::uint8_t>{0, 1, 1}));
  Image zeros(1, 2, 2, 0.0f);
  EXPECT_EQ(binarize(zeros).count(), 0u);
  EXPECT_EQ(binarize(zeros, 0.0).count(), 4u);
}

TEST(Metrics, ReportAggregates) {
  auto r = make_report({{"a", 0.9, 2 * 0.9 / 1.9}, {"b", 0.7, 2 * 0.7 / 1.7}, {"c", 0.3, 2 * 0.3 / 1.3}});
  EXPECT_NEAR(r.dataset_jaccard, 0.6333333333333333, 1e-12);
  EXPECT_NEAR(r.dataset_threshold_jaccard, (0.9 + 0.7) / 3, 1e-12);
  EXPECT_LE(r.dataset_threshold_jaccard, r.dataset_jaccard);
}
