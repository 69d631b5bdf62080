#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "test_util.hpp"
#include "unetseg/error.hpp"
#include "unetseg/losses.hpp"
#include "unetseg/optim.hpp"
#include "unetseg/schedule.hpp"
#include "unetseg/unet.hpp"

using namespace unetseg;

namespace {

std::vector<nn::Parameter<double>> single_param(double value) {
  std::vector<nn::Parameter<double>> params;
  params.push_back({"p", Tensor<double>(Shape{1}, std::vector<double>{value}), 0, false, true});
  return params;
}

LrCurve curve_of(const std::vector<std::pair<double, double>>& points) {
  LrCurve c;
  for (auto [lr, loss] : points) c.records.push_back({lr, loss, loss});
  return c;
}

}  // namespace

TEST(Adam, FirstStepIsSignUpdate) {
  auto params = single_param(1.0);
  params[0].value.mutable_grad()[0] = 0.37;
  AdamState<double> state(params);
  adam_step(params, state, 0.01);
  EXPECT_NEAR(params[0].value.at(0), 1.0 - 0.01 * 0.37 / (0.37 + 1e-8), 1e-15);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameterAndAdvancesStep) {
  auto params = single_param(2.5);
  params[0].value.mutable_grad()[0] = 0.0;
  AdamState<double> state(params);
  adam_step(params, state, 0.1);
  EXPECT_EQ(params[0].value.at(0), 2.5);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, MinimisesQuadratic) {
  auto params = single_param(1.0);
  AdamState<double> state(params);
  for (int i = 0; i < 100; ++i) {
    const double p = params[0].value.at(0);
    params[0].value.mutable_grad()[0] = 2.0 * p;
    adam_step(params, state, 0.1);
  }
  EXPECT_LT(std::abs(params[0].value.at(0)), 0.1);
}

TEST(Adam, NonFiniteGradientRaisesWithoutUpdating) {
  auto params = single_param(1.0);
  params.push_back({"q", Tensor<double>(Shape{1}, std::vector<double>{3.0}), 0, false, true});
  params[0].value.mutable_grad()[0] = 1.0;
  params[1].value.mutable_grad()[0] = std::nan("");
  AdamState<double> state(params);
  try {
    adam_step(params, state, 0.1);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("q"), std::string::npos);
  }
  EXPECT_EQ(params[0].value.at(0), 1.0);
  EXPECT_EQ(state.step, 0u);
}

TEST(Adam, FrozenParametersAndMomentsUntouched) {
  auto params = single_param(1.0);
  params[0].trainable = false;
  params[0].value.mutable_grad()[0] = 5.0;
  AdamState<double> state(params);
  adam_step(params, state, 0.1);
  EXPECT_EQ(params[0].value.at(0), 1.0);
  EXPECT_EQ(state.m[0][0], 0.0);
  EXPECT_EQ(state.v[0][0], 0.0);
}

TEST(Adam, BatchNormExcludedPolicyKeepsBatchNormBitExact) {
  auto model = UNetModel<float>::build(ModelConfig::desk(), 3);
  model->set_trainable(nn::FreezePolicy::unfreeze_all_except_batchnorm);
  auto& reg = model->registry();
  std::vector<std::vector<float>> before_params, before_buffers;
  for (const auto& p : reg.parameters()) before_params.emplace_back(p.value.data().begin(), p.value.data().end());
  for (const auto& b : reg.buffers()) before_buffers.emplace_back(b.value.data().begin(), b.value.data().end());

  Tape<float> tape;
  Tensor<float> loss;
  {
    TapeScope<float> scope(tape);
    auto x = unetseg::testing::random_tensor<float>({2, 3, 32, 32}, 1, 0.0, 1.0);
    Tensor<float> y({2, 1, 32, 32});
    for (std::size_t i = 0; i < y.numel(); i += 3) y.mutable_data()[i] = 1.0f;
    loss = bce_with_logits(model->forward(x, nn::Mode::train), y);
  }
  backward(tape, loss);
  AdamState<float> state(reg.parameters());
  adam_step(reg.parameters(), state, 1e-2);

  bool conv_changed = false;
  for (std::size_t i = 0; i < reg.parameters().size(); ++i) {
    const auto& p = reg.parameters()[i];
    const std::vector<float> now(p.value.data().begin(), p.value.data().end());
    if (p.batch_norm) {
      EXPECT_EQ(now, before_params[i]) << p.name;
    } else if (now != before_params[i]) {
      conv_changed = true;
    }
  }
  EXPECT_TRUE(conv_changed);
  for (std::size_t i = 0; i < reg.buffers().size(); ++i) {
    const auto& b = reg.buffers()[i];
    EXPECT_EQ(std::vector<float>(b.value.data().begin(), b.value.data().end()), before_buffers[i]) << b.name;
  }
}

TEST(Stlr, ExampleValues) {
  ScheduleSpec spec;
  spec.total_iterations = 100;
  spec.lr_max = 0.01;
  EXPECT_EQ(spec.cut(), 10u);
  EXPECT_NEAR(stlr(0, spec), 3.125e-4, 1e-15);
  EXPECT_NEAR(stlr(10, spec), 0.01, 1e-15);
  EXPECT_NEAR(stlr(100, spec), 3.125e-4, 1e-15);
  EXPECT_NEAR(stlr(5, spec), 0.01 * (1.0 + 0.5 * 31.0) / 32.0, 1e-15);
  EXPECT_NEAR(stlr(55, spec), 0.01 * (1.0 + 0.5 * 31.0) / 32.0, 1e-15);
}

TEST(Stlr, SmallHorizonsStayInRange) {
  ScheduleSpec spec;
  spec.lr_max = 1.0;
  spec.total_iterations = 1;
  EXPECT_EQ(stlr(1, spec), 1.0);
  spec.total_iterations = 2;
  EXPECT_EQ(spec.cut(), 1u);
  EXPECT_NEAR(stlr(2, spec), 1.0 / 32.0, 1e-15);
  EXPECT_THROW(stlr(3, spec), ContractError);
}

TEST(Stlr, PropertiesOverRandomConfigs) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> horizon(2, 5000);
  std::uniform_real_distribution<double> frac(0.01, 0.9), ratio(1.5, 100.0), lr(1e-5, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    ScheduleSpec spec;
    spec.total_iterations = horizon(rng);
    spec.cut_frac = frac(rng);
    spec.ratio = ratio(rng);
    spec.lr_max = lr(rng);
    const double lo = spec.lr_max / spec.ratio;
    const std::size_t cut = spec.cut();
    EXPECT_NEAR(stlr(0, spec), lo, 1e-12 * spec.lr_max);
    EXPECT_NEAR(stlr(cut, spec), spec.lr_max, 1e-12 * spec.lr_max);
    EXPECT_NEAR(stlr(spec.total_iterations, spec), lo, 1e-12 * spec.lr_max);
    double prev = stlr(0, spec);
    for (std::size_t t = 1; t <= spec.total_iterations; ++t) {
      const double v = stlr(t, spec);
      ASSERT_GE(v, lo * (1 - 1e-12));
      ASSERT_LE(v, spec.lr_max * (1 + 1e-12));
      if (t <= cut) ASSERT_GE(v, prev);
      else ASSERT_LE(v, prev);
      prev = v;
    }
  }
}

TEST(Stlr, ConstantScheduleAndValidation) {
  ScheduleSpec spec;
  spec.kind = ScheduleKind::constant;
  spec.lr_max = 0.2;
  spec.total_iterations = 10;
  EXPECT_EQ(scheduled_lr(7, spec), 0.2);
  spec.ratio = 1.0;
  EXPECT_THROW(spec.validate(), ConfigError);
  EXPECT_THROW(parse_schedule_kind("cosine"), ConfigError);
}

TEST(LrRange, LinearPointsRecorded) {
  LrRangeOptions opts;
  opts.lr_start = 0.1;
  opts.lr_end = 0.3;
  opts.num_iters = 3;
  std::vector<double> seen;
  auto curve = lr_range_test([&](double lr) { seen.push_back(lr); return 1.0; }, opts);
  ASSERT_EQ(curve.records.size(), 3u);
  EXPECT_NEAR(curve.records[0].lr, 0.1, 1e-15);
  EXPECT_NEAR(curve.records[1].lr, 0.2, 1e-15);
  EXPECT_NEAR(curve.records[2].lr, 0.3, 1e-15);
  EXPECT_EQ(seen.size(), 3u);
}

TEST(LrRange, LogSpacing) {
  LrRangeOptions opts;
  opts.lr_start = 1e-4;
  opts.lr_end = 1.0;
  opts.num_iters = 5;
  opts.spacing = LrSpacing::log;
  auto lrs = lr_range_points(opts);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(lrs[i], std::pow(10.0, -4.0 + i), 1e-12 * lrs[i]);
}

TEST(LrRange, SmoothingIsBiasCorrectedAverage) {
  LrRangeOptions opts;
  opts.num_iters = 4;
  opts.beta = 0.5;
  const std::vector<double> losses{4.0, 2.0, 2.0, 1.0};
  std::size_t i = 0;
  auto curve = lr_range_test([&](double) { return losses[i++]; }, opts);
  ASSERT_EQ(curve.records.size(), 4u);
  EXPECT_DOUBLE_EQ(curve.records[0].smoothed_loss, 4.0);
  EXPECT_DOUBLE_EQ(curve.records[1].smoothed_loss, (0.25 * 4.0 + 0.5 * 2.0) / 0.75);
}

TEST(LrRange, StopsOnDivergence) {
  LrRangeOptions opts;
  opts.num_iters = 50;
  const std::size_t k = 20;
  std::size_t i = 0;
  auto curve = lr_range_test([&](double) { return i++ == k ? 1e6 : 1.0; }, opts);
  EXPECT_LE(curve.records.size(), k + 1);
  i = 0;
  auto nan_curve = lr_range_test([&](double) { return i++ == k ? std::nan("") : 1.0; }, opts);
  EXPECT_EQ(nan_curve.records.size(), k);
}

TEST(LrRange, RejectsBadOptions) {
  LrRangeOptions opts;
  opts.lr_start = 0.5;
  opts.lr_end = 0.1;
  EXPECT_THROW(lr_range_points(opts), ContractError);
}

TEST(PickLr, ExampleCurve) {
  auto c = curve_of({{0.001, 1.0}, {0.01, 0.8}, {0.1, 0.2}, {1.0, 0.9}});
  EXPECT_EQ(pick_lr(c), 0.1);
}

TEST(PickLr, MonotoneIncreasingRaises) {
  auto c = curve_of({{0.001, 0.1}, {0.01, 0.2}, {0.1, 0.3}, {1.0, 0.9}});
  EXPECT_THROW(pick_lr(c), SelectionError);
}

TEST(PickLr, SymmetricValleyPicksDescendingSideSmallerRate) {
  auto c = curve_of({{1e-3, 1.0}, {1e-2, 0.5}, {1e-1, 0.0}, {1.0, 0.5}, {10.0, 1.0}});
  EXPECT_EQ(pick_lr(c), 1e-2);
}

TEST(PickLr, InvariantToLossShiftAndScale) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<double, double>> pts;
    double lr = 1e-4;
    for (int i = 0; i < 12; ++i, lr *= 1.7) pts.emplace_back(lr, u(rng));
    auto base = curve_of(pts);
    auto moved = base;
    for (auto& r : moved.records) r.smoothed_loss = 3.0 * r.smoothed_loss + 7.0;
    EXPECT_EQ(pick_lr(base), pick_lr(moved));
  }
}

TEST(PickLr, CsvRoundTrip) {
  auto c = curve_of({{0.001, 1.0}, {0.01, 0.8}, {0.1, 0.2}});
  const auto path = std::filesystem::temp_directory_path() / "unetseg_lr_curve.csv";
  write_lr_curve_csv(c, path);
  auto back = read_lr_curve_csv(path);
  ASSERT_EQ(back.records.size(), 3u);
  EXPECT_EQ(back.records[2].lr, 0.1);
  EXPECT_EQ(back.records[1].smoothed_loss, 0.8);
  std::filesystem::remove(path);
}
