// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "einlin/einsum_kernel.hpp"
#include "einlin/errors.hpp"
#include "einlin/mu_scaling.hpp"
#include "einlin/structure_space.hpp"
#include "einlin/student.hpp"
#include "einlin/train.hpp"
#include "test_util.hpp"

namespace einlin {
namespace {

double block_rms(std::span<const double> v, std::size_t block, std::size_t size) {
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) s += v[block * size + i] * v[block * size + i];
  return std::sqrt(s / static_cast<double>(size));
}

void expect_blocks_at_target(const EinsumLayer& l, double tol) {
  const auto na = static_cast<std::size_t>(l.a_block_size());
  const auto nb = static_cast<std::size_t>(l.b_block_size());
  for (std::size_t k = 0; k < l.block_rms_a.size(); ++k)
    EXPECT_NEAR(block_rms(l.a_data(), k, na), l.block_rms_a[k], tol);
  for (std::size_t k = 0; k < l.block_rms_b.size(); ++k)
    EXPECT_NEAR(block_rms(l.b_data(), k, nb), l.block_rms_b[k], tol);
}

TEST(FactorIoDims, Presets) {
  auto dims = [](const FactorIoDims& f) {
    return std::vector<std::int64_t>{f.d_in_a, f.d_out_a, f.d_in_b, f.d_out_b};
  };
  EXPECT_EQ(dims(factor_io_dims(instantiate_spec(presets::monarch(), 64, 64))),
            (std::vector<std::int64_t>{8, 8, 8, 8}));
  EXPECT_EQ(dims(factor_io_dims(instantiate_spec(presets::low_rank(), 256, 256))),
            (std::vector<std::int64_t>{256, 16, 16, 256}));
  EXPECT_EQ(dims(factor_io_dims(instantiate_spec(presets::dense(), 256, 256))),
            (std::vector<std::int64_t>{1, 256, 256, 1}));
}

TEST(InitPlan, Values) {
  EXPECT_DOUBLE_EQ(mup_init_sigma(100, 100), 0.1);
  const InitPlan lr = init_plan(instantiate_spec(presets::low_rank(), 256, 256));
  EXPECT_DOUBLE_EQ(lr.sigma_a, 1.0 / 64.0);
  const InitPlan m = init_plan(instantiate_spec(presets::monarch(), 64, 64));
  EXPECT_NEAR(m.sigma_a, std::sqrt(8.0 / 64.0), 1e-15);
  EXPECT_NEAR(m.sigma_b, std::sqrt(8.0 / 64.0), 1e-15);
}

TEST(AdamLrPlan, Values) {
  const LrPlan m = adam_lr_plan(instantiate_spec(presets::monarch(), 64, 64), 0.003, 64);
  EXPECT_NEAR(m.lr_a, 0.012, 1e-15);
  EXPECT_NEAR(m.lr_b, 0.012, 1e-15);
  EXPECT_EQ(m.optimizer, OptimizerKind::kAdam);
  const LrPlan lr = adam_lr_plan(instantiate_spec(presets::low_rank(), 256, 256), 0.003, 64);
  EXPECT_NEAR(lr.lr_a, 0.000375, 1e-15);
  EXPECT_NEAR(lr.lr_b, 0.006, 1e-15);
}

TEST(AdamLrPlan, DenseTransferIsIdentityAtBaseWidth) {
  EXPECT_DOUBLE_EQ(dense_adam_lr(0.003, 64, 64), 0.003);
  EXPECT_DOUBLE_EQ(dense_adam_lr(0.003, 64, 128), 0.0015);
}

TEST(EffectiveRates, MonarchAllOne) {
  const EffectiveRates r = sgd_and_rsgd_exponents(instantiate_spec(presets::monarch(), 64, 64));
  EXPECT_EQ(r.rsgd_a, 1.0);
  EXPECT_EQ(r.mup_sgd_a, 1.0);
  EXPECT_EQ(r.rsgd_b, 1.0);
  EXPECT_EQ(r.mup_sgd_b, 1.0);
}

TEST(EffectiveRates, ConditionPresets) {
  struct Case {
    ThetaVector theta;
    std::int64_t d;
    bool holds;
  };
  const Case cases[] = {
      {presets::low_rank(), 256, true},    {presets::kronecker(), 64, true},
      {presets::monarch(), 64, true},      {presets::tensor_train(), 256, false},
      {presets::btt(), 256, false},        {presets::dense(), 64, false},
  };
  for (const auto& c : cases) {
    const EinsumSpec s = instantiate_spec(c.theta, c.d, c.d);
    EXPECT_EQ(rsgd_mup_condition(s), c.holds) << format_theta(c.theta);
    if (c.holds) {
      const EffectiveRates r = sgd_and_rsgd_exponents(s);
      EXPECT_EQ(r.rsgd_a, r.mup_sgd_a) << format_theta(c.theta);
      EXPECT_EQ(r.rsgd_b, r.mup_sgd_b) << format_theta(c.theta);
    }
  }
}

TEST(EffectiveRates, AgreeWheneverConditionHolds) {
  int agreeing = 0;
  for (std::int64_t xa = 1; xa <= 8; ++xa)
    for (std::int64_t xb = 1; xb <= 4; ++xb)
      for (std::int64_t xab = 1; xab <= 4; ++xab)
        for (std::int64_t ya = 1; ya <= 4; ++ya)
          for (std::int64_t yab = 1; yab <= 4; ++yab)
            for (std::int64_t ab = 1; ab <= 4; ++ab) {
              const EinsumSpec s = make_spec(xa, xb, xab, ya, xa, yab, ab);
              if (!rsgd_mup_condition(s)) continue;
              ++agreeing;
              const EffectiveRates r = sgd_and_rsgd_exponents(s);
              EXPECT_EQ(r.rsgd_a, r.mup_sgd_a);
              EXPECT_EQ(r.rsgd_b, r.mup_sgd_b);
            }
  EXPECT_GT(agreeing, 50);
}

TEST(EffectiveRates, ExactAndPlanOverloadsAgree) {
  for (const ThetaVector& t : {presets::monarch(), presets::low_rank(), presets::btt(), presets::kronecker()}) {
    const EinsumSpec s = instantiate_spec(t, 64, 64);
    const EffectiveRates a = sgd_and_rsgd_exponents(s);
    const EffectiveRates b = sgd_and_rsgd_exponents(s, init_plan(s));
    EXPECT_NEAR(a.rsgd_a, b.rsgd_a, 1e-12 * a.rsgd_a);
    EXPECT_NEAR(a.rsgd_b, b.rsgd_b, 1e-12 * a.rsgd_b);
    EXPECT_NEAR(a.mup_sgd_a, b.mup_sgd_a, 1e-12 * a.mup_sgd_a);
    EXPECT_NEAR(a.mup_sgd_b, b.mup_sgd_b, 1e-12 * a.mup_sgd_b);
  }
}

TEST(MetricBlockCheck, MonarchNearIdentity) {
  const EinsumSpec s = instantiate_spec(presets::monarch(), 16, 16);
  const InitPlan plan = init_plan(s);
  const EinsumLayer l = init_layer(s, plan, 0);
  const MetricBlockReport r = metric_block_check(l, 256);
  // xb = 1, yb = 4, σ_B² = 4/16.
  EXPECT_DOUBLE_EQ(r.predicted_aa, 1.0);
  EXPECT_LE(r.diag_dev_aa, 0.10);
  EXPECT_LE(r.diag_dev_bb, 0.10);
  EXPECT_LE(r.offdiag_aa, 0.10);
  EXPECT_LE(r.offdiag_bb, 0.10);
}

TEST(MetricBlockCheck, ZeroBGivesZeroMetricOnA) {
  const EinsumSpec s = instantiate_spec(presets::monarch(), 16, 16);
  EinsumLayer l = init_layer(s, {init_plan(s).sigma_a, 0.0}, 0);
  const MetricBlockReport r = metric_block_check(l, 8);
  EXPECT_EQ(r.max_abs_aa, 0.0);
  EXPECT_EQ(r.mean_diag_aa, 0.0);
}

TEST(MetricBlockCheck, CapExceeded) {
  const EinsumSpec s = instantiate_spec(presets::monarch(), 64, 64);
  EXPECT_THROW(metric_block_check(init_layer(s, init_plan(s), 0), 1, 0, 1000), CapExceeded);
}

TEST(WeightNormalize, NoOpAfterInit) {
  const EinsumSpec s = instantiate_spec(presets::btt(), 64, 64);
  EinsumLayer l = init_layer(s, init_plan(s), 5);
  const auto a = l.a_declared();
  const auto b = l.b_declared();
  weight_normalize(l);
  EXPECT_LE(testing::max_abs_diff(l.a_declared(), a), 1e-12);
  EXPECT_LE(testing::max_abs_diff(l.b_declared(), b), 1e-12);
}

TEST(WeightNormalize, UndoesScaling) {
  const EinsumSpec s = instantiate_spec(presets::monarch(), 64, 64);
  EinsumLayer l = init_layer(s, init_plan(s), 6);
  const auto a = l.a_declared();
  for (double& v : l.a_data()) v *= 3.0;
  weight_normalize(l);
  EXPECT_LE(testing::max_abs_diff(l.a_declared(), a), 1e-12);
}

TEST(WeightNormalize, MissingTargetsRejected) {
  EinsumLayer l(instantiate_spec(presets::monarch(), 16, 16));
  EXPECT_THROW(weight_normalize(l), ShapeMismatch);
}

TEST(WeightNormalize, HoldsBlockRmsThroughAdamTraining) {
  const EinsumSpec s = instantiate_spec(presets::btt(), 64, 64);
  const InitPlan plan = init_plan(s);
  const LrPlan lr = adam_lr_plan(s, 1e-2, 64);
  EinsumLayer l = init_layer(s, plan, 7);
  std::mt19937_64 rng(7);
  const Matrix target_w = testing::random_matrix(64, 64, rng, 0.125);
  Adam adam;
  for (int step = 0; step < 100; ++step) {
    const Matrix x = testing::random_matrix(32, 64, rng);
    const Matrix y = mvm(l, x);
    Matrix up(32, 64);
    for (std::size_t n = 0; n < 32; ++n)
      for (std::size_t o = 0; o < 64; ++o) {
        double t = 0.0;
        for (std::size_t i = 0; i < 64; ++i) t += target_w(o, i) * x(n, i);
        up(n, o) = 2.0 * (y(n, o) - t) / (32.0 * 64.0);
      }
    const EinsumGrads g = vjp(l, x, up);
    std::vector<ParamView> params{{l.a_data(), lr.lr_a}, {l.b_data(), lr.lr_b}};
    adam.step(params, {g.a, g.b});
    weight_normalize(l);
    expect_blocks_at_target(l, 1e-6);
  }
}

}  // namespace
}  // namespace einlin
