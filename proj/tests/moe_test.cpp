// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "einlin/dense.hpp"
#include "einlin/einsum_kernel.hpp"
#include "einlin/errors.hpp"
#include "einlin/moe.hpp"
#include "einlin/structure_space.hpp"
#include "test_util.hpp"

namespace einlin {
namespace {

using testing::dot;
using testing::max_abs_diff;
using testing::random_matrix;
using testing::relative_error;

constexpr MoeVariant kVariants[] = {MoeVariant::kBtt, MoeVariant::kLowRank, MoeVariant::kDense,
                                    MoeVariant::kFfn};

MoELayer make_layer(MoeVariant v, std::int64_t d, int e, int k, std::uint64_t seed) {
  MoeConfig c;
  c.variant = v;
  c.num_experts = e;
  c.k = k;
  return init_moe(d, c, 1e-3, d, seed);
}

// Smallest gap between the k-th and (k+1)-th logit over all tokens.
double routing_margin(const Matrix& logits, int k) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    std::vector<double> row(logits.row(t).begin(), logits.row(t).end());
    if (k >= static_cast<int>(row.size())) return margin;
    std::sort(row.rbegin(), row.rend());
    margin = std::min(margin, row[static_cast<std::size_t>(k) - 1] - row[static_cast<std::size_t>(k)]);
  }
  return margin;
}

TEST(Routing, TopTwoOfDescendingLogits) {
  Matrix logits(1, 8);
  logits(0, 0) = 2.0;
  logits(0, 1) = 1.0;
  const Routing r = route_logits(logits, 2);
  EXPECT_EQ(r.index, (std::vector<int>{0, 1}));
  EXPECT_NEAR(r.weight[0], std::exp(2.0) / (std::exp(2.0) + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(r.weight[0], 0.7311, 1e-4);
  EXPECT_NEAR(r.weight[1], 0.2689, 1e-4);
}

TEST(Routing, TiesGoToLowerIndex) {
  const Routing r = route_logits(Matrix(1, 8, 0.3), 2);
  EXPECT_EQ(r.index, (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(r.weight[0], 0.5);
  EXPECT_DOUBLE_EQ(r.weight[1], 0.5);
}

TEST(Routing, KEqualsEIsFullSoftmax) {
  std::mt19937_64 rng(1);
  const Matrix logits = random_matrix(5, 6, rng);
  const Routing r = route_logits(logits, 6);
  for (std::size_t t = 0; t < 5; ++t)
    for (int s = 0; s < 6; ++s) {
      const int e = r.index[t * 6 + static_cast<std::size_t>(s)];
      EXPECT_NEAR(r.weight[t * 6 + static_cast<std::size_t>(s)], r.probs(t, static_cast<std::size_t>(e)), 1e-15);
    }
}

TEST(Routing, ExactlyKWeightsSummingToOne) {
  std::mt19937_64 rng(2);
  const Routing r = route_logits(random_matrix(200, 8, rng), 2);
  for (std::size_t t = 0; t < r.tokens; ++t) {
    EXPECT_NE(r.index[2 * t], r.index[2 * t + 1]);
    EXPECT_GT(r.weight[2 * t], 0.0);
    EXPECT_NEAR(r.weight[2 * t] + r.weight[2 * t + 1], 1.0, 1e-7);
  }
  double fs = 0.0;
  double ps = 0.0;
  for (int e = 0; e < 8; ++e) {
    fs += r.f[static_cast<std::size_t>(e)];
    ps += r.p[static_cast<std::size_t>(e)];
  }
  EXPECT_NEAR(fs, 1.0, 1e-12);
  EXPECT_NEAR(ps, 1.0, 1e-12);
}

TEST(Routing, RejectsBadK) {
  EXPECT_THROW(route_logits(Matrix(1, 4), 0), ConfigError);
  EXPECT_THROW(route_logits(Matrix(1, 4), 5), ConfigError);
  MoeConfig c;
  c.num_experts = 4;
  c.k = 5;
  EXPECT_THROW(init_moe(16, c, 1e-3, 16, 0), ConfigError);
}

TEST(BalanceLoss, Values) {
  const std::vector<double> u(8, 1.0 / 8.0);
  EXPECT_NEAR(load_balance_loss(u, u), 1.0, 1e-15);
  std::vector<double> f(8, 0.0);
  f[0] = 1.0;
  EXPECT_DOUBLE_EQ(load_balance_loss(f, f), 8.0);
  EXPECT_DOUBLE_EQ(load_balance_loss(std::vector<double>{1.0}, std::vector<double>{1.0}), 1.0);
  EXPECT_THROW(load_balance_loss(u, std::vector<double>(7, 0.1)), ShapeMismatch);
}

TEST(BalanceLoss, NearOneOrAboveUnderRandomRouting) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int e = 2 + static_cast<int>(rng() % 15);
    const int k = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::min(e, 4)));
    const double scale = 0.1 + 3.0 * static_cast<double>(rng() % 1000) / 1000.0;
    const Routing r = route_logits(random_matrix(512, static_cast<std::size_t>(e), rng, scale), k);
    EXPECT_GE(load_balance_loss(r.f, r.p), 1.0 - 0.02) << "E=" << e << " k=" << k;
  }
}

TEST(MoeForward, SingleExpertIsItsMvm) {
  std::mt19937_64 rng(4);
  const MoELayer l = make_layer(MoeVariant::kBtt, 16, 1, 1, 4);
  const Matrix x = random_matrix(6, 16, rng);
  EXPECT_EQ(moe_forward(l, x), mvm(l.einsum_experts[0], x));
}

TEST(MoeForward, FrozenGateMatchesRankTwoBtt) {
  std::mt19937_64 rng(5);
  const MoELayer l = make_layer(MoeVariant::kBtt, 16, 8, 2, 5);
  const std::size_t tokens = 7;
  Routing r;
  r.tokens = tokens;
  r.k = 2;
  r.num_experts = 8;
  for (std::size_t t = 0; t < tokens; ++t) {
    r.index.insert(r.index.end(), {2, 5});
    r.weight.insert(r.weight.end(), {0.6, 0.4});
  }
  const Matrix x = random_matrix(tokens, 16, rng);
  const Matrix y = moe_forward_routed(l, x, r);

  // Stack experts 2 and 5 along the rank index, folding the weights into B.
  const EinsumSpec& es = l.einsum_experts[2].spec();
  ASSERT_EQ(es.ab, 1);
  EinsumSpec s2 = es;
  s2.ab = 2;
  EinsumLayer stacked(s2);
  const EinsumLayer& e2 = l.einsum_experts[2];
  const EinsumLayer& e5 = l.einsum_experts[5];
  for (std::int64_t al = 0; al < es.xa; ++al)
    for (std::int64_t ga = 0; ga < es.xab; ++ga)
      for (std::int64_t de = 0; de < es.ya; ++de)
        for (std::int64_t ph = 0; ph < es.yab; ++ph) {
          stacked.a(al, ga, de, ph, 0) = e2.a(al, ga, de, ph, 0);
          stacked.a(al, ga, de, ph, 1) = e5.a(al, ga, de, ph, 0);
        }
  for (std::int64_t be = 0; be < es.xb; ++be)
    for (std::int64_t ga = 0; ga < es.xab; ++ga)
      for (std::int64_t ep = 0; ep < es.yb; ++ep)
        for (std::int64_t ph = 0; ph < es.yab; ++ph) {
          stacked.b(be, ga, ep, ph, 0) = 0.6 * e2.b(be, ga, ep, ph, 0);
          stacked.b(be, ga, ep, ph, 1) = 0.4 * e5.b(be, ga, ep, ph, 0);
        }
  const Matrix w = materialize(stacked);
  Matrix expect(tokens, 16);
  for (std::size_t n = 0; n < tokens; ++n)
    for (std::size_t o = 0; o < 16; ++o)
      for (std::size_t i = 0; i < 16; ++i) expect(n, o) += w(o, i) * x(n, i);
  EXPECT_LE(max_abs_diff(y.flat(), expect.flat()), 1e-10);
}

TEST(MoeForward, ZeroInputGivesZeroOutput) {
  for (MoeVariant v : kVariants) {
    const Matrix y = moe_forward(make_layer(v, 16, 4, 2, 6), Matrix(3, 16));
    for (double val : y.flat()) EXPECT_EQ(val, 0.0) << to_string(v);
  }
}

TEST(MoeForward, ShapeMismatch) {
  EXPECT_THROW(moe_forward(make_layer(MoeVariant::kBtt, 16, 4, 2, 0), Matrix(2, 15)), ShapeMismatch);
}

TEST(MoeForward, MacsAreGatePlusKExperts) {
  std::mt19937_64 rng(7);
  for (MoeVariant v : kVariants) {
    for (int k : {1, 2, 3}) {
      const MoELayer l = make_layer(v, 16, 4, k, 7);
      const std::size_t tokens = 9;
      MacCounter c;
      moe_forward(l, random_matrix(tokens, 16, rng), nullptr, &c);
      EXPECT_EQ(moe_forward_macs(l), 16 * 4 + k * expert_macs(l)) << to_string(v);
      EXPECT_EQ(c.macs, tokens * static_cast<std::uint64_t>(moe_forward_macs(l))) << to_string(v);
    }
  }
}

TEST(MoeForward, ExpertMacsPerVariant) {
  EXPECT_EQ(expert_macs(make_layer(MoeVariant::kBtt, 64, 8, 2, 0)), 1024);
  EXPECT_EQ(expert_macs(make_layer(MoeVariant::kLowRank, 64, 8, 2, 0)), 2 * 64 * 8);
  EXPECT_EQ(expert_macs(make_layer(MoeVariant::kDense, 64, 8, 2, 0)), 64 * 64);
  EXPECT_EQ(expert_macs(make_layer(MoeVariant::kFfn, 64, 8, 2, 0)), 2 * 64 * 64);
}

TEST(MoeBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; checked < 24 && trial < 200; ++trial) {
    const MoeVariant v = kVariants[trial % 4];
    MoELayer l = make_layer(v, 12, 4, 2, rng());
    // Larger gate weights spread the logits so routing is stable under h.
    for (double& w : l.gate.linear.w) w *= 20.0;
    Matrix x = random_matrix(6, 12, rng);
    const Matrix up = random_matrix(6, 12, rng);
    const double balance_scale = 0.37;
    const Routing probe = gate_forward(l.gate, x);
    if (routing_margin(probe.logits, 2) < 100.0 * h) continue;

    MoeCache cache;
    moe_forward(l, x, &cache);
    const MoeGrads g = moe_backward(l, cache, up, balance_scale);
    auto loss = [&] {
      const Routing r = gate_forward(l.gate, x);
      return dot(moe_forward_routed(l, x, r).flat(), up.flat()) + balance_scale * load_balance_loss(r.f, r.p);
    };
    SCOPED_TRACE(to_string(v));
    EXPECT_LE(relative_error(g.x.flat(), testing::finite_difference(x.flat(), loss, h)), 1e-5);
    // Parameter gradients are compared as one vector: an expert that gets
    // almost no routing weight has a gradient near the difference noise floor.
    std::vector<double> analytic(g.gate.begin(), g.gate.end());
    std::vector<double> numeric = testing::finite_difference(std::span<double>(l.gate.linear.w), loss, h);
    auto append = [&](const std::vector<double>& a, std::span<double> values) {
      const auto fd = testing::finite_difference(values, loss, h);
      analytic.insert(analytic.end(), a.begin(), a.end());
      numeric.insert(numeric.end(), fd.begin(), fd.end());
    };
    for (std::size_t e = 0; e < 4; ++e) {
      if (v == MoeVariant::kBtt || v == MoeVariant::kLowRank) {
        append(g.a[e], l.einsum_experts[e].a_data());
        append(g.b[e], l.einsum_experts[e].b_data());
      } else {
        append(g.up[e], l.up[e].w);
        if (v == MoeVariant::kFfn) append(g.down[e], l.down[e].w);
      }
    }
    EXPECT_LE(relative_error(analytic, numeric), 1e-5);
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(CombinationCount, Values) {
  EXPECT_EQ(expert_combination_count(8, 1, 1).exact, "28");
  EXPECT_EQ(expert_combination_count(8, 1, 6).exact, "481890304");
  EXPECT_EQ(expert_combination_count(2, 5, 6).exact, "1");
  const CombinationCount big = expert_combination_count(16, 12, 6);
  EXPECT_NEAR(big.log10, 72.0 * std::log10(120.0), 1e-9);
  EXPECT_EQ(big.exact.size(), static_cast<std::size_t>(std::floor(big.log10)) + 1);
  EXPECT_THROW(expert_combination_count(1, 1, 1), OutOfRange);
}

TEST(MoeVariant, ParseNames) {
  EXPECT_EQ(parse_moe_variant("btt"), MoeVariant::kBtt);
  EXPECT_EQ(parse_moe_variant("low-rank"), MoeVariant::kLowRank);
  EXPECT_EQ(parse_moe_variant("dense"), MoeVariant::kDense);
  EXPECT_EQ(parse_moe_variant("ffn"), MoeVariant::kFfn);
  EXPECT_THROW(parse_moe_variant("switch"), ConfigError);
}

}  // namespace
}  // namespace einlin
