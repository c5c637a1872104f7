// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "einlin/errors.hpp"
#include "einlin/scaling_laws.hpp"

namespace einlin {
namespace {

std::vector<FrontierPoint> law_points(double l_inf, double b, double a, double c_lo, double c_hi, int n,
                                      double noise = 0.0, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> eps(0.0, noise);
  std::vector<FrontierPoint> pts;
  for (int i = 0; i < n; ++i) {
    const double c = c_lo * std::pow(c_hi / c_lo, static_cast<double>(i) / (n - 1));
    double l = l_inf + b * std::pow(c, -a);
    if (noise > 0.0) l *= 1.0 + eps(rng);
    pts.push_back({c, l, "law"});
  }
  return pts;
}

RunCurve curve(const std::string& id, std::vector<std::pair<double, double>> pts) {
  RunCurve r{id, {}};
  for (auto [c, l] : pts) r.points.push_back({c, l});
  return r;
}

TEST(Frontier, SingleRunIsRunningMinimum) {
  const auto f = extract_frontier({curve("r", {{0, 9}, {1, 5}, {2, 6}, {3, 4}, {4, 4}, {5, 3}})});
  std::vector<double> losses;
  for (const auto& p : f) losses.push_back(p.loss);
  EXPECT_EQ(losses, (std::vector<double>{5, 4, 3}));
  EXPECT_EQ(f.front().compute, 1.0);
}

TEST(Frontier, CrossingSwitchesSourceOnce) {
  const RunCurve small = curve("small", {{1, 10}, {2, 6}, {4, 4}, {8, 3.5}, {16, 3.4}});
  const RunCurve large = curve("large", {{4, 8}, {8, 3.0}, {16, 2.0}, {32, 1.5}});
  const auto f = extract_frontier({small, large});
  int switches = 0;
  for (std::size_t i = 1; i < f.size(); ++i) switches += f[i].run_id != f[i - 1].run_id;
  EXPECT_EQ(switches, 1);
  EXPECT_EQ(f.front().run_id, "small");
  EXPECT_EQ(f.back().run_id, "large");
}

TEST(Frontier, MatchesAnalyticEnvelope) {
  // Run i has size n_i = 4^i and loss n_i^-0.5 + (C / n_i)^-0.5 on a shared C grid.
  std::vector<RunCurve> runs;
  std::vector<double> grid;
  for (int g = 0; g <= 40; ++g) grid.push_back(std::pow(2.0, g * 0.5));
  for (int i = 0; i < 4; ++i) {
    const double n = std::pow(4.0, i);
    RunCurve r{"run" + std::to_string(i), {}};
    for (double c : grid)
      if (c >= n) r.points.push_back({c, std::pow(n, -0.5) + std::pow(c / n, -0.5)});
    runs.push_back(r);
  }
  const auto f = extract_frontier(runs);
  std::size_t j = 0;
  for (double c : grid) {
    double best = std::numeric_limits<double>::infinity();
    std::string who;
    for (const auto& r : runs)
      for (const auto& p : r.points)
        if (p.compute == c && p.loss < best) {
          best = p.loss;
          who = r.run_id;
        }
    ASSERT_LT(j, f.size());
    EXPECT_EQ(f[j].compute, c);
    EXPECT_EQ(f[j].loss, best);
    EXPECT_EQ(f[j].run_id, who);
    ++j;
  }
  EXPECT_EQ(j, f.size());
}

TEST(Frontier, InvariantUnderDuplicationAndPermutation) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RunCurve> runs;
  for (int i = 0; i < 6; ++i) {
    RunCurve r{"r" + std::to_string(i), {}};
    for (int k = 0; k < 20; ++k) r.points.push_back({std::pow(10.0, 5.0 * u(rng)), u(rng)});
    runs.push_back(r);
  }
  const auto base = extract_frontier(runs);
  for (std::size_t i = 1; i < base.size(); ++i) {
    EXPECT_GT(base[i].compute, base[i - 1].compute);
    EXPECT_LT(base[i].loss, base[i - 1].loss);
  }
  auto shuffled = runs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  for (auto& r : shuffled) std::shuffle(r.points.begin(), r.points.end(), rng);
  EXPECT_EQ(extract_frontier(shuffled), base);
  auto doubled = runs;
  doubled.insert(doubled.end(), runs.begin(), runs.end());
  EXPECT_EQ(extract_frontier(doubled), base);
}

TEST(Frontier, DropsNonPositiveComputeAndNonFinite) {
  const auto f = extract_frontier({curve("r", {{0, 1}, {1, NAN}, {2, 0.5}, {3, INFINITY}})});
  ASSERT_EQ(f.size(), 1u);
  EXPECT_EQ(f[0].compute, 2.0);
  EXPECT_THROW(extract_frontier({curve("r", {{0, 1}})}), EmptyInput);
  EXPECT_THROW(extract_frontier({}), EmptyInput);
}

TEST(Fit, RecoversNoiselessLaw) {
  const ScalingFit f = fit_power_law(law_points(0.75, 3.0, 0.3, 1.0, 1e6, 40));
  EXPECT_NEAR(f.l_inf / 0.75, 1.0, 0.01);
  EXPECT_NEAR(f.b / 3.0, 1.0, 0.01);
  EXPECT_NEAR(f.a / 0.3, 1.0, 0.01);
  EXPECT_LT(f.residual, 1e-8);
}

TEST(Fit, RecoversLawUnderOnePercentNoise) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ScalingFit f = fit_power_law(law_points(0.75, 3.0, 0.3, 1.0, 1e6, 40, 0.01, seed));
    EXPECT_NEAR(f.l_inf / 0.75, 1.0, 0.05) << seed;
    EXPECT_NEAR(f.b / 3.0, 1.0, 0.05) << seed;
    EXPECT_NEAR(f.a / 0.3, 1.0, 0.05) << seed;
  }
}

TEST(Fit, ZeroFloorLaw) {
  const ScalingFit f = fit_power_law(law_points(0.0, 2.0, 0.5, 1.0, 1e4, 20));
  EXPECT_NEAR(f.a, 0.5, 1e-6);
  EXPECT_NEAR(f.b, 2.0, 1e-5);
  EXPECT_LT(f.l_inf, 1e-6);
}

TEST(Fit, ScaleEquivariant) {
  const auto pts = law_points(0.75, 3.0, 0.3, 1.0, 1e6, 40);
  auto scaled = pts;
  const double s = 1000.0;
  for (auto& p : scaled) p.compute *= s;
  const ScalingFit f = fit_power_law(pts);
  const ScalingFit g = fit_power_law(scaled);
  EXPECT_NEAR(g.a, f.a, 1e-3 * f.a);
  EXPECT_NEAR(g.l_inf, f.l_inf, 1e-3 * f.l_inf);
  EXPECT_NEAR(g.b / (f.b * std::pow(s, f.a)), 1.0, 1e-2);
}

TEST(Fit, Errors) {
  EXPECT_THROW(fit_power_law(law_points(0.75, 3.0, 0.3, 1.0, 1e6, 3)), InsufficientData);
  EXPECT_THROW(fit_power_law(law_points(0.75, 3.0, 0.3, 1.0, 9.0, 10)), InsufficientData);
  EXPECT_THROW(fit_power_law(law_points(0.0, 1.0, 0.0, 1.0, 1e4, 10)), DegenerateFit);
  // Rising loss has no decaying fit either.
  EXPECT_THROW(fit_power_law(law_points(0.0, 1.0, -0.2, 1.0, 1e4, 10)), DegenerateFit);
}

TEST(Fit, PredictAndInvert) {
  const ScalingFit f{0.5, 2.0, 0.25, 0.0};
  EXPECT_NEAR(f.invert(f.predict(1234.0)), 1234.0, 1e-9);
  EXPECT_TRUE(std::isnan(f.invert(0.5)));
}

TEST(Multiplier, SelfIsOne) {
  const auto pts = law_points(0.75, 3.0, 0.3, 1.0, 1e6, 40, 0.005, 3);
  const ScalingFit f = fit_power_law(pts);
  std::vector<FrontierPoint> own;
  for (const auto& p : pts) own.push_back({p.compute, f.predict(p.compute), "own"});
  const ComputeMultiplier m = compute_multiplier(f, own);
  EXPECT_NEAR(m.mean, 1.0, 0.02);
  EXPECT_EQ(m.used, 40);
}

TEST(Multiplier, HalvedComputeIsExactlyTwo) {
  const ScalingFit dense{0.75, 3.0, 0.3, 0.0};
  // The structured law reaches every loss at half the dense compute.
  const auto pts = law_points(0.75, 3.0 * std::pow(2.0, -0.3), 0.3, 10.0, 1e5, 25);
  const ComputeMultiplier m = compute_multiplier(dense, pts);
  EXPECT_NEAR(m.mean, 2.0, 2e-12);
  EXPECT_LT(m.std, 1e-11);
}

TEST(Multiplier, SkipsPointsAtOrBelowFloor) {
  const ScalingFit dense{0.75, 3.0, 0.3, 0.0};
  std::vector<FrontierPoint> pts{{10.0, 0.7, "a"}, {100.0, 0.75, "a"}, {1000.0, 0.8, "a"}};
  const ComputeMultiplier m = compute_multiplier(dense, pts);
  EXPECT_EQ(m.used, 1);
  EXPECT_EQ(m.skipped, 2);
  EXPECT_THROW(compute_multiplier(dense, {{10.0, 0.5, "a"}}), OutOfRange);
}

TEST(Fit, JsonRoundTrip) {
  const ScalingFit f{0.1, 2.5, 0.3, 1e-4};
  const ScalingFit a = fit_from_json(to_json(f));
  const ScalingFit b = fit_from_json(nlohmann::json{{"fit", to_json(f)}});
  EXPECT_EQ(a.l_inf, f.l_inf);
  EXPECT_EQ(a.b, f.b);
  EXPECT_EQ(b.a, f.a);
  EXPECT_THROW(fit_from_json(nlohmann::json{{"b", 1.0}}), ConfigError);
}

}  // namespace
}  // namespace einlin
