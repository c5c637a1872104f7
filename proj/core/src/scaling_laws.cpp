// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/scaling_laws.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>

#include "einlin/errors.hpp"

namespace einlin {

using nlohmann::json;

namespace {

constexpr double kMinGapFraction = 1e-5;
constexpr int kGoldenIterations = 80;

struct Candidate {
  double l_inf = 0.0;
  double b = 0.0;
  double a = 0.0;
  double residual = std::numeric_limits<double>::infinity();
};

// Least squares of log(L - l_inf) on log C, scored by the log-space error of L.
Candidate fit_at(const std::vector<FrontierPoint>& pts, double l_inf) {
  Candidate c;
  c.l_inf = l_inf;
  const double n = static_cast<double>(pts.size());
  double sx = 0.0;
  double sy = 0.0;
  for (const auto& p : pts) {
    sx += std::log(p.compute);
    sy += std::log(p.loss - l_inf);
  }
  const double mx = sx / n;
  const double my = sy / n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (const auto& p : pts) {
    const double dx = std::log(p.compute) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(p.loss - l_inf) - my);
  }
  const double slope = sxy / sxx;
  c.a = -slope;
  c.b = std::exp(my - slope * mx);
  double err = 0.0;
  for (const auto& p : pts) {
    const double pred = l_inf + c.b * std::pow(p.compute, -c.a);
    const double e = std::log(p.loss) - std::log(pred);
    err += e * e;
  }
  c.residual = err / n;
  if (!std::isfinite(c.residual)) c.residual = std::numeric_limits<double>::infinity();
  return c;
}

bool usable(const Candidate& c) { return c.a > 1e-12 && std::isfinite(c.residual) && std::isfinite(c.b); }

}  // namespace

std::vector<FrontierPoint> extract_frontier(const std::vector<RunCurve>& runs) {
  std::vector<FrontierPoint> pool;
  for (const auto& run : runs) {
    for (const auto& p : run.points) {
      if (p.compute > 0.0 && std::isfinite(p.compute) && std::isfinite(p.loss)) {
        pool.push_back({p.compute, p.loss, run.run_id});
      }
    }
  }
  if (pool.empty()) throw EmptyInput("no points with positive compute and finite loss");
  std::sort(pool.begin(), pool.end(), [](const FrontierPoint& x, const FrontierPoint& y) {
    return std::tie(x.compute, x.loss, x.run_id) < std::tie(y.compute, y.loss, y.run_id);
  });
  std::vector<FrontierPoint> out;
  for (auto& p : pool) {
    if (out.empty() || p.loss < out.back().loss) out.push_back(std::move(p));
  }
  return out;
}

double ScalingFit::predict(double compute) const { return l_inf + b * std::pow(compute, -a); }

double ScalingFit::invert(double loss) const {
  if (!(loss > l_inf)) return std::numeric_limits<double>::quiet_NaN();
  return std::pow(b / (loss - l_inf), 1.0 / a);
}

ScalingFit fit_power_law(const std::vector<FrontierPoint>& points) {
  if (points.size() < 4) {
    throw InsufficientData("power-law fit needs at least 4 points, got " + std::to_string(points.size()));
  }
  double c_min = std::numeric_limits<double>::infinity();
  double c_max = 0.0;
  double l_min = std::numeric_limits<double>::infinity();
  for (const auto& p : points) {
    if (!(p.compute > 0.0) || !(p.loss > 0.0) || !std::isfinite(p.compute) || !std::isfinite(p.loss)) {
      throw InsufficientData("power-law fit needs positive finite compute and loss");
    }
    c_min = std::min(c_min, p.compute);
    c_max = std::max(c_max, p.compute);
    l_min = std::min(l_min, p.loss);
  }
  if (c_max < 10.0 * c_min) throw InsufficientData("points span less than one decade of compute");

  // Gap g = l_min - l_inf runs geometrically from l_min (l_inf = 0) down to l_min·1e-5.
  std::vector<double> grid(kFitGridSize);
  for (int i = 0; i < kFitGridSize; ++i) {
    const double frac = static_cast<double>(i) / (kFitGridSize - 1);
    grid[static_cast<std::size_t>(i)] = i == 0 ? 0.0 : l_min - l_min * std::pow(kMinGapFraction, frac);
  }
  Candidate best;
  int best_i = -1;
  for (int i = 0; i < kFitGridSize; ++i) {
    const Candidate c = fit_at(points, grid[static_cast<std::size_t>(i)]);
    if (usable(c) && c.residual < best.residual) {
      best = c;
      best_i = i;
    }
  }
  if (best_i < 0) throw DegenerateFit("no candidate l_inf yields a decaying power law");

  // Golden-section search on l_inf between the neighbouring grid candidates.
  double lo = grid[static_cast<std::size_t>(std::max(0, best_i - 1))];
  double hi = grid[static_cast<std::size_t>(std::min(kFitGridSize - 1, best_i + 1))];
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto score = [&](double l) {
    const Candidate c = fit_at(points, l);
    return usable(c) ? c.residual : std::numeric_limits<double>::infinity();
  };
  double x1 = hi - phi * (hi - lo);
  double x2 = lo + phi * (hi - lo);
  double f1 = score(x1);
  double f2 = score(x2);
  for (int it = 0; it < kGoldenIterations && hi - lo > 1e-15 * std::max(1.0, l_min); ++it) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = score(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = score(x2);
    }
  }
  const Candidate refined = fit_at(points, f1 <= f2 ? x1 : x2);
  if (usable(refined) && refined.residual < best.residual) best = refined;

  if (!std::isfinite(best.residual)) throw DegenerateFit("fit residual is not finite");
  return {best.l_inf, best.b, best.a, best.residual};
}

ComputeMultiplier compute_multiplier(const ScalingFit& dense_fit,
                                     const std::vector<FrontierPoint>& points) {
  if (!(dense_fit.a > 0.0) || !(dense_fit.b > 0.0)) {
    throw DegenerateFit("compute multiplier needs a dense fit with a > 0 and b > 0");
  }
  std::vector<double> lambdas;
  ComputeMultiplier m;
  for (const auto& p : points) {
    const double c_dense = dense_fit.invert(p.loss);
    if (!std::isfinite(c_dense) || !(p.compute > 0.0)) {
      ++m.skipped;
      continue;
    }
    lambdas.push_back(c_dense / p.compute);
  }
  if (lambdas.empty()) throw OutOfRange("every point lies at or below the dense l_inf");
  double sum = 0.0;
  for (const double l : lambdas) sum += l;
  m.mean = sum / static_cast<double>(lambdas.size());
  double var = 0.0;
  for (const double l : lambdas) var += (l - m.mean) * (l - m.mean);
  m.std = std::sqrt(var / static_cast<double>(lambdas.size()));
  m.used = static_cast<int>(lambdas.size());
  return m;
}

json to_json(const FrontierPoint& p) {
  return json{{"compute", p.compute}, {"loss", p.loss}, {"run_id", p.run_id}};
}

json to_json(const ScalingFit& f) {
  return json{{"l_inf", f.l_inf}, {"b", f.b}, {"a", f.a}, {"residual", f.residual}};
}

json to_json(const ComputeMultiplier& m) {
  return json{{"mean", m.mean}, {"std", m.std}, {"used", m.used}, {"skipped", m.skipped}};
}

ScalingFit fit_from_json(const json& j) {
  try {
    const json& f = j.contains("fit") ? j.at("fit") : j;
    ScalingFit fit;
    fit.l_inf = f.at("l_inf").get<double>();
    fit.b = f.at("b").get<double>();
    fit.a = f.at("a").get<double>();
    fit.residual = f.value("residual", 0.0);
    return fit;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed fit document: ") + e.what());
  }
}

}  // namespace einlin
