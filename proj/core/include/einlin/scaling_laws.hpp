// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_SCALING_LAWS_HPP
#define EINLIN_SCALING_LAWS_HPP

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace einlin {

struct CurvePoint {
  double compute = 0.0;  // cumulative training MACs
  double loss = 0.0;
};

/// Eval-loss curve of one run.
struct RunCurve {
  std::string run_id;
  std::vector<CurvePoint> points;
};

struct FrontierPoint {
  double compute = 0.0;
  double loss = 0.0;
  std::string run_id;

  friend bool operator==(const FrontierPoint&, const FrontierPoint&) = default;
};

/// Pools every point with C > 0 and finite loss, orders by (C, loss, run id)
/// and keeps each point whose loss is below every kept point of smaller C.
/// Throws EmptyInput when nothing survives.
std::vector<FrontierPoint> extract_frontier(const std::vector<RunCurve>& runs);

/// L = l_inf + b · C^-a.
struct ScalingFit {
  double l_inf = 0.0;
  double b = 0.0;
  double a = 0.0;
  double residual = 0.0;  // mean squared error of log L

  double predict(double compute) const;
  /// Compute needed to reach `loss`; NaN when loss <= l_inf.
  double invert(double loss) const;
};

inline constexpr int kFitGridSize = 256;

/// Grid search over l_inf in [0, min L) (geometric in the gap min L - l_inf,
/// plus l_inf = 0), log-linear least squares per candidate, then golden-section
/// refinement around the best grid cell. Throws InsufficientData (fewer than
/// 4 points or under one decade of C) and DegenerateFit (no decay or
/// non-finite residual).
ScalingFit fit_power_law(const std::vector<FrontierPoint>& points);

struct ComputeMultiplier {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int used = 0;
  int skipped = 0;
};

/// λ = C_dense(L) / C per point, skipping L <= l_inf. Throws OutOfRange when
/// every point is skipped.
ComputeMultiplier compute_multiplier(const ScalingFit& dense_fit,
                                     const std::vector<FrontierPoint>& points);

nlohmann::json to_json(const FrontierPoint& p);
nlohmann::json to_json(const ScalingFit& f);
nlohmann::json to_json(const ComputeMultiplier& m);
ScalingFit fit_from_json(const nlohmann::json& j);

}  // namespace einlin

#endif  // EINLIN_SCALING_LAWS_HPP
