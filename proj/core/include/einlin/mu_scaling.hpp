// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_MU_SCALING_HPP
#define EINLIN_MU_SCALING_HPP

#include <cstdint>
#include <string_view>

#include "einlin/einsum_kernel.hpp"

namespace einlin {

/// Effective matrix shape of each factor in the batched-matmul view.
/// A maps xa -> ya·yab·ab per (β,γ) batch; B maps xb·xab·ab -> yb per (δ,φ).
struct FactorIoDims {
  std::int64_t d_in_a = 1;
  std::int64_t d_out_a = 1;
  std::int64_t d_in_b = 1;
  std::int64_t d_out_b = 1;
};

enum class OptimizerKind { kAdam, kSgd, kRsgd };
std::string_view to_string(OptimizerKind kind) noexcept;

struct LrPlan {
  double base_lr = 0.0;
  std::int64_t base_width = 1;
  double lr_a = 0.0;
  double lr_b = 0.0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
};

FactorIoDims factor_io_dims(const EinsumSpec& spec) noexcept;

/// sqrt(min(fan_in, fan_out) / fan_in^2), the μP init scale of a dense map.
double mup_init_sigma(std::int64_t fan_in, std::int64_t fan_out) noexcept;

InitPlan init_plan(const EinsumSpec& spec) noexcept;

/// Adam learning rates transferred from a dense layer of width d0 trained at
/// base_lr: lr_a = d0·η / (2·xa), lr_b = d0·η / (2·xb·xab·ab).
LrPlan adam_lr_plan(const EinsumSpec& spec, double base_lr, std::int64_t base_width) noexcept;

/// Adam rate of a native single-matrix layer: d0·η / fan_in.
double dense_adam_lr(double base_lr, std::int64_t base_width, std::int64_t fan_in) noexcept;

/// Per-factor rates implied by RSGD at initialization and by μP-SGD with A
/// treated as the earlier layer (all Θ constants set to one).
struct EffectiveRates {
  double rsgd_a = 0.0;
  double rsgd_b = 0.0;
  double mup_sgd_a = 0.0;
  double mup_sgd_b = 0.0;
};

/// Uses sigma² from the given plan.
EffectiveRates sgd_and_rsgd_exponents(const EinsumSpec& spec, const InitPlan& init) noexcept;

/// Uses the μP init plan evaluated in exact rational arithmetic, so rates
/// that agree as rationals come back as bit-identical doubles.
EffectiveRates sgd_and_rsgd_exponents(const EinsumSpec& spec) noexcept;

/// xa = yb, xb·xab·ab <= yb and ya·yab·ab <= xa: RSGD and μP-SGD coincide.
bool rsgd_mup_condition(const EinsumSpec& spec) noexcept;

struct MetricBlockReport {
  int trials = 0;
  /// Predicted multiples of identity: xb·yb·σ_B² and xa·ya·σ_A².
  double predicted_aa = 0.0;
  double predicted_bb = 0.0;
  /// Mean diagonal entry of the trial-averaged blocks.
  double mean_diag_aa = 0.0;
  double mean_diag_bb = 0.0;
  /// |mean_diag - predicted| / predicted (absolute when predicted is 0).
  double diag_dev_aa = 0.0;
  double diag_dev_bb = 0.0;
  /// Mean |off-diagonal| within a block relative to its predicted diagonal.
  double offdiag_aa = 0.0;
  double offdiag_bb = 0.0;
  /// Mean |J_A^T J_B| entry relative to sqrt(predicted_aa · predicted_bb).
  double cross_ab = 0.0;
  /// Largest |entry| of the averaged J_A^T J_A and J_B^T J_B blocks.
  double max_abs_aa = 0.0;
  double max_abs_bb = 0.0;
};

/// Builds the Jacobian of vec(W) with respect to (A, B) by enumeration for
/// `trials` fresh draws at the layer's init scales and averages J^T J.
/// Throws CapExceeded when the Jacobian would exceed `cap` entries.
MetricBlockReport metric_block_check(const EinsumLayer& layer, int trials, std::uint64_t seed = 0,
                                     std::int64_t cap = std::int64_t{1} << 22);

/// Rescales every batched-matmul block of both factors back to the RMS
/// recorded at init. Zero-norm blocks are left as they are.
void weight_normalize(EinsumLayer& layer);

}  // namespace einlin

#endif  // EINLIN_MU_SCALING_HPP
