// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_STRUCTURE_SPACE_HPP
#define EINLIN_STRUCTURE_SPACE_HPP

#include <array>
#include <string>
#include <string_view>

namespace einlin {

/// Absolute tolerance for all θ equality and constraint checks.
inline constexpr double kThetaTolerance = 1e-9;

/// Exponents assigning each Einsum index range as a power of the layer
/// dimension. Naming follows the hyperedge each index lives on:
///
///   xa  : {X, A}      xb  : {X, B}      xab : {X, A, B}
///   ya  : {Y, A}      yb  : {Y, B}      yab : {Y, A, B}
///   ab  : {A, B}
///
/// The input-side entries and the output-side entries each sum to one.
struct ThetaVector {
  double xa = 0.0;
  double xb = 0.0;
  double xab = 0.0;
  double ya = 0.0;
  double yb = 0.0;
  double yab = 0.0;
  double ab = 0.0;

  std::array<double, 7> as_array() const noexcept { return {xa, xb, xab, ya, yb, yab, ab}; }
  static ThetaVector from_array(const std::array<double, 7>& v) noexcept {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
  }

  friend bool operator==(const ThetaVector&, const ThetaVector&) = default;
};

/// Exponents characterizing an Einsum family.
///
/// omega: parameters per MAC scale as d^-omega.
/// psi:   rank scales as d^psi.
/// nu:    MACs per output dimension scale as d^nu. Degenerate structures
///        (more than quadratic cost) are reported with nu clamped to 1.
struct TaxonomyReport {
  double omega = 0.0;
  double psi = 0.0;
  double nu = 0.0;
  bool degenerate = false;
};

enum class Structure { kDense, kLowRank, kKronecker, kTensorTrain, kMonarch, kBtt, kGeneric };

std::string_view to_string(Structure s) noexcept;

/// Swaps the roles of the two factors: xa<->xb and ya<->yb.
ThetaVector relabel_factors(const ThetaVector& theta) noexcept;

/// min(xa, yb) >= min(ya, xb) within tolerance, i.e. contracting the input
/// with A first is no costlier than with B first.
bool is_canonical(const ThetaVector& theta) noexcept;

/// Validates range and sum constraints and relabels the factors when the
/// exchange-redundancy inequality fails. Entries within tolerance of the
/// [0, 1] bounds are clamped onto them.
///
/// Throws ConstraintViolation.
ThetaVector validate_and_canonicalize(const ThetaVector& raw);

/// Closed-form taxonomy exponents. Expects a canonical θ.
TaxonomyReport taxonomy(const ThetaVector& theta) noexcept;

/// Named family whose zero/nonzero pattern matches θ, ignoring the magnitude
/// of free exponents. Expects a canonical θ.
Structure recognize(const ThetaVector& theta) noexcept;

/// Parses either seven comma-separated decimals or a named preset
/// ("dense", "low-rank[:ab]", "kronecker", "tt[:ab]", "monarch", "btt[:ab]").
/// The result is validated and canonical.
///
/// Throws ConstraintViolation on unparsable text or invalid exponents.
ThetaVector parse_theta(std::string_view text);

/// Seven comma-separated decimals, shortest round-trip representation.
std::string format_theta(const ThetaVector& theta);

namespace presets {

/// Two-factor dense layer: Hadamard product of two d_in x d_out factors.
ThetaVector dense() noexcept;
ThetaVector low_rank(double ab = 0.5) noexcept;
ThetaVector kronecker() noexcept;
ThetaVector tensor_train(double ab = 0.25) noexcept;
ThetaVector monarch() noexcept;
ThetaVector btt(double ab = 0.25) noexcept;

}  // namespace presets

}  // namespace einlin

#endif  // EINLIN_STRUCTURE_SPACE_HPP
