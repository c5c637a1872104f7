// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_EINSUM_KERNEL_HPP
#define EINLIN_EINSUM_KERNEL_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "einlin/matrix.hpp"
#include "einlin/structure_space.hpp"

namespace einlin {

/// Concrete index ranges of a two-factor Einsum
///
///   Y[δ,ε,φ] = Σ_{α,β,γ,ρ} B[β,γ,ε,φ,ρ] · A[α,γ,δ,φ,ρ] · X[α,β,γ]
///
/// with α..ρ ranging over xa, xb, xab, ya, yb, yab, ab respectively.
///
/// Flattening convention for vectors: x[(α·xb + β)·xab + γ] and
/// y[(δ·yb + ε)·yab + φ].
struct EinsumSpec {
  std::int64_t xa = 1;
  std::int64_t xb = 1;
  std::int64_t xab = 1;
  std::int64_t ya = 1;
  std::int64_t yb = 1;
  std::int64_t yab = 1;
  std::int64_t ab = 1;
  std::int64_t d_in = 1;
  std::int64_t d_out = 1;

  /// Throws InfeasibleFactorization when a range is < 1 or the products do
  /// not close onto d_in and d_out.
  void validate() const;

  std::int64_t a_size() const noexcept { return xa * xab * ya * yab * ab; }
  std::int64_t b_size() const noexcept { return xb * xab * yb * yab * ab; }
  /// Width of the intermediate produced by the first contraction.
  std::int64_t z_size() const noexcept { return xb * xab * ya * yab * ab; }

  friend bool operator==(const EinsumSpec&, const EinsumSpec&) = default;
};

/// Builds an EinsumSpec from ranges; d_in/d_out are the implied products.
EinsumSpec make_spec(std::int64_t xa, std::int64_t xb, std::int64_t xab, std::int64_t ya,
                     std::int64_t yb, std::int64_t yab, std::int64_t ab);

/// Divisor-nearest rounding of d^θ. xa (ya) is resolved first among the
/// divisors of d_in (d_out), then xb (yb) among the divisors of the
/// remainder, and xab (yab) closes the product. ab = max(1, round(min^θ_ab)).
/// Ties break toward the smaller divisor.
EinsumSpec instantiate_spec(const ThetaVector& theta, std::int64_t d_in, std::int64_t d_out);

/// MACs per input vector of the two-stage contraction:
/// d_in·ya·yab·ab + d_out·xb·xab·ab.
std::int64_t count_flops(const EinsumSpec& spec) noexcept;
std::int64_t count_params(const EinsumSpec& spec) noexcept;

/// Generic rank bound min(d_in, d_out, z_size).
std::int64_t predicted_rank(const EinsumSpec& spec) noexcept;

/// The two factors of an Einsum plus their init/learning-rate metadata.
///
/// Internally A is held as [γ][α][δ][φ][ρ] and B as [φ][β][γ][ρ][ε] so each
/// batched-matmul block is contiguous; use a()/b() for logical indexing and
/// the *_data() spans for flat access in the internal order (gradients use
/// the same order).
class EinsumLayer {
 public:
  EinsumLayer() = default;
  explicit EinsumLayer(const EinsumSpec& spec);

  const EinsumSpec& spec() const noexcept { return spec_; }

  double& a(std::int64_t alpha, std::int64_t gamma, std::int64_t delta, std::int64_t phi,
            std::int64_t rho) noexcept {
    return a_[a_offset(alpha, gamma, delta, phi, rho)];
  }
  double a(std::int64_t alpha, std::int64_t gamma, std::int64_t delta, std::int64_t phi,
           std::int64_t rho) const noexcept {
    return a_[a_offset(alpha, gamma, delta, phi, rho)];
  }
  double& b(std::int64_t beta, std::int64_t gamma, std::int64_t eps, std::int64_t phi,
            std::int64_t rho) noexcept {
    return b_[b_offset(beta, gamma, eps, phi, rho)];
  }
  double b(std::int64_t beta, std::int64_t gamma, std::int64_t eps, std::int64_t phi,
           std::int64_t rho) const noexcept {
    return b_[b_offset(beta, gamma, eps, phi, rho)];
  }

  std::span<double> a_data() noexcept { return a_; }
  std::span<const double> a_data() const noexcept { return a_; }
  std::span<double> b_data() noexcept { return b_; }
  std::span<const double> b_data() const noexcept { return b_; }

  /// A in declared order (xa, xab, ya, yab, ab), row-major.
  std::vector<double> a_declared() const;
  /// B in declared order (xb, xab, yb, yab, ab), row-major.
  std::vector<double> b_declared() const;
  void set_a_declared(std::span<const double> values);
  void set_b_declared(std::span<const double> values);

  std::size_t a_offset(std::int64_t alpha, std::int64_t gamma, std::int64_t delta,
                       std::int64_t phi, std::int64_t rho) const noexcept {
    const auto& s = spec_;
    return static_cast<std::size_t>((((gamma * s.xa + alpha) * s.ya + delta) * s.yab + phi) * s.ab +
                                    rho);
  }
  std::size_t b_offset(std::int64_t beta, std::int64_t gamma, std::int64_t eps, std::int64_t phi,
                       std::int64_t rho) const noexcept {
    const auto& s = spec_;
    return static_cast<std::size_t>((((phi * s.xb + beta) * s.xab + gamma) * s.ab + rho) * s.yb +
                                    eps);
  }

  // Number of batched-matmul blocks per factor: A has one per γ, B one per φ.
  std::int64_t a_blocks() const noexcept { return spec_.xab; }
  std::int64_t b_blocks() const noexcept { return spec_.yab; }
  std::int64_t a_block_size() const noexcept { return spec_.a_size() / spec_.xab; }
  std::int64_t b_block_size() const noexcept { return spec_.b_size() / spec_.yab; }

  double init_std_a = 0.0;
  double init_std_b = 0.0;
  double lr_a = 0.0;
  double lr_b = 0.0;
  std::uint64_t seed = 0;
  /// Per-block RMS targets recorded at init; consumed by weight_normalize.
  std::vector<double> block_rms_a;
  std::vector<double> block_rms_b;

 private:
  EinsumSpec spec_;
  std::vector<double> a_;
  std::vector<double> b_;
};

/// Standard deviations used to fill the factors.
struct InitPlan {
  double sigma_a = 0.0;
  double sigma_b = 0.0;
};

/// Fills both factors with independent zero-mean Gaussians (A first, then B,
/// each in declared index order) and records the block RMS targets.
EinsumLayer init_layer(const EinsumSpec& spec, const InitPlan& plan, std::uint64_t seed);

/// Records the current per-block RMS of both factors as targets.
void record_block_targets(EinsumLayer& layer);

/// Output of the first contraction, kept for the backward pass.
struct EinsumCache {
  std::vector<double> z;
};

/// Y = W X for a batch (one vector per row), via
///   step 1: Z[β,γ,δ,φ,ρ] = Σ_α A[α,γ,δ,φ,ρ] X[α,β,γ]
///   step 2: Y[δ,ε,φ]     = Σ_{β,γ,ρ} B[β,γ,ε,φ,ρ] Z[β,γ,δ,φ,ρ]
/// Throws ShapeMismatch.
Matrix mvm(const EinsumLayer& layer, const Matrix& x, MacCounter* counter = nullptr);
Matrix mvm(const EinsumLayer& layer, const Matrix& x, EinsumCache& cache,
           MacCounter* counter = nullptr);

struct EinsumGrads {
  std::vector<double> a;  // internal layout, same as EinsumLayer::a_data()
  std::vector<double> b;
  Matrix x;
};

/// Gradients of Σ <upstream, mvm(x)> with respect to A, B and x.
/// Throws ShapeMismatch.
EinsumGrads vjp(const EinsumLayer& layer, const Matrix& x, const Matrix& upstream);
/// Same, reusing the cache filled by the forward pass on the same x.
EinsumGrads vjp(const EinsumLayer& layer, const Matrix& x, const EinsumCache& cache,
                const Matrix& upstream);

inline constexpr std::int64_t kDefaultMaterializeCap = std::int64_t{1} << 22;

/// Dense d_out x d_in matrix by brute-force enumeration of all seven indices.
/// Throws CapExceeded when d_in·d_out > cap.
Matrix materialize(const EinsumLayer& layer, std::int64_t cap = kDefaultMaterializeCap);

}  // namespace einlin

#endif  // EINLIN_EINSUM_KERNEL_HPP
