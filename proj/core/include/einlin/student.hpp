// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_STUDENT_HPP
#define EINLIN_STUDENT_HPP

#include <cstdint>
#include <span>
#include <vector>

#include "einlin/config.hpp"
#include "einlin/dense.hpp"
#include "einlin/einsum_kernel.hpp"
#include "einlin/matrix.hpp"
#include "einlin/moe.hpp"
#include "einlin/teacher.hpp"

namespace einlin {

struct HiddenLayer {
  LayerKind kind = LayerKind::kDense;
  DenseLayer dense;
  EinsumLayer einsum;
  MoELayer moe;
};

/// One trainable tensor and its Adam learning rate.
struct ParamView {
  std::span<double> value;
  double lr = 0.0;
};

struct LossAndGrads {
  double mse = 0.0;
  /// Σ over MoE layers of load_balance_loss (unscaled); 0 without MoE.
  double balance = 0.0;
  /// Aligned with Student::params().
  std::vector<std::vector<double>> grads;
};

/// embed (dense input_dim -> d, bias), ReLU, depth-2 hidden d -> d layers
/// without bias each followed by ReLU, readout (dense d -> 1, bias).
class Student {
 public:
  /// Throws InfeasibleFactorization or ConfigError.
  Student(const ExperimentConfig& config, std::int64_t input_dim);

  const DenseLayer& embed() const noexcept { return embed_; }
  const std::vector<HiddenLayer>& hidden() const noexcept { return hidden_; }
  std::vector<HiddenLayer>& hidden() noexcept { return hidden_; }
  const DenseLayer& readout() const noexcept { return readout_; }

  /// Per-example MACs of one forward pass (bias adds and ReLU excluded).
  std::int64_t forward_macs() const noexcept;
  std::int64_t param_count() const noexcept;

  Matrix forward(const Matrix& x, MacCounter* counter = nullptr) const;

  /// Mean squared error of forward(x) against y, in row chunks.
  double mse(const Matrix& x, const Matrix& y) const;

  std::vector<ParamView> params();

  /// Gradients of mse + Σ_moe coefficient · balance for one batch.
  LossAndGrads loss_and_grads(const Batch& batch, MacCounter* counter = nullptr) const;

  /// Restores Einsum factor block RMS (including MoE experts) to init targets.
  void weight_normalize();

 private:
  DenseLayer embed_;
  std::vector<HiddenLayer> hidden_;
  DenseLayer readout_;
};

}  // namespace einlin

#endif  // EINLIN_STUDENT_HPP
