// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_DENSE_HPP
#define EINLIN_DENSE_HPP

#include <cstdint>
#include <vector>

#include "einlin/matrix.hpp"

namespace einlin {

/// Native single-matrix layer y = x W (+ bias). W is stored fan_in x fan_out,
/// row-major.
struct DenseLayer {
  std::int64_t fan_in = 0;
  std::int64_t fan_out = 0;
  AlignedVector w;
  AlignedVector bias;  // empty when the layer has no bias
  double init_std = 0.0;
  double lr = 0.0;
  double bias_lr = 0.0;

  bool has_bias() const noexcept { return !bias.empty(); }
  std::int64_t param_count() const noexcept {
    return static_cast<std::int64_t>(w.size() + bias.size());
  }
};

/// Gaussian weights with the given std; biases start at zero.
DenseLayer init_dense(std::int64_t fan_in, std::int64_t fan_out, double sigma, bool with_bias,
                      std::uint64_t seed);

/// Throws ShapeMismatch. Counts batch·fan_in·fan_out MACs.
Matrix dense_forward(const DenseLayer& layer, const Matrix& x, MacCounter* counter = nullptr);

struct DenseGrads {
  AlignedVector w;
  AlignedVector bias;
  Matrix x;  // left empty when not requested
};

DenseGrads dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& upstream,
                          bool want_input_grad = true);

}  // namespace einlin

#endif  // EINLIN_DENSE_HPP
