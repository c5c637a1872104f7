// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/dense.hpp"

#include <random>
#include <string>

#include <Eigen/Core>

#include "einlin/errors.hpp"

namespace einlin {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

}  // namespace

DenseLayer init_dense(std::int64_t fan_in, std::int64_t fan_out, double sigma, bool with_bias,
                      std::uint64_t seed) {
  if (fan_in < 1 || fan_out < 1) throw ShapeMismatch("dense layer needs positive dimensions");
  DenseLayer layer;
  layer.fan_in = fan_in;
  layer.fan_out = fan_out;
  layer.init_std = sigma;
  layer.w.resize(static_cast<std::size_t>(fan_in * fan_out));
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : layer.w) v = sigma * normal(gen);
  if (with_bias) layer.bias.assign(static_cast<std::size_t>(fan_out), 0.0);
  return layer;
}

Matrix dense_forward(const DenseLayer& layer, const Matrix& x, MacCounter* counter) {
  if (static_cast<std::int64_t>(x.cols()) != layer.fan_in) {
    throw ShapeMismatch("dense input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(layer.fan_in));
  }
  const auto n = static_cast<Eigen::Index>(x.rows());
  Matrix y(x.rows(), static_cast<std::size_t>(layer.fan_out));
  Map ym(y.data(), n, layer.fan_out);
  ym.noalias() = MapC(x.data(), n, layer.fan_in) * MapC(layer.w.data(), layer.fan_in, layer.fan_out);
  if (layer.has_bias()) {
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(layer.bias.data(), layer.fan_out);
  }
  if (counter) counter->add(x.rows() * static_cast<std::uint64_t>(layer.fan_in * layer.fan_out));
  return y;
}

DenseGrads dense_backward(const DenseLayer& layer, const Matrix& x, const Matrix& upstream,
                          bool want_input_grad) {
  if (static_cast<std::int64_t>(x.cols()) != layer.fan_in ||
      static_cast<std::int64_t>(upstream.cols()) != layer.fan_out || x.rows() != upstream.rows()) {
    throw ShapeMismatch("dense backward shapes do not match the layer");
  }
  const auto n = static_cast<Eigen::Index>(x.rows());
  const MapC xm(x.data(), n, layer.fan_in);
  const MapC gm(upstream.data(), n, layer.fan_out);
  DenseGrads g;
  g.w.resize(layer.w.size());
  Map(g.w.data(), layer.fan_in, layer.fan_out).noalias() = xm.transpose() * gm;
  if (layer.has_bias()) {
    g.bias.resize(layer.bias.size());
    Eigen::Map<Eigen::RowVectorXd>(g.bias.data(), layer.fan_out) = gm.colwise().sum();
  }
  if (want_input_grad) {
    g.x = Matrix(x.rows(), x.cols());
    Map(g.x.data(), n, layer.fan_in).noalias() =
        gm * MapC(layer.w.data(), layer.fan_in, layer.fan_out).transpose();
  }
  return g;
}

}  // namespace einlin
