// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/student.hpp"

#include <algorithm>

#include "einlin/errors.hpp"
#include "einlin/mu_scaling.hpp"
#include "einlin/rng.hpp"

namespace einlin {
namespace {

constexpr std::size_t kEvalChunk = 4096;

void relu_inplace(Matrix& m) noexcept {
  for (double& v : m.flat()) v = v > 0.0 ? v : 0.0;
}

// Zeroes gradient entries where the pre-activation was not positive.
void relu_backward(Matrix& grad, const Matrix& pre) noexcept {
  const auto p = pre.flat();
  auto g = grad.flat();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(p[i] > 0.0)) g[i] = 0.0;
  }
}

Matrix hidden_forward(const HiddenLayer& h, const Matrix& x, MacCounter* counter) {
  switch (h.kind) {
    case LayerKind::kDense:
      return dense_forward(h.dense, x, counter);
    case LayerKind::kEinsum:
      return mvm(h.einsum, x, counter);
    case LayerKind::kMoe:
      return moe_forward(h.moe, x, nullptr, counter);
  }
  return {};
}

}  // namespace

Student::Student(const ExperimentConfig& c, std::int64_t input_dim) {
  if (c.depth < 2) throw ConfigError("student depth must be >= 2");
  const std::int64_t d = c.width;
  embed_ = init_dense(input_dim, d, mup_init_sigma(input_dim, d), true, derive_seed(c.seed, 0));
  // The input layer keeps the base rate at every width.
  embed_.lr = c.base_lr;
  embed_.bias_lr = c.base_lr;

  for (int l = 0; l < c.depth - 2; ++l) {
    const std::uint64_t ls = derive_seed(c.seed, static_cast<std::uint64_t>(l) + 1);
    HiddenLayer h;
    h.kind = c.structure.kind;
    switch (h.kind) {
      case LayerKind::kDense:
        h.dense = init_dense(d, d, mup_init_sigma(d, d), false, ls);
        h.dense.lr = dense_adam_lr(c.base_lr, c.base_width, d);
        break;
      case LayerKind::kEinsum: {
        const EinsumSpec spec = instantiate_spec(c.structure.theta, d, d);
        h.einsum = init_layer(spec, init_plan(spec), ls);
        const LrPlan lr = adam_lr_plan(spec, c.base_lr, c.base_width);
        h.einsum.lr_a = lr.lr_a;
        h.einsum.lr_b = lr.lr_b;
        break;
      }
      case LayerKind::kMoe:
        h.moe = init_moe(d, c.structure.moe, c.base_lr, c.base_width, ls);
        break;
    }
    hidden_.push_back(std::move(h));
  }

  readout_ = init_dense(d, 1, mup_init_sigma(d, 1), true,
                        derive_seed(c.seed, static_cast<std::uint64_t>(c.depth)));
  readout_.lr = dense_adam_lr(c.base_lr, c.base_width, d);
  readout_.bias_lr = c.base_lr;
}

std::int64_t Student::forward_macs() const noexcept {
  std::int64_t n = embed_.fan_in * embed_.fan_out + readout_.fan_in * readout_.fan_out;
  for (const auto& h : hidden_) {
    switch (h.kind) {
      case LayerKind::kDense:
        n += h.dense.fan_in * h.dense.fan_out;
        break;
      case LayerKind::kEinsum:
        n += count_flops(h.einsum.spec());
        break;
      case LayerKind::kMoe:
        n += moe_forward_macs(h.moe);
        break;
    }
  }
  return n;
}

std::int64_t Student::param_count() const noexcept {
  std::int64_t n = embed_.param_count() + readout_.param_count();
  for (const auto& h : hidden_) {
    switch (h.kind) {
      case LayerKind::kDense:
        n += h.dense.param_count();
        break;
      case LayerKind::kEinsum:
        n += count_params(h.einsum.spec());
        break;
      case LayerKind::kMoe:
        n += moe_param_count(h.moe);
        break;
    }
  }
  return n;
}

Matrix Student::forward(const Matrix& x, MacCounter* counter) const {
  Matrix h = dense_forward(embed_, x, counter);
  relu_inplace(h);
  for (const auto& layer : hidden_) {
    h = hidden_forward(layer, h, counter);
    relu_inplace(h);
  }
  return dense_forward(readout_, h, counter);
}

double Student::mse(const Matrix& x, const Matrix& y) const {
  if (x.rows() != y.rows() || y.cols() != 1) throw ShapeMismatch("mse needs one target per row");
  if (x.rows() == 0) throw EmptyInput("mse over an empty set");
  double acc = 0.0;
  for (std::size_t start = 0; start < x.rows(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, x.rows() - start);
    Matrix chunk(n, x.cols());
    std::copy_n(x.row(start).data(), n * x.cols(), chunk.data());
    const Matrix out = forward(chunk);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = out(i, 0) - y(start + i, 0);
      acc += r * r;
    }
  }
  return acc / static_cast<double>(x.rows());
}

std::vector<ParamView> Student::params() {
  std::vector<ParamView> p;
  p.push_back({embed_.w, embed_.lr});
  p.push_back({embed_.bias, embed_.bias_lr});
  for (auto& h : hidden_) {
    switch (h.kind) {
      case LayerKind::kDense:
        p.push_back({h.dense.w, h.dense.lr});
        break;
      case LayerKind::kEinsum:
        p.push_back({h.einsum.a_data(), h.einsum.lr_a});
        p.push_back({h.einsum.b_data(), h.einsum.lr_b});
        break;
      case LayerKind::kMoe:
        p.push_back({h.moe.gate.linear.w, h.moe.gate.linear.lr});
        for (auto& e : h.moe.einsum_experts) {
          p.push_back({e.a_data(), e.lr_a});
          p.push_back({e.b_data(), e.lr_b});
        }
        for (std::size_t i = 0; i < h.moe.up.size(); ++i) {
          p.push_back({h.moe.up[i].w, h.moe.up[i].lr});
          if (i < h.moe.down.size()) p.push_back({h.moe.down[i].w, h.moe.down[i].lr});
        }
        break;
    }
  }
  p.push_back({readout_.w, readout_.lr});
  p.push_back({readout_.bias, readout_.bias_lr});
  return p;
}

LossAndGrads Student::loss_and_grads(const Batch& batch, MacCounter* counter) const {
  const Matrix& x = batch.inputs;
  const std::size_t n = x.rows();
  if (n == 0) throw EmptyInput("empty training batch");

  // Forward, keeping each layer's input and pre-activation.
  std::vector<Matrix> inputs;   // input of hidden layer l, and of the readout at the end
  std::vector<Matrix> pre;      // pre-activation of embed (index 0) and hidden layers
  std::vector<EinsumCache> ecache(hidden_.size());
  std::vector<MoeCache> mcache(hidden_.size());
  pre.push_back(dense_forward(embed_, x, counter));
  Matrix act = pre.back();
  relu_inplace(act);
  double balance = 0.0;
  for (std::size_t l = 0; l < hidden_.size(); ++l) {
    const auto& h = hidden_[l];
    inputs.push_back(act);
    switch (h.kind) {
      case LayerKind::kDense:
        pre.push_back(dense_forward(h.dense, act, counter));
        break;
      case LayerKind::kEinsum:
        pre.push_back(mvm(h.einsum, act, ecache[l], counter));
        break;
      case LayerKind::kMoe:
        pre.push_back(moe_forward(h.moe, act, &mcache[l], counter));
        balance += load_balance_loss(mcache[l].routing.f, mcache[l].routing.p);
        break;
    }
    act = pre.back();
    relu_inplace(act);
  }
  inputs.push_back(act);
  const Matrix out = dense_forward(readout_, act, counter);

  LossAndGrads r;
  r.balance = balance;
  Matrix g(n, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double res = out(i, 0) - batch.targets(i, 0);
    acc += res * res;
    g(i, 0) = 2.0 * res / static_cast<double>(n);
  }
  r.mse = acc / static_cast<double>(n);

  // Backward, filling gradients in reverse and flipping the list at the end.
  std::vector<std::vector<double>> rev;
  DenseGrads dr = dense_backward(readout_, inputs.back(), g);
  rev.push_back(to_std_vector(dr.bias));
  rev.push_back(to_std_vector(dr.w));
  Matrix up = std::move(dr.x);
  for (std::size_t li = hidden_.size(); li-- > 0;) {
    const auto& h = hidden_[li];
    relu_backward(up, pre[li + 1]);
    switch (h.kind) {
      case LayerKind::kDense: {
        DenseGrads dg = dense_backward(h.dense, inputs[li], up);
        rev.push_back(to_std_vector(dg.w));
        up = std::move(dg.x);
        break;
      }
      case LayerKind::kEinsum: {
        EinsumGrads eg = vjp(h.einsum, inputs[li], ecache[li], up);
        rev.push_back(std::move(eg.b));
        rev.push_back(std::move(eg.a));
        up = std::move(eg.x);
        break;
      }
      case LayerKind::kMoe: {
        MoeGrads mg = moe_backward(h.moe, mcache[li], up, h.moe.balance_coefficient);
        // Reverse of the params() order: gate, experts (a, b) or (up, down).
        std::vector<std::vector<double>> fwd;
        fwd.push_back(std::move(mg.gate));
        for (std::size_t e = 0; e < mg.a.size(); ++e) {
          fwd.push_back(std::move(mg.a[e]));
          fwd.push_back(std::move(mg.b[e]));
        }
        for (std::size_t e = 0; e < mg.up.size(); ++e) {
          fwd.push_back(std::move(mg.up[e]));
          if (e < mg.down.size()) fwd.push_back(std::move(mg.down[e]));
        }
        for (auto it = fwd.rbegin(); it != fwd.rend(); ++it) rev.push_back(std::move(*it));
        up = std::move(mg.x);
        break;
      }
    }
  }
  relu_backward(up, pre[0]);
  DenseGrads de = dense_backward(embed_, x, up, false);
  rev.push_back(to_std_vector(de.bias));
  rev.push_back(to_std_vector(de.w));
  r.grads.assign(std::make_move_iterator(rev.rbegin()), std::make_move_iterator(rev.rend()));
  return r;
}

void Student::weight_normalize() {
  for (auto& h : hidden_) {
    if (h.kind == LayerKind::kEinsum) einlin::weight_normalize(h.einsum);
    if (h.kind == LayerKind::kMoe) {
      for (auto& e : h.moe.einsum_experts) einlin::weight_normalize(e);
    }
  }
}

}  // namespace einlin
