// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/mu_scaling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Dense>

#include "einlin/errors.hpp"

namespace einlin {
namespace {

__extension__ typedef __int128 i128;

// Exact non-negative rational, kept reduced so equal values share a
// representation and convert to the same double.
struct Rational {
  i128 num = 0;
  i128 den = 1;
};

i128 gcd128(i128 a, i128 b) {
  while (b != 0) {
    const i128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

Rational make_rational(i128 num, i128 den) {
  const i128 g = gcd128(num, den);
  return {num / g, den / g};
}

double to_double(const Rational& r) {
  return static_cast<double>(static_cast<long double>(r.num) / static_cast<long double>(r.den));
}

double mean_abs_offdiag(const Eigen::MatrixXd& m) {
  const auto n = m.rows();
  if (n < 2) return 0.0;
  const double total = m.cwiseAbs().sum() - m.diagonal().cwiseAbs().sum();
  return total / static_cast<double>(n * (n - 1));
}

double relative_to(double value, double scale) { return scale > 0.0 ? value / scale : value; }

}  // namespace

std::string_view to_string(OptimizerKind kind) noexcept {
  switch (kind) {
    case OptimizerKind::kAdam:
      return "adam";
    case OptimizerKind::kSgd:
      return "sgd";
    case OptimizerKind::kRsgd:
      return "rsgd";
  }
  return "adam";
}

FactorIoDims factor_io_dims(const EinsumSpec& s) noexcept {
  return {s.xa, s.ya * s.yab * s.ab, s.xb * s.xab * s.ab, s.yb};
}

double mup_init_sigma(std::int64_t fan_in, std::int64_t fan_out) noexcept {
  const double in = static_cast<double>(fan_in);
  return std::sqrt(static_cast<double>(std::min(fan_in, fan_out)) / (in * in));
}

InitPlan init_plan(const EinsumSpec& spec) noexcept {
  const auto io = factor_io_dims(spec);
  return {mup_init_sigma(io.d_in_a, io.d_out_a), mup_init_sigma(io.d_in_b, io.d_out_b)};
}

LrPlan adam_lr_plan(const EinsumSpec& s, double base_lr, std::int64_t base_width) noexcept {
  LrPlan plan;
  plan.base_lr = base_lr;
  plan.base_width = base_width;
  plan.optimizer = OptimizerKind::kAdam;
  const double scaled = static_cast<double>(base_width) * base_lr;
  plan.lr_a = scaled / (2.0 * static_cast<double>(s.xa));
  plan.lr_b = scaled / (2.0 * static_cast<double>(s.xb * s.xab * s.ab));
  return plan;
}

double dense_adam_lr(double base_lr, std::int64_t base_width, std::int64_t fan_in) noexcept {
  return static_cast<double>(base_width) * base_lr / static_cast<double>(fan_in);
}

EffectiveRates sgd_and_rsgd_exponents(const EinsumSpec& s, const InitPlan& init) noexcept {
  const double xa = static_cast<double>(s.xa);
  const double xb = static_cast<double>(s.xb);
  const double ya = static_cast<double>(s.ya);
  const double yb = static_cast<double>(s.yb);
  const double xab = static_cast<double>(s.xab);
  const double yab = static_cast<double>(s.yab);
  const double ab = static_cast<double>(s.ab);
  EffectiveRates r;
  r.rsgd_a = 1.0 / (xb * yb * init.sigma_b * init.sigma_b);
  r.rsgd_b = 1.0 / (xa * ya * init.sigma_a * init.sigma_a);
  r.mup_sgd_a = (1.0 / xb) * (xb * xab * ab / xa);
  r.mup_sgd_b = (1.0 / ya) * (yb / (ya * yab * ab));
  return r;
}

EffectiveRates sgd_and_rsgd_exponents(const EinsumSpec& s) noexcept {
  const auto io = factor_io_dims(s);
  // sigma² = min(in, out) / in², so 1 / (c · sigma²) = in² / (c · min(in, out)).
  const i128 in_a = io.d_in_a;
  const i128 in_b = io.d_in_b;
  const i128 min_a = std::min(io.d_in_a, io.d_out_a);
  const i128 min_b = std::min(io.d_in_b, io.d_out_b);
  EffectiveRates r;
  r.rsgd_a = to_double(make_rational(in_b * in_b, i128{s.xb} * s.yb * min_b));
  r.rsgd_b = to_double(make_rational(in_a * in_a, i128{s.xa} * s.ya * min_a));
  r.mup_sgd_a = to_double(make_rational(i128{s.xb} * s.xab * s.ab, i128{s.xb} * s.xa));
  r.mup_sgd_b = to_double(make_rational(s.yb, i128{s.ya} * s.ya * s.yab * s.ab));
  return r;
}

bool rsgd_mup_condition(const EinsumSpec& s) noexcept {
  return s.xa == s.yb && s.xb * s.xab * s.ab <= s.yb && s.ya * s.yab * s.ab <= s.xa;
}

MetricBlockReport metric_block_check(const EinsumLayer& layer, int trials, std::uint64_t seed,
                                     std::int64_t cap) {
  const auto& s = layer.spec();
  if (trials < 1) throw OutOfRange("metric_block_check needs at least one trial");
  const std::int64_t na = s.a_size();
  const std::int64_t nb = s.b_size();
  const std::int64_t rows = s.d_in * s.d_out;
  if (rows > cap / (na + nb)) {
    throw CapExceeded("Jacobian of " + std::to_string(rows) + " x " + std::to_string(na + nb) +
                      " exceeds cap " + std::to_string(cap));
  }
  const InitPlan plan{layer.init_std_a, layer.init_std_b};
  Eigen::MatrixXd jac(rows, na + nb);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(na + nb, na + nb);
  for (int trial = 0; trial < trials; ++trial) {
    const auto draw = init_layer(s, plan, seed + static_cast<std::uint64_t>(trial));
    jac.setZero();
    for (std::int64_t al = 0; al < s.xa; ++al)
      for (std::int64_t be = 0; be < s.xb; ++be)
        for (std::int64_t g = 0; g < s.xab; ++g) {
          const std::int64_t col = (al * s.xb + be) * s.xab + g;
          for (std::int64_t d = 0; d < s.ya; ++d)
            for (std::int64_t e = 0; e < s.yb; ++e)
              for (std::int64_t f = 0; f < s.yab; ++f) {
                const std::int64_t row = ((d * s.yb + e) * s.yab + f) * s.d_in + col;
                for (std::int64_t r = 0; r < s.ab; ++r) {
                  const auto ia = static_cast<Eigen::Index>(draw.a_offset(al, g, d, f, r));
                  const auto ib = static_cast<Eigen::Index>(draw.b_offset(be, g, e, f, r));
                  jac(row, ia) += draw.b(be, g, e, f, r);
                  jac(row, na + ib) += draw.a(al, g, d, f, r);
                }
              }
        }
    gram.noalias() += jac.transpose() * jac;
  }
  gram /= static_cast<double>(trials);

  const auto blk_aa = gram.topLeftCorner(na, na);
  const auto blk_bb = gram.bottomRightCorner(nb, nb);
  const auto blk_ab = gram.topRightCorner(na, nb);

  MetricBlockReport rep;
  rep.trials = trials;
  rep.predicted_aa = static_cast<double>(s.xb * s.yb) * plan.sigma_b * plan.sigma_b;
  rep.predicted_bb = static_cast<double>(s.xa * s.ya) * plan.sigma_a * plan.sigma_a;
  rep.mean_diag_aa = blk_aa.diagonal().mean();
  rep.mean_diag_bb = blk_bb.diagonal().mean();
  rep.diag_dev_aa = relative_to(std::abs(rep.mean_diag_aa - rep.predicted_aa), rep.predicted_aa);
  rep.diag_dev_bb = relative_to(std::abs(rep.mean_diag_bb - rep.predicted_bb), rep.predicted_bb);
  rep.offdiag_aa = relative_to(mean_abs_offdiag(blk_aa), rep.predicted_aa);
  rep.offdiag_bb = relative_to(mean_abs_offdiag(blk_bb), rep.predicted_bb);
  rep.cross_ab = relative_to(blk_ab.cwiseAbs().mean(), std::sqrt(rep.predicted_aa * rep.predicted_bb));
  rep.max_abs_aa = blk_aa.cwiseAbs().maxCoeff();
  rep.max_abs_bb = blk_bb.cwiseAbs().maxCoeff();
  return rep;
}

void weight_normalize(EinsumLayer& layer) {
  if (layer.block_rms_a.size() != static_cast<std::size_t>(layer.a_blocks()) ||
      layer.block_rms_b.size() != static_cast<std::size_t>(layer.b_blocks())) {
    throw ShapeMismatch("weight_normalize: layer has no recorded block targets");
  }
  const auto rescale = [](std::span<double> data, std::size_t block, std::span<const double> targets) {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      auto blk = data.subspan(i * block, block);
      double ss = 0.0;
      for (const double v : blk) ss += v * v;
      const double rms = std::sqrt(ss / static_cast<double>(block));
      if (!(rms > 0.0) || !std::isfinite(rms)) continue;
      const double k = targets[i] / rms;
      for (double& v : blk) v *= k;
    }
  };
  rescale(layer.a_data(), static_cast<std::size_t>(layer.a_block_size()), layer.block_rms_a);
  rescale(layer.b_data(), static_cast<std::size_t>(layer.b_block_size()), layer.block_rms_b);
}

}  // namespace einlin
