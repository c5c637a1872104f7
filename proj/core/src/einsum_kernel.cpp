// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/einsum_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "einlin/errors.hpp"

namespace einlin {
namespace {

std::vector<std::int64_t> divisors(std::int64_t n) {
  std::vector<std::int64_t> lo;
  std::vector<std::int64_t> hi;
  for (std::int64_t d = 1; d * d <= n; ++d) {
    if (n % d == 0) {
      lo.push_back(d);
      if (d != n / d) hi.push_back(n / d);
    }
  }
  lo.insert(lo.end(), hi.rbegin(), hi.rend());
  return lo;
}

std::int64_t nearest_divisor(std::int64_t n, double target) {
  const auto divs = divisors(n);
  if (divs.empty()) throw InfeasibleFactorization("no divisors of " + std::to_string(n));
  const double tie_eps = 1e-9 * std::max(1.0, target);
  std::int64_t best = divs.front();
  double best_dist = std::abs(static_cast<double>(best) - target);
  for (const auto d : divs) {
    const double dist = std::abs(static_cast<double>(d) - target);
    // Ascending scan: only a strictly closer divisor replaces the current one.
    if (dist < best_dist - tie_eps) {
      best = d;
      best_dist = dist;
    }
  }
  return best;
}

void check_input(const EinsumSpec& s, const Matrix& x) {
  if (static_cast<std::int64_t>(x.cols()) != s.d_in) {
    throw ShapeMismatch("einsum input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(s.d_in));
  }
}

// Step 1: Z[t][β][γ][δφρ] = Σ_α X[t][α,β,γ] · A[γ][α][δφρ].
void contract_a(const EinsumLayer& layer, const double* x, std::size_t batch, double* z,
                MacCounter* counter) {
  const auto& s = layer.spec();
  const std::int64_t p = s.ya * s.yab * s.ab;
  const std::int64_t zs = s.z_size();
  const double* a = layer.a_data().data();
  for (std::size_t t = 0; t < batch; ++t) {
    const double* xt = x + t * s.d_in;
    double* zt = z + t * zs;
    for (std::int64_t beta = 0; beta < s.xb; ++beta) {
      for (std::int64_t gamma = 0; gamma < s.xab; ++gamma) {
        double* zr = zt + (beta * s.xab + gamma) * p;
        std::fill(zr, zr + p, 0.0);
        const double* blk = a + gamma * s.xa * p;
        for (std::int64_t alpha = 0; alpha < s.xa; ++alpha) {
          const double xv = xt[(alpha * s.xb + beta) * s.xab + gamma];
          const double* ar = blk + alpha * p;
          for (std::int64_t k = 0; k < p; ++k) zr[k] += xv * ar[k];
        }
        if (counter) counter->add(static_cast<std::uint64_t>(s.xa * p));
      }
    }
  }
}

// Step 2: Y[t][δ,ε,φ] = Σ_{β,γ,ρ} Z[t][β][γ][δ][φ][ρ] · B[φ][β][γ][ρ][ε].
void contract_b(const EinsumLayer& layer, const double* z, std::size_t batch, double* y,
                MacCounter* counter) {
  const auto& s = layer.spec();
  const std::int64_t p = s.ya * s.yab * s.ab;
  const std::int64_t zs = s.z_size();
  const std::int64_t rows = s.xb * s.xab * s.ab;
  const double* b = layer.b_data().data();
  std::vector<double> acc(static_cast<std::size_t>(s.yb));
  for (std::size_t t = 0; t < batch; ++t) {
    const double* zt = z + t * zs;
    double* yt = y + t * s.d_out;
    for (std::int64_t delta = 0; delta < s.ya; ++delta) {
      for (std::int64_t phi = 0; phi < s.yab; ++phi) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const double* blk = b + phi * rows * s.yb;
        for (std::int64_t bg = 0; bg < s.xb * s.xab; ++bg) {
          const double* zr = zt + bg * p + (delta * s.yab + phi) * s.ab;
          for (std::int64_t rho = 0; rho < s.ab; ++rho) {
            const double zv = zr[rho];
            const double* br = blk + (bg * s.ab + rho) * s.yb;
            for (std::int64_t eps = 0; eps < s.yb; ++eps) acc[eps] += zv * br[eps];
          }
        }
        if (counter) counter->add(static_cast<std::uint64_t>(rows * s.yb));
        for (std::int64_t eps = 0; eps < s.yb; ++eps) {
          yt[(delta * s.yb + eps) * s.yab + phi] = acc[eps];
        }
      }
    }
  }
}

double block_rms(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double ss = 0.0;
  for (const double x : v) ss += x * x;
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

void EinsumSpec::validate() const {
  const std::int64_t ranges[] = {xa, xb, xab, ya, yb, yab, ab};
  for (const auto r : ranges) {
    if (r < 1) throw InfeasibleFactorization("einsum index range must be >= 1");
  }
  if (xa * xb * xab != d_in) {
    throw InfeasibleFactorization("xa*xb*xab = " + std::to_string(xa * xb * xab) +
                                  " does not equal d_in = " + std::to_string(d_in));
  }
  if (ya * yb * yab != d_out) {
    throw InfeasibleFactorization("ya*yb*yab = " + std::to_string(ya * yb * yab) +
                                  " does not equal d_out = " + std::to_string(d_out));
  }
}

EinsumSpec make_spec(std::int64_t xa, std::int64_t xb, std::int64_t xab, std::int64_t ya,
                     std::int64_t yb, std::int64_t yab, std::int64_t ab) {
  EinsumSpec s{xa, xb, xab, ya, yb, yab, ab, xa * xb * xab, ya * yb * yab};
  s.validate();
  return s;
}

EinsumSpec instantiate_spec(const ThetaVector& theta, std::int64_t d_in, std::int64_t d_out) {
  if (d_in < 1 || d_out < 1) {
    throw InfeasibleFactorization("layer dimensions must be >= 1");
  }
  const auto din = static_cast<double>(d_in);
  const auto dout = static_cast<double>(d_out);
  EinsumSpec s;
  s.d_in = d_in;
  s.d_out = d_out;
  s.xa = nearest_divisor(d_in, std::pow(din, theta.xa));
  s.xb = nearest_divisor(d_in / s.xa, std::pow(din, theta.xb));
  s.xab = d_in / (s.xa * s.xb);
  s.ya = nearest_divisor(d_out, std::pow(dout, theta.ya));
  s.yb = nearest_divisor(d_out / s.ya, std::pow(dout, theta.yb));
  s.yab = d_out / (s.ya * s.yb);
  const double ab = std::pow(static_cast<double>(std::min(d_in, d_out)), theta.ab);
  s.ab = std::max<std::int64_t>(1, std::llround(ab));
  s.validate();
  return s;
}

std::int64_t count_flops(const EinsumSpec& s) noexcept {
  return s.d_in * s.ya * s.yab * s.ab + s.d_out * s.xb * s.xab * s.ab;
}

std::int64_t count_params(const EinsumSpec& s) noexcept { return s.a_size() + s.b_size(); }

std::int64_t predicted_rank(const EinsumSpec& s) noexcept {
  return std::min({s.d_in, s.d_out, s.z_size()});
}

EinsumLayer::EinsumLayer(const EinsumSpec& spec)
    : spec_(spec),
      a_(static_cast<std::size_t>(spec.a_size()), 0.0),
      b_(static_cast<std::size_t>(spec.b_size()), 0.0) {
  spec_.validate();
}

std::vector<double> EinsumLayer::a_declared() const {
  const auto& s = spec_;
  std::vector<double> out;
  out.reserve(a_.size());
  for (std::int64_t al = 0; al < s.xa; ++al)
    for (std::int64_t g = 0; g < s.xab; ++g)
      for (std::int64_t d = 0; d < s.ya; ++d)
        for (std::int64_t f = 0; f < s.yab; ++f)
          for (std::int64_t r = 0; r < s.ab; ++r) out.push_back(a(al, g, d, f, r));
  return out;
}

std::vector<double> EinsumLayer::b_declared() const {
  const auto& s = spec_;
  std::vector<double> out;
  out.reserve(b_.size());
  for (std::int64_t be = 0; be < s.xb; ++be)
    for (std::int64_t g = 0; g < s.xab; ++g)
      for (std::int64_t e = 0; e < s.yb; ++e)
        for (std::int64_t f = 0; f < s.yab; ++f)
          for (std::int64_t r = 0; r < s.ab; ++r) out.push_back(b(be, g, e, f, r));
  return out;
}

void EinsumLayer::set_a_declared(std::span<const double> values) {
  if (values.size() != a_.size()) throw ShapeMismatch("factor A entry count mismatch");
  const auto& s = spec_;
  std::size_t i = 0;
  for (std::int64_t al = 0; al < s.xa; ++al)
    for (std::int64_t g = 0; g < s.xab; ++g)
      for (std::int64_t d = 0; d < s.ya; ++d)
        for (std::int64_t f = 0; f < s.yab; ++f)
          for (std::int64_t r = 0; r < s.ab; ++r) a(al, g, d, f, r) = values[i++];
}

void EinsumLayer::set_b_declared(std::span<const double> values) {
  if (values.size() != b_.size()) throw ShapeMismatch("factor B entry count mismatch");
  const auto& s = spec_;
  std::size_t i = 0;
  for (std::int64_t be = 0; be < s.xb; ++be)
    for (std::int64_t g = 0; g < s.xab; ++g)
      for (std::int64_t e = 0; e < s.yb; ++e)
        for (std::int64_t f = 0; f < s.yab; ++f)
          for (std::int64_t r = 0; r < s.ab; ++r) b(be, g, e, f, r) = values[i++];
}

void record_block_targets(EinsumLayer& layer) {
  const auto a = layer.a_data();
  const auto b = layer.b_data();
  const auto na = static_cast<std::size_t>(layer.a_block_size());
  const auto nb = static_cast<std::size_t>(layer.b_block_size());
  layer.block_rms_a.assign(static_cast<std::size_t>(layer.a_blocks()), 0.0);
  layer.block_rms_b.assign(static_cast<std::size_t>(layer.b_blocks()), 0.0);
  for (std::size_t i = 0; i < layer.block_rms_a.size(); ++i) {
    layer.block_rms_a[i] = block_rms(a.subspan(i * na, na));
  }
  for (std::size_t i = 0; i < layer.block_rms_b.size(); ++i) {
    layer.block_rms_b[i] = block_rms(b.subspan(i * nb, nb));
  }
}

EinsumLayer init_layer(const EinsumSpec& spec, const InitPlan& plan, std::uint64_t seed) {
  EinsumLayer layer(spec);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& s = spec;
  for (std::int64_t al = 0; al < s.xa; ++al)
    for (std::int64_t g = 0; g < s.xab; ++g)
      for (std::int64_t d = 0; d < s.ya; ++d)
        for (std::int64_t f = 0; f < s.yab; ++f)
          for (std::int64_t r = 0; r < s.ab; ++r) layer.a(al, g, d, f, r) = plan.sigma_a * normal(gen);
  for (std::int64_t be = 0; be < s.xb; ++be)
    for (std::int64_t g = 0; g < s.xab; ++g)
      for (std::int64_t e = 0; e < s.yb; ++e)
        for (std::int64_t f = 0; f < s.yab; ++f)
          for (std::int64_t r = 0; r < s.ab; ++r) layer.b(be, g, e, f, r) = plan.sigma_b * normal(gen);
  layer.init_std_a = plan.sigma_a;
  layer.init_std_b = plan.sigma_b;
  layer.seed = seed;
  record_block_targets(layer);
  return layer;
}

Matrix mvm(const EinsumLayer& layer, const Matrix& x, EinsumCache& cache, MacCounter* counter) {
  const auto& s = layer.spec();
  check_input(s, x);
  const std::size_t batch = x.rows();
  cache.z.assign(batch * static_cast<std::size_t>(s.z_size()), 0.0);
  Matrix y(batch, static_cast<std::size_t>(s.d_out));
  contract_a(layer, x.data(), batch, cache.z.data(), counter);
  contract_b(layer, cache.z.data(), batch, y.data(), counter);
  return y;
}

Matrix mvm(const EinsumLayer& layer, const Matrix& x, MacCounter* counter) {
  EinsumCache cache;
  return mvm(layer, x, cache, counter);
}

EinsumGrads vjp(const EinsumLayer& layer, const Matrix& x, const EinsumCache& cache,
                const Matrix& upstream) {
  const auto& s = layer.spec();
  check_input(s, x);
  if (upstream.rows() != x.rows() || static_cast<std::int64_t>(upstream.cols()) != s.d_out) {
    throw ShapeMismatch("upstream gradient shape does not match layer output");
  }
  const std::size_t batch = x.rows();
  const std::int64_t p = s.ya * s.yab * s.ab;
  const std::int64_t zs = s.z_size();
  const std::int64_t rows = s.xb * s.xab * s.ab;
  if (cache.z.size() != batch * static_cast<std::size_t>(zs)) {
    throw ShapeMismatch("einsum cache does not match the input batch");
  }

  EinsumGrads g;
  g.a.assign(static_cast<std::size_t>(s.a_size()), 0.0);
  g.b.assign(static_cast<std::size_t>(s.b_size()), 0.0);
  g.x = Matrix(batch, static_cast<std::size_t>(s.d_in));
  std::vector<double> gz(cache.z.size(), 0.0);
  std::vector<double> gy(static_cast<std::size_t>(s.yb));

  const double* bdat = layer.b_data().data();
  for (std::size_t t = 0; t < batch; ++t) {
    const double* zt = cache.z.data() + t * zs;
    double* gzt = gz.data() + t * zs;
    const auto ut = upstream.row(t);
    for (std::int64_t delta = 0; delta < s.ya; ++delta) {
      for (std::int64_t phi = 0; phi < s.yab; ++phi) {
        for (std::int64_t eps = 0; eps < s.yb; ++eps) {
          gy[eps] = ut[(delta * s.yb + eps) * s.yab + phi];
        }
        const double* blk = bdat + phi * rows * s.yb;
        double* gblk = g.b.data() + phi * rows * s.yb;
        for (std::int64_t bg = 0; bg < s.xb * s.xab; ++bg) {
          const std::int64_t zoff = bg * p + (delta * s.yab + phi) * s.ab;
          for (std::int64_t rho = 0; rho < s.ab; ++rho) {
            const double* br = blk + (bg * s.ab + rho) * s.yb;
            double* gbr = gblk + (bg * s.ab + rho) * s.yb;
            const double zv = zt[zoff + rho];
            double dot = 0.0;
            for (std::int64_t eps = 0; eps < s.yb; ++eps) {
              dot += br[eps] * gy[eps];
              gbr[eps] += zv * gy[eps];
            }
            gzt[zoff + rho] = dot;
          }
        }
      }
    }
  }

  const double* adat = layer.a_data().data();
  for (std::size_t t = 0; t < batch; ++t) {
    const auto xt = x.row(t);
    auto gxt = g.x.row(t);
    const double* gzt = gz.data() + t * zs;
    for (std::int64_t beta = 0; beta < s.xb; ++beta) {
      for (std::int64_t gamma = 0; gamma < s.xab; ++gamma) {
        const double* gzr = gzt + (beta * s.xab + gamma) * p;
        const double* blk = adat + gamma * s.xa * p;
        double* gblk = g.a.data() + gamma * s.xa * p;
        for (std::int64_t alpha = 0; alpha < s.xa; ++alpha) {
          const auto xi = static_cast<std::size_t>((alpha * s.xb + beta) * s.xab + gamma);
          const double xv = xt[xi];
          const double* ar = blk + alpha * p;
          double* gar = gblk + alpha * p;
          double dot = 0.0;
          for (std::int64_t k = 0; k < p; ++k) {
            dot += ar[k] * gzr[k];
            gar[k] += xv * gzr[k];
          }
          gxt[xi] = dot;
        }
      }
    }
  }
  return g;
}

EinsumGrads vjp(const EinsumLayer& layer, const Matrix& x, const Matrix& upstream) {
  EinsumCache cache;
  (void)mvm(layer, x, cache);
  return vjp(layer, x, cache, upstream);
}

Matrix materialize(const EinsumLayer& layer, std::int64_t cap) {
  const auto& s = layer.spec();
  if (s.d_in * s.d_out > cap) {
    throw CapExceeded("materializing a " + std::to_string(s.d_out) + "x" +
                      std::to_string(s.d_in) + " operator exceeds the cap of " +
                      std::to_string(cap) + " entries");
  }
  Matrix w(static_cast<std::size_t>(s.d_out), static_cast<std::size_t>(s.d_in));
  for (std::int64_t al = 0; al < s.xa; ++al)
    for (std::int64_t be = 0; be < s.xb; ++be)
      for (std::int64_t g = 0; g < s.xab; ++g)
        for (std::int64_t d = 0; d < s.ya; ++d)
          for (std::int64_t e = 0; e < s.yb; ++e)
            for (std::int64_t f = 0; f < s.yab; ++f)
              for (std::int64_t r = 0; r < s.ab; ++r) {
                const auto row = static_cast<std::size_t>((d * s.yb + e) * s.yab + f);
                const auto col = static_cast<std::size_t>((al * s.xb + be) * s.xab + g);
                w(row, col) += layer.b(be, g, e, f, r) * layer.a(al, g, d, f, r);
              }
  return w;
}

}  // namespace einlin
