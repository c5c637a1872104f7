// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/multiprecision/cpp_int.hpp>

#include "einlin/errors.hpp"
#include "einlin/mu_scaling.hpp"
#include "einlin/rng.hpp"
#include "einlin/structure_space.hpp"

namespace einlin {
namespace {

bool uses_einsum(MoeVariant v) noexcept { return v == MoeVariant::kBtt || v == MoeVariant::kLowRank; }

EinsumSpec expert_spec(std::int64_t width, const MoeConfig& config) {
  const ThetaVector theta = config.variant == MoeVariant::kBtt
                                ? presets::monarch()
                                : presets::low_rank(config.low_rank_theta_ab);
  return instantiate_spec(theta, width, width);
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.row(rows[i]).data(), x.cols(), out.row(i).data());
  }
  return out;
}

void relu_inplace(Matrix& m) noexcept {
  for (double& v : m.flat()) v = v > 0.0 ? v : 0.0;
}

// Unweighted expert outputs for the gathered rows.
Matrix run_expert(const MoELayer& layer, int e, MoeExpertCache& ec, MacCounter* counter) {
  switch (layer.variant) {
    case MoeVariant::kBtt:
    case MoeVariant::kLowRank:
      return mvm(layer.einsum_experts[static_cast<std::size_t>(e)], ec.input, ec.einsum, counter);
    case MoeVariant::kDense:
      return dense_forward(layer.up[static_cast<std::size_t>(e)], ec.input, counter);
    case MoeVariant::kFfn: {
      ec.hidden = dense_forward(layer.up[static_cast<std::size_t>(e)], ec.input, counter);
      Matrix act = ec.hidden;
      relu_inplace(act);
      return dense_forward(layer.down[static_cast<std::size_t>(e)], act, counter);
    }
  }
  return {};
}

}  // namespace

std::string_view to_string(MoeVariant variant) noexcept {
  switch (variant) {
    case MoeVariant::kBtt:
      return "btt";
    case MoeVariant::kLowRank:
      return "low-rank";
    case MoeVariant::kDense:
      return "dense";
    case MoeVariant::kFfn:
      return "ffn";
  }
  return "btt";
}

MoeVariant parse_moe_variant(std::string_view text) {
  if (text == "btt") return MoeVariant::kBtt;
  if (text == "low-rank" || text == "lowrank") return MoeVariant::kLowRank;
  if (text == "dense") return MoeVariant::kDense;
  if (text == "ffn") return MoeVariant::kFfn;
  throw ConfigError("unknown MoE variant '" + std::string(text) + "'");
}

Routing route_logits(const Matrix& logits, int k) {
  const int e_count = static_cast<int>(logits.cols());
  if (k < 1 || k > e_count) {
    throw ConfigError("top-k needs 1 <= k <= E, got k=" + std::to_string(k));
  }
  Routing r;
  r.tokens = logits.rows();
  r.k = k;
  r.num_experts = e_count;
  r.index.resize(r.tokens * static_cast<std::size_t>(k));
  r.weight.resize(r.index.size());
  std::vector<int> order(static_cast<std::size_t>(e_count));
  for (std::size_t t = 0; t < r.tokens; ++t) {
    const auto row = logits.row(t);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)] ||
             (row[static_cast<std::size_t>(a)] == row[static_cast<std::size_t>(b)] && a < b);
    });
    const double top = row[static_cast<std::size_t>(order[0])];
    double z = 0.0;
    for (int s = 0; s < k; ++s) {
      const double w = std::exp(row[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])] - top);
      r.index[t * static_cast<std::size_t>(k) + static_cast<std::size_t>(s)] = order[static_cast<std::size_t>(s)];
      r.weight[t * static_cast<std::size_t>(k) + static_cast<std::size_t>(s)] = w;
      z += w;
    }
    for (int s = 0; s < k; ++s) r.weight[t * static_cast<std::size_t>(k) + static_cast<std::size_t>(s)] /= z;
  }
  const auto experts = static_cast<std::size_t>(e_count);
  r.probs = Matrix(r.tokens, experts);
  r.f.assign(experts, 0.0);
  r.p.assign(experts, 0.0);
  for (std::size_t t = 0; t < r.tokens; ++t) {
    const auto row = logits.row(t);
    const double top = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    auto prow = r.probs.row(t);
    for (std::size_t e = 0; e < experts; ++e) z += (prow[e] = std::exp(row[e] - top));
    for (std::size_t e = 0; e < experts; ++e) {
      prow[e] /= z;
      r.p[e] += prow[e];
    }
    for (int s = 0; s < r.k; ++s) {
      r.f[static_cast<std::size_t>(r.index[t * static_cast<std::size_t>(r.k) + static_cast<std::size_t>(s)])] += 1.0;
    }
  }
  if (r.tokens > 0) {
    const double pairs = static_cast<double>(r.tokens) * r.k;
    for (std::size_t e = 0; e < experts; ++e) {
      r.f[e] /= pairs;
      r.p[e] /= static_cast<double>(r.tokens);
    }
  }
  r.logits = logits;
  return r;
}

Routing gate_forward(const GateState& gate, const Matrix& x, MacCounter* counter) {
  return route_logits(dense_forward(gate.linear, x, counter), gate.k);
}

double load_balance_loss(std::span<const double> f, std::span<const double> p) {
  if (f.size() != p.size()) throw ShapeMismatch("balance loss needs f and P of equal length");
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) acc += f[i] * p[i];
  return static_cast<double>(f.size()) * acc;
}

MoELayer init_moe(std::int64_t width, const MoeConfig& config, double base_lr,
                  std::int64_t base_width, std::uint64_t seed) {
  if (config.num_experts < 1) throw ConfigError("MoE needs at least one expert");
  if (config.k < 1 || config.k > config.num_experts) {
    throw ConfigError("MoE k must lie in [1, E]");
  }
  MoELayer layer;
  layer.variant = config.variant;
  layer.width = width;
  layer.balance_coefficient = config.balance_coefficient;
  layer.gate.num_experts = config.num_experts;
  layer.gate.k = config.k;
  layer.gate.linear = init_dense(width, config.num_experts, mup_init_sigma(width, config.num_experts),
                                 false, derive_seed(seed, 0));
  layer.gate.linear.lr = dense_adam_lr(base_lr, base_width, width);

  for (int e = 0; e < config.num_experts; ++e) {
    const std::uint64_t es = derive_seed(seed, static_cast<std::uint64_t>(e) + 1);
    switch (config.variant) {
      case MoeVariant::kBtt:
      case MoeVariant::kLowRank: {
        const EinsumSpec spec = expert_spec(width, config);
        EinsumLayer ex = init_layer(spec, init_plan(spec), es);
        const LrPlan lr = adam_lr_plan(spec, base_lr, base_width);
        ex.lr_a = lr.lr_a;
        ex.lr_b = lr.lr_b;
        layer.einsum_experts.push_back(std::move(ex));
        break;
      }
      case MoeVariant::kDense: {
        DenseLayer d = init_dense(width, width, mup_init_sigma(width, width), false, es);
        d.lr = dense_adam_lr(base_lr, base_width, width);
        layer.up.push_back(std::move(d));
        break;
      }
      case MoeVariant::kFfn: {
        const std::int64_t h = config.ffn_hidden > 0 ? config.ffn_hidden : width;
        DenseLayer u = init_dense(width, h, mup_init_sigma(width, h), false, derive_seed(es, 1));
        u.lr = dense_adam_lr(base_lr, base_width, width);
        DenseLayer d = init_dense(h, width, mup_init_sigma(h, width), false, derive_seed(es, 2));
        d.lr = dense_adam_lr(base_lr, base_width, h);
        layer.up.push_back(std::move(u));
        layer.down.push_back(std::move(d));
        break;
      }
    }
  }
  return layer;
}

std::int64_t expert_macs(const MoELayer& layer) noexcept {
  switch (layer.variant) {
    case MoeVariant::kBtt:
    case MoeVariant::kLowRank:
      return layer.einsum_experts.empty() ? 0 : count_flops(layer.einsum_experts.front().spec());
    case MoeVariant::kDense:
      return layer.width * layer.width;
    case MoeVariant::kFfn:
      return layer.up.empty() ? 0 : 2 * layer.width * layer.up.front().fan_out;
  }
  return 0;
}

std::int64_t moe_forward_macs(const MoELayer& layer) noexcept {
  return layer.width * layer.num_experts() + layer.k() * expert_macs(layer);
}

std::int64_t moe_param_count(const MoELayer& layer) noexcept {
  std::int64_t n = layer.gate.linear.param_count();
  for (const auto& e : layer.einsum_experts) n += count_params(e.spec());
  for (const auto& d : layer.up) n += d.param_count();
  for (const auto& d : layer.down) n += d.param_count();
  return n;
}

Matrix moe_forward(const MoELayer& layer, const Matrix& x, MoeCache* cache, MacCounter* counter) {
  if (static_cast<std::int64_t>(x.cols()) != layer.width) {
    throw ShapeMismatch("MoE input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(layer.width));
  }
  Routing routing = gate_forward(layer.gate, x, counter);
  if (cache) {
    cache->routing = std::move(routing);
    return moe_forward_routed(layer, x, cache->routing, cache, counter);
  }
  return moe_forward_routed(layer, x, routing, nullptr, counter);
}

Matrix moe_forward_routed(const MoELayer& layer, const Matrix& x, const Routing& routing,
                          MoeCache* cache, MacCounter* counter) {
  if (static_cast<std::int64_t>(x.cols()) != layer.width) {
    throw ShapeMismatch("MoE input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(layer.width));
  }
  if (routing.tokens != x.rows() || routing.num_experts != layer.num_experts() ||
      routing.index.size() != routing.tokens * static_cast<std::size_t>(routing.k) ||
      routing.weight.size() != routing.index.size()) {
    throw ShapeMismatch("routing does not match the MoE input batch");
  }
  const auto e_count = static_cast<std::size_t>(layer.num_experts());
  std::vector<MoeExpertCache> local;
  std::vector<MoeExpertCache>& experts = cache ? cache->experts : local;
  experts.assign(e_count, MoeExpertCache{});
  for (std::size_t t = 0; t < routing.tokens; ++t) {
    for (int s = 0; s < routing.k; ++s) {
      const int e = routing.index[t * static_cast<std::size_t>(routing.k) + static_cast<std::size_t>(s)];
      if (e < 0 || static_cast<std::size_t>(e) >= e_count) throw ShapeMismatch("expert index out of range");
      experts[static_cast<std::size_t>(e)].tokens.push_back(t);
      experts[static_cast<std::size_t>(e)].slots.push_back(s);
    }
  }
  Matrix y(x.rows(), x.cols());
  for (std::size_t e = 0; e < e_count; ++e) {
    auto& ec = experts[e];
    if (ec.tokens.empty()) continue;
    ec.input = gather_rows(x, ec.tokens);
    ec.output = run_expert(layer, static_cast<int>(e), ec, counter);
    for (std::size_t i = 0; i < ec.tokens.size(); ++i) {
      const std::size_t t = ec.tokens[i];
      const double g = routing.weight[t * static_cast<std::size_t>(routing.k) + static_cast<std::size_t>(ec.slots[i])];
      auto yr = y.row(t);
      const auto orow = ec.output.row(i);
      for (std::size_t c = 0; c < yr.size(); ++c) yr[c] += g * orow[c];
    }
  }
  if (cache) {
    cache->x = x;
    if (&cache->routing != &routing) cache->routing = routing;
  }
  return y;
}

MoeGrads moe_backward(const MoELayer& layer, const MoeCache& cache, const Matrix& upstream,
                      double balance_scale) {
  const Routing& r = cache.routing;
  const Matrix& x = cache.x;
  if (upstream.rows() != x.rows() || upstream.cols() != x.cols()) {
    throw ShapeMismatch("MoE upstream gradient shape does not match the cached input");
  }
  const auto e_count = static_cast<std::size_t>(layer.num_experts());
  const auto k = static_cast<std::size_t>(r.k);
  MoeGrads g;
  g.x = Matrix(x.rows(), x.cols());
  if (uses_einsum(layer.variant)) {
    g.a.resize(e_count);
    g.b.resize(e_count);
  } else {
    g.up.resize(e_count);
    if (layer.variant == MoeVariant::kFfn) g.down.resize(e_count);
  }
  // d loss / d routing weight, per (token, slot).
  std::vector<double> dweight(r.index.size(), 0.0);

  for (std::size_t e = 0; e < e_count; ++e) {
    const auto& ec = cache.experts[e];
    if (ec.tokens.empty()) {
      if (uses_einsum(layer.variant)) {
        g.a[e].assign(layer.einsum_experts[e].a_data().size(), 0.0);
        g.b[e].assign(layer.einsum_experts[e].b_data().size(), 0.0);
      } else {
        g.up[e].assign(layer.up[e].w.size(), 0.0);
        if (layer.variant == MoeVariant::kFfn) g.down[e].assign(layer.down[e].w.size(), 0.0);
      }
      continue;
    }
    Matrix up_e(ec.tokens.size(), x.cols());
    for (std::size_t i = 0; i < ec.tokens.size(); ++i) {
      const std::size_t t = ec.tokens[i];
      const std::size_t slot = t * k + static_cast<std::size_t>(ec.slots[i]);
      const double w = r.weight[slot];
      const auto urow = upstream.row(t);
      const auto orow = ec.output.row(i);
      double dot = 0.0;
      auto dst = up_e.row(i);
      for (std::size_t c = 0; c < urow.size(); ++c) {
        dot += urow[c] * orow[c];
        dst[c] = w * urow[c];
      }
      dweight[slot] = dot;
    }
    Matrix gx;
    switch (layer.variant) {
      case MoeVariant::kBtt:
      case MoeVariant::kLowRank: {
        EinsumGrads eg = vjp(layer.einsum_experts[e], ec.input, ec.einsum, up_e);
        g.a[e] = std::move(eg.a);
        g.b[e] = std::move(eg.b);
        gx = std::move(eg.x);
        break;
      }
      case MoeVariant::kDense: {
        DenseGrads dg = dense_backward(layer.up[e], ec.input, up_e);
        g.up[e] = to_std_vector(dg.w);
        gx = std::move(dg.x);
        break;
      }
      case MoeVariant::kFfn: {
        Matrix act = ec.hidden;
        relu_inplace(act);
        DenseGrads dd = dense_backward(layer.down[e], act, up_e);
        for (std::size_t i = 0; i < dd.x.size(); ++i) {
          if (!(ec.hidden.flat()[i] > 0.0)) dd.x.flat()[i] = 0.0;
        }
        DenseGrads du = dense_backward(layer.up[e], ec.input, dd.x);
        g.down[e] = to_std_vector(dd.w);
        g.up[e] = to_std_vector(du.w);
        gx = std::move(du.x);
        break;
      }
    }
    for (std::size_t i = 0; i < ec.tokens.size(); ++i) {
      auto dst = g.x.row(ec.tokens[i]);
      const auto src = gx.row(i);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
  }

  // Softmax over the selected logits: dl_j = w_j (dw_j - Σ_s w_s dw_s).
  Matrix dlogits(r.tokens, e_count);
  for (std::size_t t = 0; t < r.tokens; ++t) {
    double mean = 0.0;
    for (std::size_t s = 0; s < k; ++s) mean += r.weight[t * k + s] * dweight[t * k + s];
    for (std::size_t s = 0; s < k; ++s) {
      const std::size_t slot = t * k + s;
      dlogits(t, static_cast<std::size_t>(r.index[slot])) += r.weight[slot] * (dweight[slot] - mean);
    }
  }
  // Balance term E·Σ f_i P_i: f is piecewise constant, P depends on every logit.
  if (balance_scale != 0.0 && r.has_statistics() && r.tokens > 0) {
    const double scale = balance_scale * static_cast<double>(e_count) / static_cast<double>(r.tokens);
    for (std::size_t t = 0; t < r.tokens; ++t) {
      const auto prow = r.probs.row(t);
      double fp = 0.0;
      for (std::size_t e = 0; e < e_count; ++e) fp += r.f[e] * prow[e];
      for (std::size_t e = 0; e < e_count; ++e) dlogits(t, e) += scale * prow[e] * (r.f[e] - fp);
    }
  }
  DenseGrads gg = dense_backward(layer.gate.linear, x, dlogits);
  g.gate = to_std_vector(gg.w);
  for (std::size_t i = 0; i < g.x.size(); ++i) g.x.flat()[i] += gg.x.flat()[i];
  return g;
}

CombinationCount expert_combination_count(int num_experts, int num_layers, int per_layer_count) {
  if (num_experts < 2) throw OutOfRange("combination count needs E >= 2");
  if (num_layers < 0 || per_layer_count < 0) throw OutOfRange("negative layer count");
  namespace mp = boost::multiprecision;
  const mp::cpp_int pairs = mp::cpp_int(num_experts) * (num_experts - 1) / 2;
  const auto power = static_cast<unsigned>(num_layers) * static_cast<unsigned>(per_layer_count);
  const mp::cpp_int total = mp::pow(pairs, power);
  CombinationCount out;
  out.exact = total.str();
  out.log10 = static_cast<double>(power) * std::log10(pairs.convert_to<double>());
  return out;
}

}  // namespace einlin
