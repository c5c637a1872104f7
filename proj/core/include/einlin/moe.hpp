// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_MOE_HPP
#define EINLIN_MOE_HPP

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "einlin/dense.hpp"
#include "einlin/einsum_kernel.hpp"
#include "einlin/matrix.hpp"

namespace einlin {

/// btt: Monarch experts mixed over the rank index. low-rank: low-rank
/// experts. dense: one native d x d matrix per expert. ffn: W_down ReLU(W_up x).
enum class MoeVariant { kBtt, kLowRank, kDense, kFfn };

std::string_view to_string(MoeVariant variant) noexcept;
/// Accepts btt, low-rank (lowrank), dense, ffn. Throws ConfigError.
MoeVariant parse_moe_variant(std::string_view text);

struct MoeConfig {
  MoeVariant variant = MoeVariant::kBtt;
  int num_experts = 8;
  int k = 2;
  double balance_coefficient = 0.01;
  /// θ_ab of each low-rank expert.
  double low_rank_theta_ab = 0.5;
  /// FFN hidden width; 0 means the layer width.
  std::int64_t ffn_hidden = 0;
};

/// Linear router x -> logits in R^E with top-k selection.
struct GateState {
  DenseLayer linear;  // d_in x E, no bias
  int num_experts = 1;
  int k = 1;
};

/// Per-token expert choice. index/weight hold `k` entries per token ordered by
/// descending logit. logits/probs/f/p are filled by gate_forward and left
/// empty for hand-built routings.
struct Routing {
  std::size_t tokens = 0;
  int k = 1;
  int num_experts = 1;
  std::vector<int> index;
  std::vector<double> weight;
  Matrix logits;
  Matrix probs;  // softmax over all E logits
  std::vector<double> f;  // fraction of (token, slot) pairs per expert
  std::vector<double> p;  // mean full-softmax probability per expert

  bool has_statistics() const noexcept { return !f.empty(); }
};

/// Top-k over each row (ties go to the lower index) with softmax over the
/// selected logits only. Also fills probs, f and p.
Routing route_logits(const Matrix& logits, int k);

Routing gate_forward(const GateState& gate, const Matrix& x, MacCounter* counter = nullptr);

/// E · Σ f_i P_i. Throws ShapeMismatch on length mismatch.
double load_balance_loss(std::span<const double> f, std::span<const double> p);

struct MoELayer {
  MoeVariant variant = MoeVariant::kBtt;
  std::int64_t width = 0;
  GateState gate;
  double balance_coefficient = 0.01;
  std::vector<EinsumLayer> einsum_experts;  // btt, low-rank
  std::vector<DenseLayer> up;               // dense (the whole expert), ffn (W_up)
  std::vector<DenseLayer> down;             // ffn (W_down)

  int num_experts() const noexcept { return gate.num_experts; }
  int k() const noexcept { return gate.k; }
};

/// Experts and gate carry μP init scales and Adam rates transferred from
/// (base_lr, base_width). Throws ConfigError on k outside [1, E].
MoELayer init_moe(std::int64_t width, const MoeConfig& config, double base_lr,
                  std::int64_t base_width, std::uint64_t seed);

std::int64_t expert_macs(const MoELayer& layer) noexcept;
/// d·E gate MACs plus k expert evaluations, per token.
std::int64_t moe_forward_macs(const MoELayer& layer) noexcept;
std::int64_t moe_param_count(const MoELayer& layer) noexcept;

struct MoeExpertCache {
  std::vector<std::size_t> tokens;
  std::vector<int> slots;
  Matrix input;
  Matrix hidden;  // ffn pre-activation
  Matrix output;  // unweighted expert output
  EinsumCache einsum;
};

struct MoeCache {
  Matrix x;
  Routing routing;
  std::vector<MoeExpertCache> experts;
};

/// Y = Σ_selected g · Expert(x), evaluating only the selected experts.
/// Throws ShapeMismatch.
Matrix moe_forward(const MoELayer& layer, const Matrix& x, MoeCache* cache = nullptr,
                   MacCounter* counter = nullptr);
Matrix moe_forward_routed(const MoELayer& layer, const Matrix& x, const Routing& routing,
                          MoeCache* cache = nullptr, MacCounter* counter = nullptr);

struct MoeGrads {
  Matrix x;
  std::vector<double> gate;
  std::vector<std::vector<double>> a;  // einsum experts, internal layout
  std::vector<std::vector<double>> b;
  std::vector<std::vector<double>> up;
  std::vector<std::vector<double>> down;
};

/// Gradients of Σ <upstream, Y> + balance_scale · load_balance_loss(f, P).
/// The balance term is skipped when the routing carries no statistics.
MoeGrads moe_backward(const MoELayer& layer, const MoeCache& cache, const Matrix& upstream,
                      double balance_scale);

struct CombinationCount {
  std::string exact;  // decimal digits
  double log10 = 0.0;
};

/// (E(E-1)/2)^(per_layer · M) for k = 2 routing. Throws OutOfRange for E < 2.
CombinationCount expert_combination_count(int num_experts, int num_layers, int per_layer_count);

}  // namespace einlin

#endif  // EINLIN_MOE_HPP
