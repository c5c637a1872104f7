// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_TRAIN_HPP
#define EINLIN_TRAIN_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "einlin/config.hpp"
#include "einlin/student.hpp"
#include "einlin/teacher.hpp"

namespace einlin {

/// Adam with per-tensor learning rates, no weight decay.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// Throws ShapeMismatch when grads do not line up with params.
  void step(std::vector<ParamView>& params, const std::vector<std::vector<double>>& grads);
  std::int64_t steps_taken() const noexcept { return t_; }

 private:
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct MetricsRecord {
  std::int64_t step = 0;
  std::int64_t examples_seen = 0;
  double cumulative_training_flops = 0.0;  // MACs
  double train_loss = 0.0;  // mean batch MSE since the previous record
  double eval_loss = 0.0;   // held-out MSE
  double balance_loss = 0.0;  // mean balance loss since the previous record (MoE only)
  std::string status = "ok";  // "ok" or "non_finite"
};

/// Identifies a run inside metrics files.
struct RunInfo {
  std::string family;
  std::int64_t width = 0;
  std::uint64_t seed = 0;
  std::int64_t params = 0;
  std::int64_t forward_macs = 0;
  ThetaVector theta;
  bool moe = false;
};

RunInfo run_info(const ExperimentConfig& config, const Student& student);

/// One JSONL line: the record plus run identification and the taxonomy
/// (omega, psi, nu) of the hidden-layer structure.
nlohmann::json to_json(const MetricsRecord& record, const RunInfo& info);
MetricsRecord record_from_json(const nlohmann::json& j);

/// Training steps implied by the config: `steps`, or the flops budget
/// divided by the per-step cost when a budget is set.
std::int64_t planned_steps(const ExperimentConfig& config, std::int64_t forward_macs);

struct TrainOptions {
  /// Shared training batches; used when its teacher, batch size and seed
  /// match the config, otherwise batches are generated directly.
  std::shared_ptr<BatchPool> pool;
  /// Shared held-out set; generated from the config when null.
  std::shared_ptr<const Batch> eval;
  std::function<void(const MetricsRecord&)> on_record;
};

/// Deterministic Adam training. Records at step 0, every eval_interval
/// steps and at the final step. A non-finite training loss ends the run with
/// a record whose status is "non_finite".
std::vector<MetricsRecord> train(const ExperimentConfig& config, const TrainOptions& options = {});

}  // namespace einlin

#endif  // EINLIN_TRAIN_HPP
