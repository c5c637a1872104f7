// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#include "einlin/train.hpp"

#include <cmath>
#include <limits>

#include "einlin/errors.hpp"

namespace einlin {

using nlohmann::json;

namespace {

double number_or_nan(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.at(key).get<double>();
}

}  // namespace

void Adam::step(std::vector<ParamView>& params, const std::vector<std::vector<double>>& grads) {
  if (params.size() != grads.size()) throw ShapeMismatch("Adam: gradient list does not match params");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].value.size(), 0.0);
      v_[i].assign(params[i].value.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value;
    const auto& g = grads[i];
    if (g.size() != w.size() || m_[i].size() != w.size()) {
      throw ShapeMismatch("Adam: gradient size does not match its tensor");
    }
    const double lr = params[i].lr;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

RunInfo run_info(const ExperimentConfig& config, const Student& student) {
  RunInfo info;
  info.family = config.family;
  info.width = config.width;
  info.seed = config.seed;
  info.params = student.param_count();
  info.forward_macs = student.forward_macs();
  info.theta = representative_theta(config.structure);
  info.moe = config.structure.kind == LayerKind::kMoe;
  return info;
}

json to_json(const MetricsRecord& r, const RunInfo& info) {
  const TaxonomyReport tax = taxonomy(info.theta);
  json j{{"family", info.family},
         {"width", info.width},
         {"seed", info.seed},
         {"params", info.params},
         {"forward_macs", info.forward_macs},
         {"step", r.step},
         {"examples_seen", r.examples_seen},
         {"cumulative_training_flops", r.cumulative_training_flops},
         {"train_loss", r.train_loss},
         {"eval_loss", r.eval_loss},
         {"status", r.status},
         {"omega", tax.omega},
         {"psi", tax.psi},
         {"nu", tax.nu}};
  if (info.moe) j["balance_loss"] = r.balance_loss;
  return j;
}

MetricsRecord record_from_json(const json& j) {
  try {
    MetricsRecord r;
    r.step = j.at("step").get<std::int64_t>();
    r.examples_seen = j.value("examples_seen", std::int64_t{0});
    r.cumulative_training_flops = j.at("cumulative_training_flops").get<double>();
    r.train_loss = number_or_nan(j, "train_loss");
    r.eval_loss = number_or_nan(j, "eval_loss");
    r.balance_loss = j.contains("balance_loss") ? number_or_nan(j, "balance_loss") : 0.0;
    r.status = j.value("status", std::string("ok"));
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed metrics record: ") + e.what());
  }
}

std::int64_t planned_steps(const ExperimentConfig& config, std::int64_t forward_macs) {
  if (config.flops_budget <= 0.0) return config.steps;
  const double per_step = 3.0 * static_cast<double>(forward_macs) * static_cast<double>(config.batch_size);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(config.flops_budget / per_step)));
}

std::vector<MetricsRecord> train(const ExperimentConfig& config, const TrainOptions& options) {
  Student student(config, config.teacher.input_dim);
  const std::int64_t macs = student.forward_macs();
  const std::int64_t steps = planned_steps(config, macs);
  const double step_flops = 3.0 * static_cast<double>(macs) * static_cast<double>(config.batch_size);
  const bool has_moe = config.structure.kind == LayerKind::kMoe;

  std::shared_ptr<BatchPool> pool = options.pool;
  if (!pool || !(pool->teacher().config() == config.teacher) || pool->batch() != config.batch_size ||
      pool->seed() != config.data_seed) {
    pool = std::make_shared<BatchPool>(std::make_shared<const Teacher>(config.teacher),
                                       config.batch_size, config.data_seed, 0);
  }
  std::shared_ptr<const Batch> eval = options.eval;
  if (!eval) eval = std::make_shared<const Batch>(eval_set(pool->teacher(), config.eval_size, config.data_seed));

  std::vector<MetricsRecord> records;
  auto emit = [&](MetricsRecord r) {
    if (options.on_record) options.on_record(r);
    records.push_back(std::move(r));
  };

  {
    MetricsRecord r0;
    const auto first = pool->get(0);
    r0.train_loss = student.mse(first->inputs, first->targets);
    r0.eval_loss = student.mse(eval->inputs, eval->targets);
    emit(r0);
  }

  Adam adam;
  double cumulative = 0.0;
  double loss_acc = 0.0;
  double balance_acc = 0.0;
  std::int64_t since = 0;
  for (std::int64_t step = 1; step <= steps; ++step) {
    const auto batch = pool->get(static_cast<std::uint64_t>(step - 1));
    LossAndGrads lg = student.loss_and_grads(*batch);
    cumulative += step_flops;
    if (!std::isfinite(lg.mse)) {
      MetricsRecord bad;
      bad.step = step;
      bad.examples_seen = step * config.batch_size;
      bad.cumulative_training_flops = cumulative;
      bad.train_loss = std::numeric_limits<double>::quiet_NaN();
      bad.eval_loss = std::numeric_limits<double>::quiet_NaN();
      bad.status = "non_finite";
      emit(bad);
      return records;
    }
    auto params = student.params();
    adam.step(params, lg.grads);
    if (config.weight_norm) student.weight_normalize();
    loss_acc += lg.mse;
    balance_acc += lg.balance;
    ++since;
    if (step % config.eval_interval == 0 || step == steps) {
      MetricsRecord r;
      r.step = step;
      r.examples_seen = step * config.batch_size;
      r.cumulative_training_flops = cumulative;
      r.train_loss = loss_acc / static_cast<double>(since);
      r.balance_loss = has_moe ? balance_acc / static_cast<double>(since) : 0.0;
      r.eval_loss = student.mse(eval->inputs, eval->targets);
      if (!std::isfinite(r.eval_loss)) r.status = "non_finite";
      emit(r);
      if (r.status != "ok") return records;
      loss_acc = 0.0;
      balance_acc = 0.0;
      since = 0;
    }
  }
  return records;
}

}  // namespace einlin
