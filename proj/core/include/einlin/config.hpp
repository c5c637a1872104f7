// Copyright 2026 The einlin Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef EINLIN_CONFIG_HPP
#define EINLIN_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "einlin/moe.hpp"
#include "einlin/structure_space.hpp"
#include "einlin/teacher.hpp"

namespace einlin {

/// kDense: native d x d matrices. kEinsum: θ-instantiated factor pairs.
/// kMoe: mixture layers.
enum class LayerKind { kDense, kEinsum, kMoe };

struct StructureSpec {
  LayerKind kind = LayerKind::kDense;
  ThetaVector theta;  // kEinsum only
  MoeConfig moe;      // kMoe only
  std::string text;   // as written in the config
};

/// "dense" selects native layers; anything else goes through parse_theta.
/// Throws ConstraintViolation or ConfigError.
StructureSpec parse_structure(std::string_view text);

/// θ whose taxonomy describes the hidden layers: dense for native layers,
/// the expert θ for mixtures.
ThetaVector representative_theta(const StructureSpec& s);

struct ExperimentConfig {
  std::string family;  // run-file prefix; letters, digits, '.', '-'
  StructureSpec structure;
  int depth = 3;  // linear layers: embed, depth-2 hidden, readout
  std::int64_t width = 64;
  std::int64_t batch_size = 128;
  std::int64_t steps = 1000;
  /// When positive, replaces `steps` with the largest step count whose
  /// training compute stays within the budget (at least one step).
  double flops_budget = 0.0;
  double base_lr = 1e-3;
  std::int64_t base_width = 64;
  std::uint64_t seed = 0;       // model initialization
  std::uint64_t data_seed = 0;  // training batches and the held-out set
  std::int64_t eval_interval = 100;
  std::int64_t eval_size = 65536;
  std::string precision = "f64";
  bool weight_norm = true;
  TeacherConfig teacher;
};

struct SweepFamily {
  std::string name;
  StructureSpec structure;
};

struct SweepConfig {
  ExperimentConfig base;
  std::vector<SweepFamily> families;
  std::vector<std::int64_t> widths;
  std::vector<std::uint64_t> seeds;
};

/// Family label derived from the structure text ("low-rank:0.5" -> "low-rank-0.5").
std::string default_family_name(const StructureSpec& s);
/// Throws ConfigError unless the name is non-empty and uses [A-Za-z0-9.-].
void check_family_name(std::string_view name);

/// Reads the fields shared by train and sweep documents into `base`.
/// Unknown keys are rejected. Throws ConfigError.
ExperimentConfig train_config_from_json(const nlohmann::json& j);
SweepConfig sweep_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ExperimentConfig& c);
nlohmann::json to_json(const StructureSpec& s);
nlohmann::json to_json(const MoeConfig& m);
nlohmann::json to_json(const TeacherConfig& t);

/// Parses a config file and checks its "kind" discriminator.
nlohmann::json load_config(const std::filesystem::path& path, std::string_view expected_kind);

/// "<family>_<width>_<seed>.jsonl".
std::string run_file_name(const ExperimentConfig& c);

}  // namespace einlin

#endif  // EINLIN_CONFIG_HPP
